use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use vgrid::client::LatencyModel;
use vgrid::error::{Error, Result};
use vgrid::harness::{scaling_suite, write_events_csv, Experiment, StartMode};
use vgrid::job::{JobSpec, QueueName};
use vgrid::trainer::{plan_job, sequential_train, synthetic_source, training_handlers, write_trace_csv, TrainingConfig};
use vgrid::wire::{Coordinator, CoordinatorConfig, RemoteClient, Role};
use vgrid::worker::{run_worker, WorkerConfig};

#[derive(Parser)]
#[command(name = "vgrid", version, about = "Volunteer-style distributed training over a task queue")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the broker and/or datastore over TCP and WebSocket.
    Coordinator {
        #[arg(long, value_enum, default_value = "both")]
        role: Role,
        #[arg(long, default_value = "127.0.0.1:7070")]
        tcp: String,
        /// Also serve WebSocket clients here.
        #[arg(long)]
        ws: Option<String>,
        #[arg(long, default_value_t = 50)]
        sweep_ms: u64,
    },
    /// Upload a job to a running coordinator.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        broker: String,
        #[arg(long)]
        store: String,
    },
    /// Join a job as a worker.
    Worker {
        #[arg(long)]
        id: String,
        #[arg(long)]
        broker: String,
        #[arg(long)]
        store: String,
        #[arg(long, value_delimiter = ',', default_value = "InitialQueue")]
        queues: Vec<String>,
        #[arg(long)]
        max_tasks: Option<usize>,
        #[arg(long)]
        max_seconds: Option<f64>,
        /// Leave once this job has finished.
        #[arg(long)]
        job: Option<String>,
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
    /// Train in a single process and write the loss trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run in-process scaling experiments.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        workers: Vec<usize>,
        #[arg(long, value_enum, default_value = "sync")]
        mode: Mode,
        /// Worker join spacing in async mode.
        #[arg(long, default_value_t = 200)]
        spacing_ms: u64,
        /// Per-request delay: `N` or a uniform range `A..B`.
        #[arg(long, default_value = "0")]
        latency_ms: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also time a sequential run for the absolute speedup column.
        #[arg(long)]
        sequential: bool,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        /// Directory for one events CSV per run.
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sync,
    Async,
    Both,
}

/// A job file: the training configuration plus where the corpus lives.
#[derive(Deserialize)]
struct JobFile {
    #[serde(default = "default_job_id")]
    job_id: String,
    #[serde(flatten)]
    training: TrainingConfig,
    /// Read as UTF-8 text; without it a synthetic corpus is generated.
    corpus_path: Option<PathBuf>,
    #[serde(default = "default_corpus_bytes")]
    synthetic_corpus_bytes: usize,
}

fn default_job_id() -> String {
    "job".into()
}

fn default_corpus_bytes() -> usize {
    50_000
}

fn load_job(path: &Path) -> Result<(JobFile, String)> {
    let text = fs::read_to_string(path)?;
    let job: JobFile = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let corpus = match &job.corpus_path {
        Some(p) => {
            let p = if p.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            fs::read_to_string(p)?
        }
        None => synthetic_source(job.synthetic_corpus_bytes, job.training.shuffle_seed),
    };
    Ok((job, corpus))
}

fn parse_latency(s: &str) -> Result<LatencyModel> {
    let num = |x: &str| {
        x.trim()
            .parse::<u64>()
            .map_err(|_| Error::InvalidConfig(format!("bad latency `{s}`")))
    };
    Ok(match s.split_once("..") {
        Some((a, b)) => LatencyModel::Uniform {
            min_ms: num(a)?,
            max_ms: num(b)?,
        },
        None => match num(s)? {
            0 => LatencyModel::None,
            ms => LatencyModel::Fixed { ms },
        },
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Coordinator { role, tcp, ws, sweep_ms } => {
            let c = Coordinator::start(&CoordinatorConfig {
                role,
                tcp: Some(tcp),
                ws,
                sweep_interval: Duration::from_millis(sweep_ms),
            })?;
            println!("tcp {}", c.tcp_addr().expect("tcp"));
            if let Some(a) = c.ws_addr() {
                println!("ws {a}");
            }
            loop {
                thread::park();
            }
        }
        Cmd::Plan { config, broker, store } => {
            let (job, corpus) = load_job(&config)?;
            let b = RemoteClient::connect(broker)?;
            let s = RemoteClient::connect(store)?;
            let spec = JobSpec::new(job.job_id, job.training);
            let plan = plan_job(&spec, &corpus, None, &*b, &*s)?;
            println!(
                "job {}: {} steps, {} map + {} reduce tasks",
                spec.job_id,
                plan.meta.total_steps,
                plan.map_tasks,
                plan.reduce_tasks
            );
            Ok(())
        }
        Cmd::Worker {
            id,
            broker,
            store,
            queues,
            max_tasks,
            max_seconds,
            job,
            events_out,
        } => {
            let b = RemoteClient::connect(broker)?;
            let s = RemoteClient::connect(store)?;
            let mut cfg = WorkerConfig::new(id);
            cfg.queues = queues.into_iter().map(QueueName::new).collect::<Result<_>>()?;
            cfg.max_tasks = max_tasks;
            cfg.max_wall = max_seconds.map(Duration::from_secs_f64);
            cfg.watch_job = job;
            let handlers =
                training_handlers().with(&vgrid::linear_softmax::task_kind(), vgrid::linear_softmax::handler());
            let report = run_worker(&cfg, &*b, &*s, &handlers)?;
            println!(
                "{}: {} done, {} failed, exit {:?}",
                report.worker_id, report.tasks_done, report.tasks_failed, report.exit
            );
            if let Some(p) = events_out {
                write_events_csv(fs::File::create(p)?, &report.events)?;
            }
            Ok(())
        }
        Cmd::Train { config, trace_out } => {
            let (job, corpus) = load_job(&config)?;
            let run = sequential_train(&job.training, &corpus, None)?;
            println!(
                "{} steps in {:.1}s, final loss {}",
                run.trace.len(),
                run.elapsed.as_secs_f64(),
                run.final_loss.map_or("n/a".into(), |l| format!("{l:.6}"))
            );
            if let Some(p) = trace_out {
                write_trace_csv(fs::File::create(p)?, &run.trace)?;
            }
            Ok(())
        }
        Cmd::Bench {
            config,
            workers,
            mode,
            spacing_ms,
            latency_ms,
            seed,
            sequential,
            out,
            events,
        } => {
            let (job, corpus) = load_job(&config)?;
            let mut exp = Experiment::new(job.training, corpus);
            exp.job_id = job.job_id;
            exp.latency = parse_latency(&latency_ms)?;
            exp.latency_seed = seed;
            let modes = match mode {
                Mode::Sync => vec![StartMode::Sync],
                Mode::Async => vec![StartMode::Async { spacing_ms }],
                Mode::Both => vec![StartMode::Sync, StartMode::Async { spacing_ms }],
            };
            let suite = scaling_suite(&exp, &workers, &modes, sequential)?;
            for r in &suite.report.rows {
                println!(
                    "{:>5} n={:<3} T={:>9.1}ms S={} E={} loss={}",
                    r.mode,
                    r.workers,
                    r.runtime_ms,
                    r.speedup.map_or("-".into(), |s| format!("{s:.2}")),
                    r.efficiency.map_or("-".into(), |e| format!("{e:.2}")),
                    r.final_loss.map_or("-".into(), |l| format!("{l:.6}")),
                );
            }
            suite.report.write_csv(fs::File::create(&out)?)?;
            if let Some(dir) = events {
                fs::create_dir_all(&dir)?;
                for (m, res) in &suite.runs {
                    let p = dir.join(format!("{}-{}.csv", m.name(), res.workers));
                    write_events_csv(fs::File::create(p)?, &res.events)?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
