use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{run_experiment, ChurnSchedule, Experiment, ExperimentResult};
use crate::error::{Error, Result};
use crate::trainer::sequential_train;
use crate::worker::RunEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Sync,
    /// Worker `i` joins `i * spacing_ms` after the first.
    Async { spacing_ms: u64 },
}

impl StartMode {
    pub fn name(&self) -> &'static str {
        match self {
            StartMode::Sync => "sync",
            StartMode::Async { .. } => "async",
        }
    }

    pub fn schedule(&self, n: usize) -> ChurnSchedule {
        match *self {
            StartMode::Sync => ChurnSchedule::sync_start(n),
            StartMode::Async { spacing_ms } => ChurnSchedule::staggered(n, spacing_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub mode: String,
    pub workers: usize,
    pub runtime_ms: f64,
    /// `T(1) / T(n)` within the same mode; empty without a one-worker run.
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
    /// Sequential runtime over `T(n)`.
    pub absolute_speedup: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub sequential_ms: Option<f64>,
    pub sequential_final_loss: Option<f64>,
}

impl ScalingReport {
    pub fn row(&self, mode: &str, workers: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.mode == mode && r.workers == workers)
    }

    /// Header `mode,workers,runtime_ms,speedup,efficiency,absolute_speedup,final_loss`;
    /// missing values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fills speedup, efficiency and absolute speedup from the runtimes.
    fn derive(&mut self) {
        let seq = self.sequential_ms;
        let baselines: Vec<(String, f64)> = self
            .rows
            .iter()
            .filter(|r| r.workers == 1)
            .map(|r| (r.mode.clone(), r.runtime_ms))
            .collect();
        for r in &mut self.rows {
            let t1 = baselines.iter().find(|(m, _)| *m == r.mode).map(|(_, t)| *t);
            r.speedup = t1.map(|t1| if r.workers == 1 { 1.0 } else { t1 / r.runtime_ms });
            r.efficiency = r.speedup.map(|s| s / r.workers as f64);
            r.absolute_speedup = seq.map(|s| s / r.runtime_ms);
        }
    }
}

/// Header `worker_id,task_id,kind,t_start_ms,t_end_ms,outcome`.
pub fn write_events_csv<W: Write>(out: W, events: &[RunEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub struct SuiteOutput {
    pub report: ScalingReport,
    pub runs: Vec<(StartMode, ExperimentResult)>,
    pub sequential_elapsed: Option<Duration>,
}

/// One experiment per (mode, worker count), optionally preceded by a
/// sequential run for the absolute speedup column.
pub fn scaling_suite(
    exp: &Experiment,
    counts: &[usize],
    modes: &[StartMode],
    with_sequential: bool,
) -> Result<SuiteOutput> {
    let mut report = ScalingReport::default();
    let mut runs = Vec::new();
    if counts.is_empty() {
        return Ok(SuiteOutput {
            report,
            runs,
            sequential_elapsed: None,
        });
    }
    let mut sequential_elapsed = None;
    if with_sequential {
        let seq = sequential_train(&exp.training, &exp.corpus, exp.initial.clone())?;
        report.sequential_ms = Some(seq.elapsed.as_secs_f64() * 1e3);
        report.sequential_final_loss = seq.final_loss;
        sequential_elapsed = Some(seq.elapsed);
    }
    for mode in modes {
        for &n in counts {
            let res = run_experiment(exp, &mode.schedule(n))?;
            report.rows.push(ScalingRow {
                mode: mode.name().into(),
                workers: n,
                runtime_ms: res.runtime_ms,
                speedup: None,
                efficiency: None,
                absolute_speedup: None,
                final_loss: res.final_loss,
            });
            runs.push((*mode, res));
        }
    }
    report.derive();
    Ok(SuiteOutput {
        report,
        runs,
        sequential_elapsed,
    })
}
