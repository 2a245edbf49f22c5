//! A coordinator serving the broker and datastore over TCP, a job planned
//! through a remote client, and workers that only talk over the network.

use std::thread;
use std::time::Duration;

use vgrid::client::StoreClient;
use vgrid::job::JobSpec;
use vgrid::nn::ModelSnapshot;
use vgrid::trainer::{plan_job, synthetic_source, training_handlers, TrainingConfig};
use vgrid::wire::{Coordinator, CoordinatorConfig, RemoteClient, Role};
use vgrid::worker::{run_worker, WorkerConfig};

fn main() -> vgrid::error::Result<()> {
    let coord = Coordinator::start(&CoordinatorConfig {
        role: Role::Both,
        tcp: Some("127.0.0.1:0".into()),
        ws: None,
        sweep_interval: Duration::from_millis(20),
    })?;
    let addr = coord.tcp_addr().unwrap().to_string();
    println!("coordinator on {addr}");

    let cfg = TrainingConfig {
        batch_size: 16,
        minibatch_size: 4,
        minibatches_to_accumulate: 4,
        examples_per_epoch: 64,
        epochs: 2,
        sample_length: 10,
        hidden_units: 6,
        ..TrainingConfig::reference()
    };
    let client = RemoteClient::connect_with_poll(&addr, Duration::from_millis(5))?;
    let spec = JobSpec::new("net", cfg);
    let plan = plan_job(&spec, &synthetic_source(8_000, 2), None, &*client, &*client)?;
    println!("planned {} steps", plan.meta.total_steps);

    let workers: Vec<_> = (0..3)
        .map(|i| {
            let addr = addr.clone();
            thread::spawn(move || {
                let link = RemoteClient::connect_with_poll(addr, Duration::from_millis(5))?;
                let mut wc = WorkerConfig::new(format!("remote-{i}"));
                wc.watch_job = Some("net".into());
                run_worker(&wc, &*link, &*link, &training_handlers())
            })
        })
        .collect();
    for w in workers {
        let r = w.join().unwrap()?;
        println!("{}: {} tasks, exit {:?}", r.worker_id, r.tasks_done, r.exit);
    }

    let rec = client.get_versioned(&spec.model_key())?;
    let snap = ModelSnapshot::decode(&rec.payload)?;
    println!("final model v{} with {} parameters", rec.version, snap.params.len());
    Ok(())
}
