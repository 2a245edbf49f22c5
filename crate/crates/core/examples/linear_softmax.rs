//! A custom task kind sharing the broker with nothing but its own handler:
//! logistic-regression gradients computed by a few workers and gathered
//! from a results queue.

use std::sync::Arc;
use std::thread;

use vgrid::broker::Broker;
use vgrid::job::QueueName;
use vgrid::linear_softmax::{self, collect_results};
use vgrid::store::DataStore;
use vgrid::worker::{run_worker, HandlerTable, WorkerConfig};

fn main() -> vgrid::error::Result<()> {
    let broker = Arc::new(Broker::new());
    let store = Arc::new(DataStore::new());
    let tasks = QueueName::new("lsm-tasks")?;
    let results = QueueName::new("lsm-results")?;
    let published = linear_softmax::publish_job(&*broker, "lsm", &tasks, &results, 12, 5, 7)?;

    let handlers = Arc::new(HandlerTable::new().with(&linear_softmax::task_kind(), linear_softmax::handler()));
    let workers: Vec<_> = (0..3)
        .map(|i| {
            let (broker, store, handlers, tasks) = (broker.clone(), store.clone(), handlers.clone(), tasks.clone());
            thread::spawn(move || {
                let mut cfg = WorkerConfig::new(format!("w{i}"));
                cfg.queues = vec![tasks];
                cfg.max_tasks = Some(4);
                run_worker(&cfg, &*broker, &*store, &handlers)
            })
        })
        .collect();
    for w in workers {
        let r = w.join().unwrap()?;
        println!("{} handled {} tasks", r.worker_id, r.tasks_done);
    }

    let got = collect_results(&*broker, &results, "collector")?;
    let mut total = vec![0.0; published[0].weights.len()];
    let mut loss = 0.0;
    for r in got.values() {
        for (t, g) in total.iter_mut().zip(&r.gradient) {
            *t += g;
        }
        loss += r.loss_sum;
    }
    let rows: usize = published.iter().map(|t| t.y.len()).sum();
    println!("{} results, mean loss {:.4}", got.len(), loss / rows as f64);
    println!("summed gradient {:?}", total.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>());
    Ok(())
}
