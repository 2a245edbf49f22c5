//! Publish, fetch, ack, release and lease expiry on the in-memory broker,
//! driven by a manual clock so expiry is deterministic.

use vgrid::broker::Broker;
use vgrid::clock::ManualClock;
use vgrid::job::{QueueName, TaskEnvelope, TaskKind};

fn main() -> vgrid::error::Result<()> {
    let clock = ManualClock::new(0);
    let broker = Broker::with_clock(clock.clone());
    let q = QueueName::new("work")?;
    broker.create_queue(&q)?;

    // Lower required model versions are delivered first, then by task id.
    for (id, version) in [(3, 1), (1, 0), (2, 1), (0, 2)] {
        let t = TaskEnvelope::new(id, "demo", TaskKind::Map, vec![])
            .with_version(version)
            .with_max_duration(100);
        broker.publish(&q, t)?;
    }

    let a = broker.fetch(&q, "alice")?.unwrap();
    println!("alice got task {} (v{})", a.task.task_id, a.task.required_model_version);
    broker.ack(a.lease_id)?;

    let b = broker.fetch(&q, "bob")?.unwrap();
    println!("bob got task {}, hands it back", b.task.task_id);
    broker.release(b.lease_id)?;

    let c = broker.fetch(&q, "carol")?.unwrap();
    println!("carol got task {} (delivery #{})", c.task.task_id, c.task.delivery_count);

    // Carol goes quiet. Past the deadline the sweep requeues her task.
    clock.advance(100);
    println!("swept {} expired lease(s)", broker.sweep_now());
    match broker.ack(c.lease_id) {
        Ok(()) => println!("late ack accepted"),
        Err(e) => println!("late ack rejected: {e}"),
    }
    let d = broker.fetch(&q, "dave")?.unwrap();
    println!("dave got task {} (delivery #{})", d.task.task_id, d.task.delivery_count);
    broker.ack(d.lease_id)?;

    while let Some(l) = broker.fetch(&q, "erin")? {
        println!("erin got task {}", l.task.task_id);
        broker.ack(l.lease_id)?;
    }
    let st = broker.stats(&q)?;
    println!("{st:?} conserved={}", st.is_conserved());
    Ok(())
}
