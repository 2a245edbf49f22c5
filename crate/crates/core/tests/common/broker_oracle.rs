//! A plain reference model of the broker, and a driver that replays random
//! operation sequences against both and reports the first divergence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgrid::broker::Broker;
use vgrid::clock::ManualClock;
use vgrid::error::Error;
use vgrid::job::{QueueName, TaskEnvelope, TaskKind};

#[derive(Clone, Debug)]
struct Task {
    id: u64,
    version: u64,
    job: String,
    duration: u64,
    deliveries: u32,
}

struct Lease {
    queue: usize,
    key: (u64, u64, u64),
    task: Task,
    deadline: u64,
}

#[derive(Default, Clone, Copy, Debug, PartialEq)]
pub struct Counts {
    pub published: u64,
    pub acked: u64,
    pub purged: u64,
    pub redelivered: u64,
}

#[derive(Default)]
struct Oracle {
    pending: Vec<BTreeMap<(u64, u64, u64), Task>>,
    leases: BTreeMap<u64, Lease>,
    counts: Vec<Counts>,
    next_seq: u64,
    next_lease: u64,
}

impl Oracle {
    fn new(queues: usize) -> Self {
        Oracle {
            pending: vec![BTreeMap::new(); queues],
            counts: vec![Counts::default(); queues],
            next_lease: 1,
            ..Default::default()
        }
    }

    fn leased(&self, q: usize) -> usize {
        self.leases.values().filter(|l| l.queue == q).count()
    }

    fn requeue(&mut self, id: u64) {
        let l = self.leases.remove(&id).unwrap();
        self.counts[l.queue].redelivered += 1;
        self.pending[l.queue].insert(l.key, l.task);
    }
}

#[derive(Default, Debug, Clone, Copy)]
pub struct Summary {
    pub ops: usize,
    pub fetches: usize,
    pub acks: usize,
    pub expiries: usize,
    pub releases: usize,
    pub purges: usize,
}

/// Runs `n_ops` random operations on two queues, checking after each one
/// that the broker agrees with the oracle on every observable: fetched
/// task and its priority, delivery counts, deadlines, errors, depths, and
/// the conservation identity. Also checks that no task is ever leased
/// twice at once.
pub fn run(seed: u64, n_ops: usize) -> Result<Summary, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = ManualClock::new(1_000);
    let broker = Broker::with_clock(clock.clone());
    let names = [QueueName::new("A").unwrap(), QueueName::new("B").unwrap()];
    for n in &names {
        broker.create_queue(n).unwrap();
    }
    let mut o = Oracle::new(names.len());
    let mut now = 1_000u64;
    let mut next_task = 0u64;
    let mut issued: Vec<u64> = Vec::new();
    let mut s = Summary::default();

    for step in 0..n_ops {
        let q = rng.gen_range(0..names.len());
        let fail = |what: String| Err(format!("op {step} (seed {seed}): {what}"));
        match rng.gen_range(0..100) {
            0..=29 => {
                let t = Task {
                    id: next_task,
                    version: rng.gen_range(0..6),
                    job: format!("j{}", rng.gen_range(0..3)),
                    duration: rng.gen_range(1..60),
                    deliveries: 0,
                };
                next_task += 1;
                let env = TaskEnvelope::new(t.id, t.job.clone(), TaskKind::Map, vec![t.id as u8])
                    .with_version(t.version)
                    .with_max_duration(t.duration);
                broker.publish(&names[q], env).map_err(|e| e.to_string())?;
                o.pending[q].insert((t.version, t.id, o.next_seq), t);
                o.next_seq += 1;
                o.counts[q].published += 1;
            }
            30..=54 => {
                s.fetches += 1;
                let got = broker.fetch(&names[q], "w").map_err(|e| e.to_string())?;
                let want = o.pending[q].pop_first();
                match (got, want) {
                    (None, None) => {}
                    (Some(l), Some((key, mut t))) => {
                        t.deliveries += 1;
                        if l.task.task_id != t.id || l.task.required_model_version != t.version {
                            return fail(format!("fetched task {} but expected {}", l.task.task_id, t.id));
                        }
                        if l.task.delivery_count != t.deliveries {
                            return fail(format!("delivery count {} != {}", l.task.delivery_count, t.deliveries));
                        }
                        if l.deadline != now + t.duration || l.lease_id != o.next_lease {
                            return fail("lease deadline or id differs".into());
                        }
                        o.next_lease += 1;
                        issued.push(l.lease_id);
                        o.leases.insert(
                            l.lease_id,
                            Lease {
                                queue: q,
                                key,
                                deadline: now + t.duration,
                                task: t,
                            },
                        );
                    }
                    (g, w) => return fail(format!("fetch returned {:?}, oracle {:?}", g.map(|l| l.task.task_id), w.map(|(_, t)| t.id))),
                }
            }
            55..=74 => {
                // Mostly live leases, sometimes stale or never-issued ids.
                let roll = rng.gen_range(0..100);
                let id = if roll < 80 && !o.leases.is_empty() {
                    *o.leases.keys().nth(rng.gen_range(0..o.leases.len())).unwrap()
                } else if roll < 95 && !issued.is_empty() {
                    issued[rng.gen_range(0..issued.len())]
                } else {
                    rng.gen_range(10_000_000..10_000_100)
                };
                let release = rng.gen_bool(0.2);
                let got = if release { broker.release(id) } else { broker.ack(id) };
                let want = match o.leases.get(&id) {
                    None => Err(Error::UnknownLease(id)),
                    Some(_) if release => {
                        o.requeue(id);
                        s.releases += 1;
                        Ok(())
                    }
                    Some(l) if now >= l.deadline => {
                        o.requeue(id);
                        s.expiries += 1;
                        Err(Error::UnknownLease(id))
                    }
                    Some(_) => {
                        let l = o.leases.remove(&id).unwrap();
                        o.counts[l.queue].acked += 1;
                        s.acks += 1;
                        Ok(())
                    }
                };
                if got != want {
                    return fail(format!("ack/release {id}: {got:?} vs {want:?}"));
                }
            }
            75..=89 => {
                now += rng.gen_range(0..25);
                clock.set(now);
            }
            90..=97 => {
                let swept = broker.sweep_now();
                let expired: Vec<u64> = o.leases.iter().filter(|(_, l)| l.deadline <= now).map(|(id, _)| *id).collect();
                for id in &expired {
                    o.requeue(*id);
                }
                s.expiries += expired.len();
                if swept != expired.len() {
                    return fail(format!("swept {swept}, oracle {}", expired.len()));
                }
            }
            _ => {
                let job = format!("j{}", rng.gen_range(0..3));
                s.purges += 1;
                let removed = broker.purge_job(&job);
                let mut want = 0;
                for (qi, p) in o.pending.iter_mut().enumerate() {
                    let before = p.len();
                    p.retain(|_, t| t.job != job);
                    o.counts[qi].purged += (before - p.len()) as u64;
                    want += before - p.len();
                }
                let doomed: Vec<u64> = o.leases.iter().filter(|(_, l)| l.task.job == job).map(|(id, _)| *id).collect();
                for id in doomed {
                    let l = o.leases.remove(&id).unwrap();
                    o.counts[l.queue].purged += 1;
                    want += 1;
                }
                if removed != want {
                    return fail(format!("purged {removed}, oracle {want}"));
                }
            }
        }

        for (qi, n) in names.iter().enumerate() {
            let st = broker.stats(n).map_err(|e| e.to_string())?;
            let c = o.counts[qi];
            let leased = o.leased(qi) as u64;
            if st.pending != o.pending[qi].len() as u64
                || st.leased != leased
                || st.published != c.published
                || st.acked != c.acked
                || st.purged != c.purged
                || st.redelivered != c.redelivered
            {
                return fail(format!("queue {n}: broker {st:?}, oracle {c:?} pending {} leased {leased}", o.pending[qi].len()));
            }
            if !st.is_conserved() {
                return fail(format!("queue {n} not conserved: {st:?}"));
            }
        }
        let mut live = broker.leased_task_ids();
        let total = live.len();
        live.sort();
        live.dedup();
        if live.len() != total {
            return fail("a task is leased twice".into());
        }
        s.ops += 1;
    }
    Ok(s)
}
