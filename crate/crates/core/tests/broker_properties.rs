mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgrid::broker::Broker;
use vgrid::clock::ManualClock;
use vgrid::job::{QueueName, TaskEnvelope, TaskKind};

use common::broker_oracle;

#[test]
fn hundred_thousand_ops_agree_with_oracle() {
    let s = broker_oracle::run(20_240_601, 100_000).unwrap();
    assert_eq!(s.ops, 100_000);
    println!("{s:?}");
    // The mix actually exercised every path.
    assert!(s.acks > 1_000 && s.expiries > 1_000 && s.releases > 100 && s.purges > 100);
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(48)
    })]

    #[test]
    fn random_sequences_agree_with_oracle(seed in any::<u64>(), n in 1usize..3_000) {
        broker_oracle::run(seed, n).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn single_worker_fetch_order_is_the_sort_order(
        tasks in prop::collection::vec((0u64..8, 0u64..1_000), 0..200)
    ) {
        let b = Broker::new();
        let q = QueueName::initial();
        b.create_queue(&q).unwrap();
        for (v, id) in &tasks {
            b.publish(&q, TaskEnvelope::new(*id, "j", TaskKind::Map, vec![]).with_version(*v)).unwrap();
        }
        let mut want = tasks.clone();
        want.sort();
        let mut got = Vec::new();
        while let Some(l) = b.fetch(&q, "w").unwrap() {
            got.push((l.task.required_model_version, l.task.task_id));
            b.ack(l.lease_id).unwrap();
        }
        prop_assert_eq!(got, want);
    }
}

/// Workers that abandon a random share of their leases still get every task
/// acknowledged exactly once, as long as someone keeps working.
#[test]
fn at_least_once_under_abandonment() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clock = ManualClock::new(0);
        let b = Broker::with_clock(clock.clone());
        let q = QueueName::initial();
        b.create_queue(&q).unwrap();
        let n = 300u64;
        for id in 0..n {
            b.publish(&q, TaskEnvelope::new(id, "j", TaskKind::Map, vec![]).with_version(id % 5).with_max_duration(10))
                .unwrap();
        }
        let mut acked: BTreeMap<u64, usize> = BTreeMap::new();
        let mut rounds = 0;
        while acked.len() < n as usize {
            rounds += 1;
            assert!(rounds < 100_000, "no progress");
            match b.fetch(&q, "w").unwrap() {
                Some(l) if rng.gen_bool(0.4) => {
                    // Abandoned: lease left to expire.
                    let _ = l;
                }
                Some(l) => {
                    if rng.gen_bool(0.1) {
                        clock.advance(rng.gen_range(0..20));
                    }
                    if b.ack(l.lease_id).is_ok() {
                        *acked.entry(l.task.task_id).or_default() += 1;
                    }
                }
                None => {}
            }
            clock.advance(1);
            b.sweep_now();
        }
        assert!(acked.values().all(|&c| c == 1));
        let s = b.stats(&q).unwrap();
        assert_eq!((s.acked, s.pending, s.leased), (n, 0, 0));
        assert!(s.redelivered > 0);
    }
}
