//! The data server: last-write-wins plain keys for dataset material, and
//! versioned compare-and-set records for the shared model.
//!
//! A versioned key starts at version 0 and every accepted write bumps it by
//! exactly one. Writers that lose the race get [`Error::VersionConflict`]
//! and must discard their update. Readers can park on
//! [`DataStore::wait_for_version`] until a version shows up.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedRecord {
    pub key: String,
    pub version: u64,
    pub payload: Arc<Vec<u8>>,
}

#[derive(Default)]
struct StoreState {
    plain: HashMap<String, Arc<Vec<u8>>>,
    versioned: HashMap<String, VersionedRecord>,
}

#[derive(Default)]
pub struct DataStore {
    state: Mutex<StoreState>,
    changed: Condvar,
}

impl DataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_plain(&self, key: &str, payload: Vec<u8>) {
        self.state
            .lock()
            .plain
            .insert(key.to_string(), Arc::new(payload));
    }

    pub fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>> {
        self.state
            .lock()
            .plain
            .get(key)
            .cloned()
            .ok_or_else(|| Error::NoSuchKey(key.to_string()))
    }

    pub fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()> {
        let mut st = self.state.lock();
        let current = st.versioned.get(key).map(|r| r.version);
        let accepted = match current {
            None => version == 0,
            Some(cur) => version == cur + 1,
        };
        if !accepted {
            return Err(Error::VersionConflict {
                key: key.to_string(),
                attempted: version,
                current,
            });
        }
        st.versioned.insert(
            key.to_string(),
            VersionedRecord {
                key: key.to_string(),
                version,
                payload: Arc::new(payload),
            },
        );
        drop(st);
        self.changed.notify_all();
        Ok(())
    }

    pub fn get_versioned(&self, key: &str) -> Result<VersionedRecord> {
        self.state
            .lock()
            .versioned
            .get(key)
            .cloned()
            .ok_or_else(|| Error::NoSuchKey(key.to_string()))
    }

    pub fn current_version(&self, key: &str) -> Option<u64> {
        self.state.lock().versioned.get(key).map(|r| r.version)
    }

    /// Blocks until `key` reaches at least `min_version`. A key that never
    /// appears before the deadline is reported as [`Error::Timeout`].
    pub fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        loop {
            if let Some(rec) = st.versioned.get(key) {
                if rec.version >= min_version {
                    return Ok(rec.clone());
                }
            }
            if self.changed.wait_until(&mut st, deadline).timed_out() {
                return match st.versioned.get(key) {
                    Some(rec) if rec.version >= min_version => Ok(rec.clone()),
                    _ => Err(Error::Timeout),
                };
            }
        }
    }

    /// Removes every plain and versioned key starting with `prefix`.
    pub fn delete_prefix(&self, prefix: &str) -> usize {
        let mut st = self.state.lock();
        let before = st.plain.len() + st.versioned.len();
        st.plain.retain(|k, _| !k.starts_with(prefix));
        st.versioned.retain(|k, _| !k.starts_with(prefix));
        before - st.plain.len() - st.versioned.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::thread;

    #[test]
    fn plain_put_get_overwrite() {
        let s = DataStore::new();
        s.put_plain("k", b"one".to_vec());
        assert_eq!(*s.get_plain("k").unwrap(), b"one");
        s.put_plain("k", b"two".to_vec());
        assert_eq!(*s.get_plain("k").unwrap(), b"two");
        assert_eq!(s.get_plain("missing"), Err(Error::NoSuchKey("missing".into())));
    }

    #[test]
    fn ten_thousand_keys() {
        let s = DataStore::new();
        let mut oracle = HashMap::new();
        for i in 0..10_000u32 {
            let v = (i.wrapping_mul(2654435761)).to_le_bytes().to_vec();
            s.put_plain(&format!("key-{i}"), v.clone());
            oracle.insert(format!("key-{i}"), v);
        }
        for (k, v) in &oracle {
            assert_eq!(&*s.get_plain(k).unwrap(), v);
        }
    }

    #[test]
    fn sequenced_writers_last_write_wins() {
        let s = Arc::new(DataStore::new());
        let mut last = Vec::new();
        for round in 0..50u8 {
            let handles: Vec<_> = (0..4u8)
                .map(|w| {
                    let s = s.clone();
                    thread::spawn(move || {
                        s.put_plain("shared", vec![round, w]);
                        vec![round, w]
                    })
                })
                .collect();
            let written: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            let read = s.get_plain("shared").unwrap();
            assert!(written.contains(&read));
            // A write that happens strictly after all others is what we read.
            last = vec![round, 99];
            s.put_plain("shared", last.clone());
            assert_eq!(*s.get_plain("shared").unwrap(), last);
        }
        assert_eq!(*s.get_plain("shared").unwrap(), last);
    }

    #[test]
    fn cas_semantics() {
        let s = DataStore::new();
        assert!(matches!(s.put_versioned("m", 1, vec![]), Err(Error::VersionConflict { .. })));
        s.put_versioned("m", 0, b"v0".to_vec()).unwrap();
        let r = s.get_versioned("m").unwrap();
        assert_eq!((r.version, r.payload.as_slice()), (0, &b"v0"[..]));
        s.put_versioned("m", 1, b"v1".to_vec()).unwrap();
        assert_eq!(
            s.put_versioned("m", 1, b"again".to_vec()),
            Err(Error::VersionConflict {
                key: "m".into(),
                attempted: 1,
                current: Some(1)
            })
        );
        for k in 2..=10 {
            s.put_versioned("m", k, vec![k as u8]).unwrap();
        }
        assert_eq!(s.get_versioned("m").unwrap().version, 10);
        assert!(matches!(s.get_versioned("x"), Err(Error::NoSuchKey(_))));
    }

    #[test]
    fn concurrent_cas_single_winner() {
        for _ in 0..100 {
            let s = Arc::new(DataStore::new());
            s.put_versioned("m", 0, vec![]).unwrap();
            let handles: Vec<_> = (0..8)
                .map(|i| {
                    let s = s.clone();
                    thread::spawn(move || s.put_versioned("m", 1, vec![i]).is_ok())
                })
                .collect();
            let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
            assert_eq!(wins, 1);
        }
    }

    #[test]
    fn wait_returns_immediately_when_satisfied() {
        let s = DataStore::new();
        s.put_versioned("m", 0, vec![]).unwrap();
        s.put_versioned("m", 1, vec![]).unwrap();
        let t = Instant::now();
        assert_eq!(s.wait_for_version("m", 1, Duration::from_secs(5)).unwrap().version, 1);
        assert!(t.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn wait_wakes_on_write() {
        let s = Arc::new(DataStore::new());
        s.put_versioned("m", 0, vec![]).unwrap();
        let writer = {
            let s = s.clone();
            thread::spawn(move || {
                thread::sleep(Duration::from_millis(50));
                s.put_versioned("m", 1, vec![1]).unwrap();
            })
        };
        let t = Instant::now();
        let rec = s.wait_for_version("m", 1, Duration::from_millis(1000)).unwrap();
        assert!(rec.version >= 1);
        assert!(t.elapsed() < Duration::from_millis(1000));
        writer.join().unwrap();
    }

    #[test]
    fn unsatisfiable_wait_times_out() {
        let s = DataStore::new();
        for v in 0..=2 {
            s.put_versioned("m", v, vec![]).unwrap();
        }
        let t = Instant::now();
        assert_eq!(s.wait_for_version("m", 5, Duration::from_millis(80)), Err(Error::Timeout));
        assert!(t.elapsed() >= Duration::from_millis(80));
        assert_eq!(s.wait_for_version("never", 0, Duration::from_millis(10)), Err(Error::Timeout));
    }

    #[test]
    fn delete_prefix_scopes_to_job() {
        let s = DataStore::new();
        s.put_plain("a/corpus", vec![]);
        s.put_plain("b/corpus", vec![]);
        s.put_versioned("a/model", 0, vec![]).unwrap();
        assert_eq!(s.delete_prefix("a/"), 2);
        assert!(s.get_plain("b/corpus").is_ok());
    }
}
