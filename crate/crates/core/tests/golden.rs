//! Serialized forms checked against files written by an earlier process.
//! Regenerate with `VGRID_BLESS=1 cargo test --test golden` after a
//! deliberate format change.

use std::fs;
use std::path::PathBuf;

use serde_json::json;
use vgrid::job::{encode_envelope, TaskEnvelope, TaskKind};
use vgrid::nn::{init_params, ModelConfig, ModelSnapshot};
use vgrid::trainer::{build_dataset, synthetic_source, TrainingConfig};

fn check(name: &str, bytes: &[u8]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("VGRID_BLESS").is_some() {
        fs::write(&path, bytes).unwrap();
        return;
    }
    let want = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(want == bytes, "{name} differs from the golden file");
}

#[test]
fn initial_snapshot_bytes() {
    // Initialization uses only the seeded RNG and sqrt, so it is exact on
    // any IEEE-754 platform.
    let cfg = ModelConfig {
        vocab_size: 6,
        hidden_units: 3,
        num_layers: 2,
        sample_length: 4,
    };
    let snap = ModelSnapshot::new(init_params(cfg, 17).unwrap(), TrainingConfig::reference().optimizer());
    let bytes = snap.encode();
    assert_eq!(ModelSnapshot::decode(&bytes).unwrap(), snap);
    check("snapshot.bin", &bytes);
}

#[test]
fn sample_table() {
    let cfg = TrainingConfig {
        examples_per_epoch: 64,
        epochs: 2,
        sample_length: 12,
        batch_size: 16,
        minibatch_size: 4,
        minibatches_to_accumulate: 4,
        ..TrainingConfig::reference()
    };
    let ds = build_dataset(&synthetic_source(3_000, 9), &cfg).unwrap();
    let samples: Vec<_> = [0, ds.len() - 1]
        .iter()
        .map(|&i| {
            let s = ds.sample(i);
            json!({ "index": i, "input": s.input, "target": s.target })
        })
        .collect();
    let table = json!({
        "vocab": ds.vocab().iter().collect::<String>(),
        "starts": ds.starts(),
        "samples": samples,
    });
    check("dataset.json", serde_json::to_string_pretty(&table).unwrap().as_bytes());
}

#[test]
fn envelope_bytes() {
    let env = TaskEnvelope::new(41, "job", TaskKind::Custom("map-result".into()), vec![0, 1, 254, 255])
        .with_version(7)
        .with_max_duration(2_500);
    check("envelope.json", &encode_envelope(&env));
}
