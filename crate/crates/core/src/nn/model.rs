use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rmsprop::{OptimizerState, RmsPropConfig};
use super::{f64s_from_le_bytes, f64s_to_le_bytes, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_units: usize,
    pub num_layers: usize,
    pub sample_length: usize,
}

impl ModelConfig {
    /// Two stacked layers of 50 cells over 40-character windows.
    pub fn reference(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_units: 50,
            num_layers: 2,
            sample_length: 40,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.vocab_size < 2 {
            return Err(NnError::InvalidConfig("vocab_size must be at least 2".into()));
        }
        if self.hidden_units == 0 || self.num_layers == 0 || self.sample_length == 0 {
            return Err(NnError::InvalidConfig(
                "hidden_units, num_layers and sample_length must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.vocab_size
        } else {
            self.hidden_units
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Position of every named tensor inside the flattened parameter vector.
///
/// Per LSTM layer `l`: `lstm{l}/kernel [in, 4H]`, `lstm{l}/recurrent_kernel
/// [H, 4H]`, `lstm{l}/bias [4H]`; then `dense/kernel [H, V]` and
/// `dense/bias [V]`. Inside every `4H` block the gates are ordered input,
/// forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_units;
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec { name, shape, offset };
            offset += spec.len();
            entries.push(spec);
        };
        for l in 0..cfg.num_layers {
            push(format!("lstm{l}/kernel"), vec![cfg.layer_input_dim(l), 4 * h]);
            push(format!("lstm{l}/recurrent_kernel"), vec![h, 4 * h]);
            push(format!("lstm{l}/bias"), vec![4 * h]);
        }
        push("dense/kernel".into(), vec![h, cfg.vocab_size]);
        push("dense/bias".into(), vec![cfg.vocab_size]);
        Layout {
            entries,
            total: offset,
        }
    }

    pub fn entries(&self) -> &[TensorSpec] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// FNV-1a over the names and shapes, so two processes agree on the
    /// layout before trusting each other's bytes.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            let desc = format!("{}:{:?};", e.name, e.shape);
            for b in desc.bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(PRIME);
            }
        }
        hash
    }
}

/// Offsets of one LSTM layer's tensors, resolved once per pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub in_dim: usize,
    pub kernel: usize,
    pub recurrent: usize,
    pub bias: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub layers: Vec<LayerOffsets>,
    pub dense_kernel: usize,
    pub dense_bias: usize,
}

impl Offsets {
    pub fn new(cfg: &ModelConfig) -> Self {
        let layout = cfg.layout();
        let at = |name: &str| layout.get(name).expect("layout entry").offset;
        Offsets {
            layers: (0..cfg.num_layers)
                .map(|l| LayerOffsets {
                    in_dim: cfg.layer_input_dim(l),
                    kernel: at(&format!("lstm{l}/kernel")),
                    recurrent: at(&format!("lstm{l}/recurrent_kernel")),
                    bias: at(&format!("lstm{l}/bias")),
                })
                .collect(),
            dense_kernel: at("dense/kernel"),
            dense_bias: at("dense/bias"),
        }
    }
}

macro_rules! flat_params {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            config: ModelConfig,
            data: Vec<f64>,
        }

        impl $name {
            pub fn zeros(config: ModelConfig) -> Self {
                $name {
                    data: vec![0.0; config.param_count()],
                    config,
                }
            }

            pub fn from_flat(config: ModelConfig, data: Vec<f64>) -> Result<Self, NnError> {
                config.validate()?;
                let expected = config.param_count();
                if data.len() != expected {
                    return Err(NnError::LengthMismatch {
                        expected,
                        got: data.len(),
                    });
                }
                Ok($name { config, data })
            }

            pub fn config(&self) -> &ModelConfig {
                &self.config
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn flatten(&self) -> Vec<f64> {
                self.data.clone()
            }

            pub fn into_flat(self) -> Vec<f64> {
                self.data
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            /// Copy of one named tensor.
            pub fn tensor(&self, name: &str) -> Option<Tensor> {
                let spec = self.config.layout().get(name)?.clone();
                Some(
                    Tensor::new(spec.shape.clone(), self.data[spec.range()].to_vec())
                        .expect("layout shapes are consistent"),
                )
            }

            pub fn tensors(&self) -> Vec<(String, Tensor)> {
                self.config
                    .layout()
                    .entries()
                    .iter()
                    .map(|spec| {
                        (
                            spec.name.clone(),
                            Tensor::new(spec.shape.clone(), self.data[spec.range()].to_vec())
                                .expect("layout shapes are consistent"),
                        )
                    })
                    .collect()
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| v.is_finite())
            }

            pub fn l2_norm(&self) -> f64 {
                self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn to_le_bytes(&self) -> Vec<u8> {
                f64s_to_le_bytes(&self.data)
            }
        }
    };
}

flat_params!(ModelParams, "Every weight and bias of the model, flattened in [`Layout`] order.");
flat_params!(Gradients, "One partial derivative per parameter, in [`Layout`] order.");

impl Gradients {
    /// Elementwise sum of `parts`, taken strictly in the given order.
    pub fn sum_ordered<'a>(config: ModelConfig, parts: impl IntoIterator<Item = &'a Gradients>) -> Result<Gradients, NnError> {
        let mut acc = Gradients::zeros(config);
        for g in parts {
            if g.config != config {
                return Err(NnError::ShapeMismatch("gradient config differs".into()));
            }
            super::add_assign(&mut acc.data, &g.data);
        }
        Ok(acc)
    }
}

/// Rebuilds parameters from a flat vector.
pub fn unflatten(values: Vec<f64>, config: ModelConfig) -> Result<ModelParams, NnError> {
    ModelParams::from_flat(config, values)
}

/// Seeded initialization: Glorot-uniform kernels, recurrent kernels and
/// dense kernel; zero biases except the forget gate, which starts at 1.
/// Tensor `i` in layout order draws from ChaCha stream `i` of the seed.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelParams, NnError> {
    config.validate()?;
    let layout = config.layout();
    let h = config.hidden_units;
    let mut params = ModelParams::zeros(config);
    for (stream, spec) in layout.entries().iter().enumerate() {
        let slot = &mut params.data[spec.range()];
        if spec.shape.len() == 2 {
            let limit = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            for v in slot.iter_mut() {
                *v = dist.sample(&mut rng);
            }
        } else if spec.name.starts_with("lstm") {
            for v in &mut slot[h..2 * h] {
                *v = 1.0;
            }
        }
    }
    Ok(params)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"VGLSTM01";
const HEADER_LEN: usize = 8 + 4 * 4 + 8 + 8 + 3 * 8;

/// Model parameters together with the optimizer state: the payload kept
/// under the versioned model key.
///
/// Byte layout, little-endian: magic `VGLSTM01`; `u32` vocab size, hidden
/// units, layers, sample length; `u64` parameter count; `u64` layout
/// checksum; `f64` learning rate, decay, epsilon; then the parameter vector
/// and the RMSprop cache vector as `f64`s.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
}

impl ModelSnapshot {
    pub fn new(params: ModelParams, hyper: RmsPropConfig) -> Self {
        let optimizer = OptimizerState::new(hyper, params.len());
        ModelSnapshot { params, optimizer }
    }

    pub fn encode(&self) -> Vec<u8> {
        let cfg = self.params.config();
        let layout = cfg.layout();
        let n = layout.total();
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * n);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        for d in [cfg.vocab_size, cfg.hidden_units, cfg.num_layers, cfg.sample_length] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&layout.checksum().to_le_bytes());
        let h = &self.optimizer.hyper;
        for v in [h.learning_rate, h.decay, h.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.params.to_le_bytes());
        out.extend_from_slice(&f64s_to_le_bytes(&self.optimizer.cache));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let corrupt = |m: &str| NnError::CorruptSnapshot(m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let config = ModelConfig {
            vocab_size: u32_at(8),
            hidden_units: u32_at(12),
            num_layers: u32_at(16),
            sample_length: u32_at(20),
        };
        config.validate()?;
        let layout = config.layout();
        let n = u64_at(24) as usize;
        if n != layout.total() {
            return Err(corrupt("parameter count disagrees with config"));
        }
        if u64_at(32) != layout.checksum() {
            return Err(corrupt("layout checksum mismatch"));
        }
        let hyper = RmsPropConfig {
            learning_rate: f64_at(40),
            decay: f64_at(48),
            epsilon: f64_at(56),
        };
        let body = &bytes[HEADER_LEN..];
        if body.len() != 16 * n {
            return Err(corrupt("body length mismatch"));
        }
        let params = f64s_from_le_bytes(&body[..8 * n]).expect("multiple of 8");
        let cache = f64s_from_le_bytes(&body[8 * n..]).expect("multiple of 8");
        if cache.iter().any(|c| !(*c >= 0.0)) {
            return Err(corrupt("negative or NaN optimizer cache"));
        }
        Ok(ModelSnapshot {
            params: ModelParams::from_flat(config, params)?,
            optimizer: OptimizerState { hyper, cache },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            hidden_units: 3,
            num_layers: 2,
            sample_length: 4,
        }
    }

    #[test]
    fn param_count_matches_shapes() {
        let c = tiny();
        let h4 = 12;
        let expected = (5 * h4 + 3 * h4 + h4) + (3 * h4 + 3 * h4 + h4) + 3 * 5 + 5;
        assert_eq!(c.param_count(), expected);
        let reference = ModelConfig::reference(64);
        assert_eq!(reference.layout().entries().len(), 8);
    }

    #[test]
    fn flatten_round_trip_and_length_check() {
        let p = init_params(tiny(), 3).unwrap();
        let back = unflatten(p.flatten(), tiny()).unwrap();
        assert_eq!(back, p);
        let mut short = p.flatten();
        short.pop();
        assert_eq!(
            unflatten(short, tiny()),
            Err(NnError::LengthMismatch {
                expected: p.len(),
                got: p.len() - 1
            })
        );
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(tiny(), 11).unwrap();
        assert_eq!(a, init_params(tiny(), 11).unwrap());
        assert_ne!(a, init_params(tiny(), 12).unwrap());
    }

    #[test]
    fn init_biases() {
        let p = init_params(tiny(), 1).unwrap();
        for l in 0..2 {
            let b = p.tensor(&format!("lstm{l}/bias")).unwrap();
            let d = b.data();
            assert!(d[..3].iter().all(|v| *v == 0.0));
            assert!(d[3..6].iter().all(|v| *v == 1.0));
            assert!(d[6..].iter().all(|v| *v == 0.0));
        }
        assert!(p.tensor("dense/bias").unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_kernel_statistics() {
        let cfg = ModelConfig::reference(64);
        let p = init_params(cfg, 2024).unwrap();
        let k = p.tensor("lstm0/kernel").unwrap();
        assert!(k.len() >= 10_000);
        assert!(k.mean().abs() < 0.05, "mean {}", k.mean());
        let limit = (6.0f64 / (64.0 + 200.0)).sqrt();
        assert!(k.data().iter().all(|v| v.abs() <= limit));
        // Uniform(-a, a) has variance a^2 / 3.
        let var = k.data().iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
        assert!((var - limit * limit / 3.0).abs() < 0.1 * limit * limit / 3.0);
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let p = init_params(tiny(), 5).unwrap();
        let mut snap = ModelSnapshot::new(p, RmsPropConfig::default());
        snap.optimizer.cache[0] = 0.25;
        let bytes = snap.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 16 * snap.params.len());
        assert_eq!(ModelSnapshot::decode(&bytes).unwrap(), snap);
        assert!(ModelSnapshot::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[32] ^= 1;
        assert!(ModelSnapshot::decode(&bad).is_err());
        assert!(ModelSnapshot::decode(b"").is_err());
    }

    #[test]
    fn layout_checksum_depends_on_shape() {
        let a = tiny().layout().checksum();
        let mut c = tiny();
        c.hidden_units = 4;
        assert_ne!(a, c.layout().checksum());
        c.hidden_units = 3;
        c.sample_length = 99;
        // Window length does not change the parameter layout.
        assert_eq!(a, c.layout().checksum());
    }
}
