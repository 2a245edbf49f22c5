use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::Sample;

/// A corpus turned into character indices, plus the table of window start
/// offsets for every example the job will ever consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocab: Vec<char>,
    encoded: Vec<u32>,
    starts: Vec<usize>,
    sample_length: usize,
}

/// Builds the vocabulary (sorted unique characters) and draws
/// `epochs * examples_per_epoch` window starts uniformly from the corpus
/// with the job's shuffle seed. Example `i` is the window
/// `[start_i, start_i + L)` and its target is the character at
/// `start_i + L`.
pub fn build_dataset(corpus: &str, cfg: &TrainingConfig) -> Result<Dataset> {
    let chars: Vec<char> = corpus.chars().collect();
    let l = cfg.sample_length;
    if chars.len() <= l + 1 {
        return Err(Error::CorpusTooShort {
            len: chars.len(),
            needed: l + 1,
        });
    }
    let mut vocab = chars.clone();
    vocab.sort_unstable();
    vocab.dedup();
    if vocab.len() < 2 {
        return Err(Error::InvalidConfig("corpus needs at least two distinct characters".into()));
    }
    let encoded = chars
        .iter()
        .map(|c| vocab.binary_search(c).expect("char is in vocab") as u32)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let last_start = chars.len() - l - 1;
    let starts = (0..cfg.total_examples())
        .map(|_| rng.gen_range(0..=last_start))
        .collect();
    Ok(Dataset {
        vocab,
        encoded,
        starts,
        sample_length: l,
    })
}

impl Dataset {
    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn sample(&self, index: usize) -> Sample {
        let s = self.starts[index];
        Sample {
            input: self.encoded[s..s + self.sample_length].to_vec(),
            target: self.encoded[s + self.sample_length],
        }
    }

    pub fn samples(&self, indices: impl IntoIterator<Item = usize>) -> Vec<Sample> {
        indices.into_iter().map(|i| self.sample(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: usize) -> TrainingConfig {
        TrainingConfig {
            sample_length: l,
            examples_per_epoch: 16,
            batch_size: 8,
            minibatch_size: 4,
            minibatches_to_accumulate: 2,
            epochs: 2,
            ..TrainingConfig::reference()
        }
    }

    #[test]
    fn periodic_corpus_vocab() {
        let corpus = "abc".repeat(40);
        let d = build_dataset(&corpus, &cfg(5)).unwrap();
        assert_eq!(d.vocab(), ['a', 'b', 'c']);
        assert_eq!(d.len(), 32);
        for i in 0..d.len() {
            let s = d.sample(i);
            // Period 3: the target is always the successor of the last input.
            assert_eq!(s.target, (s.input[4] + 1) % 3);
        }
    }

    #[test]
    fn short_corpus_rejected() {
        assert_eq!(
            build_dataset("abcdef", &cfg(5)),
            Err(Error::CorpusTooShort { len: 6, needed: 6 })
        );
        assert!(build_dataset("abcdefg", &cfg(5)).is_ok());
    }

    #[test]
    fn windows_stay_in_bounds() {
        let corpus = "xy".repeat(4);
        let d = build_dataset(&corpus, &cfg(6)).unwrap();
        assert!(d.starts().iter().all(|&s| s + 6 < corpus.len()));
        // Window starts 0 and 1 are the only legal ones; both get drawn.
        assert!(d.starts().contains(&0) && d.starts().contains(&1));
    }

    #[test]
    fn same_seed_same_table() {
        let corpus = super::super::corpus::synthetic_source(5_000, 1);
        let a = build_dataset(&corpus, &cfg(10)).unwrap();
        assert_eq!(a, build_dataset(&corpus, &cfg(10)).unwrap());
        let mut other = cfg(10);
        other.shuffle_seed += 1;
        assert_ne!(a.starts(), build_dataset(&corpus, &other).unwrap().starts());
    }
}
