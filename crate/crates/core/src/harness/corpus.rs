use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A byte corpus split contiguously into a training prefix and a validation
/// suffix.
#[derive(Debug, Clone)]
pub struct Corpus {
    tokens: Vec<usize>,
    split: usize,
    hash: [u8; 32],
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8], train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let split = (bytes.len() as f64 * train_fraction).floor() as usize;
        if split < 2 || bytes.len() - split < 2 {
            return Err(Error::InvalidInput(format!(
                "corpus of {} bytes is too small to split",
                bytes.len()
            )));
        }
        Ok(Self {
            tokens: bytes.iter().map(|&b| b as usize).collect(),
            split,
            hash: Sha256::digest(bytes).into(),
        })
    }

    pub fn load(path: impl AsRef<Path>, train_fraction: f64) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, train_fraction)
    }

    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn train(&self) -> &[usize] {
        &self.tokens[..self.split]
    }

    pub fn val(&self) -> &[usize] {
        &self.tokens[self.split..]
    }

    /// The validation prefix scored during evaluation.
    pub fn val_prefix(&self, cap: Option<usize>) -> &[usize] {
        let val = self.val();
        &val[..cap.map_or(val.len(), |c| c.min(val.len()))]
    }

    /// Deterministic `count`-token sample of the training split made of
    /// windows of `window + 1` tokens: inputs and next-token targets.
    pub fn fixed_sample(&self, count: usize, window: usize, seed: u64) -> Result<Batch> {
        let sequences = count.div_ceil(window).max(1);
        BatchSampler::new(self, window, sequences, seed)?.next_batch()
    }
}

/// Next-token training batch: `inputs` and `targets` are both
/// `[batch × seq_len]`, with `targets` shifted one position ahead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
}

/// Draws uniformly placed windows from the training split.
pub struct BatchSampler<'a> {
    train: &'a [usize],
    seq_len: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(corpus: &'a Corpus, seq_len: usize, batch: usize, seed: u64) -> Result<Self> {
        let train = corpus.train();
        if train.len() < seq_len + 1 {
            return Err(Error::InvalidInput(format!(
                "training split of {} tokens is shorter than one window of {}",
                train.len(),
                seq_len + 1
            )));
        }
        Ok(Self {
            train,
            seq_len,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let n = self.seq_len;
        let mut inputs = Vec::with_capacity(self.batch * n);
        let mut targets = Vec::with_capacity(self.batch * n);
        for _ in 0..self.batch {
            let start = self.rng.random_range(0..=self.train.len() - n - 1);
            inputs.extend_from_slice(&self.train[start..start + n]);
            targets.extend_from_slice(&self.train[start + 1..start + n + 1]);
        }
        Ok(Batch {
            inputs,
            targets,
            batch: self.batch,
            seq_len: n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_split() {
        let bytes: Vec<u8> = (0..100u8).collect();
        let c = Corpus::from_bytes(&bytes, 0.9).unwrap();
        assert_eq!(c.train().len(), 90);
        assert_eq!(c.val()[0], 90);
        assert_eq!(c.val_prefix(Some(4)), &[90, 91, 92, 93]);
        assert_eq!(c.val_prefix(Some(1000)).len(), 10);
        assert!(Corpus::from_bytes(&bytes, 1.0).is_err());
        assert!(Corpus::from_bytes(b"abc", 0.5).is_err());
    }

    #[test]
    fn batches_are_shifted_and_seeded() {
        let bytes: Vec<u8> = (0..200).map(|i| (i % 251) as u8).collect();
        let c = Corpus::from_bytes(&bytes, 0.9).unwrap();
        let mut a = BatchSampler::new(&c, 8, 3, 5).unwrap();
        let mut b = BatchSampler::new(&c, 8, 3, 5).unwrap();
        let (x, y) = (a.next_batch().unwrap(), b.next_batch().unwrap());
        assert_eq!(x, y);
        for i in 0..x.inputs.len() {
            assert_eq!(x.targets[i], x.inputs[i] + 1);
            assert!(x.targets[i] < 180);
        }
        assert_ne!(a.next_batch().unwrap(), x);
    }

    #[test]
    fn hash_is_sha256() {
        let c = Corpus::from_bytes(b"hello world", 0.5).unwrap();
        assert_eq!(
            crate::bytes::hex(&c.hash()),
            "b94d27b9934d3e08a52e52d7da7dabfac484efe37a5380ee9088f7ace2efcde9"
        );
    }
}
