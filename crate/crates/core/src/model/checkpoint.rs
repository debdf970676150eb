//! Binary checkpoint: magic `ATKD-CKPT`, `u32` version, then little-endian
//! `u64` fields `vocab_size, d_model, n_layers, n_heads, context_len, seed,
//! step, P`, then `f32[P]` parameters and a 32-byte corpus hash.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, TinyLM};
use crate::bytes::{hex, put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, ParseErrorKind, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"ATKD-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TinyLM,
    /// Optimizer steps taken to produce `model`.
    pub step: u64,
    /// SHA-256 of the training corpus bytes.
    pub corpus_hash: [u8; 32],
}

impl Checkpoint {
    pub fn new(model: TinyLM, step: u64, corpus_hash: [u8; 32]) -> Self {
        Self {
            model,
            step,
            corpus_hash,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let params = self.model.params();
        let mut out = Vec::with_capacity(9 + 4 + 8 * 8 + 4 * params.len() + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for field in [
            cfg.vocab_size as u64,
            cfg.d_model as u64,
            cfg.n_layers as u64,
            cfg.n_heads as u64,
            cfg.context_len as u64,
            cfg.seed,
            self.step,
            params.len() as u64,
        ] {
            put_u64(&mut out, field);
        }
        put_f32s(&mut out, params.iter().copied());
        out.extend_from_slice(&self.corpus_hash);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let at = r.offset();
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse(at, ParseErrorKind::UnsupportedVersion(version)));
        }
        let header_at = r.offset();
        let mut dim = || -> Result<usize> {
            let at = r.offset();
            let x = r.u64()?;
            usize::try_from(x)
                .map_err(|_| Error::parse(at, ParseErrorKind::InvalidHeader(format!("{x} does not fit in usize"))))
        };
        let vocab_size = dim()?;
        let d_model = dim()?;
        let n_layers = dim()?;
        let n_heads = dim()?;
        let context_len = dim()?;
        let seed = r.u64()?;
        let step = r.u64()?;
        let p_at = r.offset();
        let p = r.u64()?;
        let config = ModelConfig {
            vocab_size,
            d_model,
            n_layers,
            n_heads,
            context_len,
            seed,
        };
        config
            .validate()
            .map_err(|e| Error::parse(header_at, ParseErrorKind::InvalidHeader(e.to_string())))?;
        if p != config.param_count() as u64 {
            return Err(Error::parse(
                p_at,
                ParseErrorKind::InvalidHeader(format!(
                    "parameter count {p} does not match config ({})",
                    config.param_count()
                )),
            ));
        }
        r.require(p * 4 + 32)?;
        let params = r.f32s(p as usize)?;
        let corpus_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        r.finish()?;
        Ok(Self {
            model: TinyLM::from_params(config, params)?,
            step,
            corpus_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// SHA-256 of the serialized checkpoint, as lowercase hex.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 13,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            context_len: 5,
            seed: 42,
        };
        let mut hash = [0u8; 32];
        hash.iter_mut().enumerate().for_each(|(i, b)| *b = i as u8);
        Checkpoint::new(TinyLM::init(cfg).unwrap(), 17, hash)
    }

    #[test]
    fn round_trip_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn file_length() {
        let ck = sample();
        let p = ck.model.param_count();
        assert_eq!(ck.to_bytes().len(), 9 + 4 + 64 + 4 * p + 32);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Parse { offset: 0, kind: ParseErrorKind::BadMagic })
        ));

        let mut bad = bytes.clone();
        bad[9] = 7;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Parse { offset: 9, kind: ParseErrorKind::UnsupportedVersion(7) })
        ));

        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(Error::Parse { offset: 77, kind: ParseErrorKind::Truncated { .. } })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(Error::Parse { kind: ParseErrorKind::TrailingBytes(1), .. })
        ));

        let mut bad = bytes;
        bad[13 + 24] = 3; // n_heads = 3 does not divide d_model = 8
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Parse { kind: ParseErrorKind::InvalidHeader(_), .. })
        ));
    }

    #[test]
    fn digest_tracks_content() {
        let a = sample();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.model.params_mut()[0] += 1.0;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
