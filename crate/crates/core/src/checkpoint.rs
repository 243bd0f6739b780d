//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, JSON header,
//! then little-endian `f64` arrays: embedding table, projection, bias, and
//! (if present) optimizer moments, dense blocks first and then one `m`/`v`
//! pair per embedding row listed in the header.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizerConfig;
use crate::encoder::{EncoderError, EncoderShape, ModelParams};
use crate::optim::{AdamState, Moments};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"DANCECK\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt checkpoint: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: invalid parameters: {source}")]
    Params {
        path: PathBuf,
        #[source]
        source: EncoderError,
    },
    #[error("checkpoint tokenizer {found:?} does not match corpus tokenizer {expected:?}")]
    TokenizerMismatch { expected: TokenizerConfig, found: TokenizerConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub tokenizer: TokenizerConfig,
    pub params: ModelParams<T>,
    /// Training steps completed.
    pub step: u64,
    pub optimizer: Option<AdamState<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tokenizer: TokenizerConfig,
    shape: EncoderShape,
    step: u64,
    optimizer_t: Option<u64>,
    moment_rows: Vec<u32>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails if the checkpoint was produced under a different tokenizer.
    pub fn check_tokenizer(&self, expected: &TokenizerConfig) -> Result<(), CheckpointError> {
        if &self.tokenizer != expected {
            return Err(CheckpointError::TokenizerMismatch { expected: *expected, found: self.tokenizer });
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let header = Header {
            tokenizer: self.tokenizer,
            shape: self.params.shape(),
            step: self.step,
            optimizer_t: self.optimizer.as_ref().map(|o| o.t),
            moment_rows: self.optimizer.as_ref().map_or_else(Vec::new, |o| o.rows.keys().copied().collect()),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.embedding().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |values: &[T]| values.iter().for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes()));
        put(self.params.embedding());
        put(self.params.projection());
        put(self.params.bias());
        if let Some(opt) = &self.optimizer {
            for block in [&opt.projection, &opt.bias].into_iter().chain(opt.rows.values()) {
                put(&block.m);
                put(&block.v);
            }
        }
        out
    }

    /// Atomic write: the file at `path` is either the old or the new checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.to_owned(), source };
        let tmp = path.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.encode()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_owned(), source })?;
        Self::decode(&bytes).map_err(|e| match e {
            Decode::Corrupt(reason) => CheckpointError::Corrupt { path: path.to_owned(), reason },
            Decode::Params(source) => CheckpointError::Params { path: path.to_owned(), source },
        })
    }

    fn decode(bytes: &[u8]) -> Result<Self, Decode> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Decode::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Decode::Corrupt(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| Decode::Corrupt(e.to_string()))?;
        let s = header.shape;
        let sizes = [s.vocab_buckets.checked_mul(s.d_embed), s.d_embed.checked_mul(s.d_model), Some(s.d_model)];
        let [n_embed, n_proj, n_bias] = sizes.map(|n| n.ok_or_else(|| Decode::Corrupt("shape overflow".into())));
        let embedding = r.values(n_embed?)?;
        let n_proj = n_proj?;
        let n_bias = n_bias?;
        let projection = r.values(n_proj)?;
        let bias = r.values(n_bias)?;
        let params = ModelParams::from_parts(s, embedding, projection, bias).map_err(Decode::Params)?;
        let optimizer = match header.optimizer_t {
            None if !header.moment_rows.is_empty() => return Err(Decode::Corrupt("moment rows without optimizer".into())),
            None => None,
            Some(t) => {
                let mut moments = |n| -> Result<Moments<T>, Decode> { Ok(Moments { m: r.values(n)?, v: r.values(n)? }) };
                let projection = moments(n_proj)?;
                let bias = moments(n_bias)?;
                let mut rows = BTreeMap::new();
                for &row in &header.moment_rows {
                    if row as usize >= s.vocab_buckets {
                        return Err(Decode::Corrupt(format!("moment row {row} outside vocabulary")));
                    }
                    rows.insert(row, moments(s.d_embed)?);
                }
                Some(AdamState { t, rows, projection, bias })
            }
        };
        if r.pos != bytes.len() {
            return Err(Decode::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { tokenizer: header.tokenizer, params, step: header.step, optimizer })
    }
}

enum Decode {
    Corrupt(String),
    Params(EncoderError),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Decode> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => Err(Decode::Corrupt("truncated".into())),
        }
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>, Decode> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Decode::Corrupt("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ParamGrads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint<f64> {
        let shape = EncoderShape::new(16, 4);
        let mut params = ModelParams::init(shape, &mut ChaCha8Rng::seed_from_u64(3));
        let mut opt = AdamState::new(&params);
        let mut grads = ParamGrads::new(shape);
        grads.rows.insert(5, vec![0.1, -0.2, 0.3, 0.4]);
        grads.rows.insert(2, vec![1.0, 0.0, 0.0, -1.0]);
        grads.bias = vec![0.5; 4];
        opt.step(&mut params, &grads, 1e-2, 0);
        Checkpoint { tokenizer: TokenizerConfig { vocab_buckets: 16, ..Default::default() }, params, step: 7, optimizer: Some(opt) }
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        let mut ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
        ck.optimizer = None;
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
        assert!(!path.with_extension("bin.tmp").exists());
    }

    #[test]
    fn rejects_damage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        sample().save(&path).unwrap();
        let good = fs::read(&path).unwrap();

        fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(matches!(Checkpoint::<f64>::load(&path), Err(CheckpointError::Corrupt { .. })));

        let mut extra = good.clone();
        extra.push(0);
        fs::write(&path, &extra).unwrap();
        assert!(matches!(Checkpoint::<f64>::load(&path), Err(CheckpointError::Corrupt { .. })));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(Checkpoint::<f64>::load(&path), Err(CheckpointError::Corrupt { .. })));

        assert!(matches!(Checkpoint::<f64>::load(&dir.path().join("missing.bin")), Err(CheckpointError::Io { .. })));
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut ck = sample();
        ck.optimizer = None;
        ck.params.bias_mut()[0] = f64::NAN;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::<f64>::load(&path), Err(CheckpointError::Params { .. })));
    }

    #[test]
    fn tokenizer_mismatch_detected() {
        let ck = sample();
        assert!(ck.check_tokenizer(&ck.tokenizer.clone()).is_ok());
        assert!(ck.check_tokenizer(&TokenizerConfig::default()).is_err());
    }
}
