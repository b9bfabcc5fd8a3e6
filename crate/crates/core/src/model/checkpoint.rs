//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "ICUAUCKP" | version u32 | model-config digest [32] | train-config digest [32]
//! config json (u32 len + bytes) | head tag (u32 len + bytes, empty when none)
//! epochs completed u64 | parameter records | optimizer flag u8
//! [ step u64 | first-moment records | second-moment records ]
//! records := count u32, then per tensor sorted by path:
//!            path (u32 len + bytes) | rank u32 | extents u64… | f64 payload
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ModelConfig, ParameterSet};
use crate::au::DatasetTag;
use crate::tensor::Tensor;
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"ICUAUCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("model config digest mismatch: checkpoint was written for a different model config")]
    ModelDigest,
    #[error("train config digest mismatch")]
    TrainDigest,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub optimizer: Option<AdamState>,
    /// Digest of the training configuration, zeros when not from training.
    pub train_digest: [u8; 32],
    pub epochs_completed: u64,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParameterSet) -> Self {
        Self {
            config,
            params,
            optimizer: None,
            train_digest: [0; 32],
            epochs_completed: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config.digest())?;
        w.write_all(&self.train_digest)?;
        write_bytes(w, &serde_json::to_vec(&self.config).expect("config serializes"))?;
        write_bytes(w, self.params.head_tag().map_or("", |t| t.name()).as_bytes())?;
        w.write_all(&self.epochs_completed.to_le_bytes())?;
        write_records(w, self.params.iter())?;
        match &self.optimizer {
            None => w.write_all(&[0]),
            Some(state) => {
                w.write_all(&[1])?;
                w.write_all(&state.step.to_le_bytes())?;
                write_records(w, state.m.iter().map(|(k, v)| (k.as_str(), v)))?;
                write_records(w, state.v.iter().map(|(k, v)| (k.as_str(), v)))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Parse a checkpoint; when `expected` is given its digest must match.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut model_digest = [0u8; 32];
        read_exact(&mut r, &mut model_digest)?;
        if let Some(cfg) = expected {
            if cfg.digest() != model_digest {
                return Err(CheckpointError::ModelDigest);
            }
        }
        let mut train_digest = [0u8; 32];
        read_exact(&mut r, &mut train_digest)?;
        let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
        if config.digest() != model_digest {
            return Err(CheckpointError::Corrupt(
                "embedded config does not match its digest".into(),
            ));
        }
        let tag = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("head tag is not UTF-8".into()))?;
        let head_tag = if tag.is_empty() {
            None
        } else {
            Some(
                DatasetTag::from_name(&tag)
                    .ok_or_else(|| CheckpointError::Corrupt(format!("unknown head tag {tag}")))?,
            )
        };
        let epochs_completed = read_u64(&mut r)?;
        let params = ParameterSet::from_tensors(read_records(&mut r)?, head_tag);
        params
            .validate(&config)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let step = read_u64(&mut r)?;
                let m = read_records(&mut r)?;
                let v = read_records(&mut r)?;
                Some(AdamState { step, m, v })
            }
            f => return Err(CheckpointError::Corrupt(format!("optimizer flag {f}"))),
        };
        if !r.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            config,
            params,
            optimizer,
            train_digest,
            epochs_completed,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, expected)
    }

    pub fn check_train_digest(&self, digest: &[u8; 32]) -> Result<()> {
        if &self.train_digest == digest {
            Ok(())
        } else {
            Err(CheckpointError::TrainDigest)
        }
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn write_records<'a>(w: &mut impl Write, items: impl Iterator<Item = (&'a str, &'a Tensor)>) -> io::Result<()> {
    let mut items: Vec<_> = items.collect();
    items.sort_by(|a, b| a.0.cmp(b.0));
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for (path, t) in items {
        write_bytes(w, path.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Corrupt("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut &[u8]) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > r.len() {
        return Err(CheckpointError::Corrupt("length exceeds file".into()));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_records(r: &mut &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let count = read_u32(r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let path =
            String::from_utf8(read_bytes(r)?).map_err(|_| CheckpointError::Corrupt("path is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > r.len() {
            return Err(CheckpointError::Corrupt(format!("{path}: payload exceeds file")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(r, &mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("{path}: {e}")))?;
        out.insert(path, t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::toy(3);
        let params = ParameterSet::init(&cfg, 5, Some(DatasetTag::PainIcu)).unwrap();
        let mut ck = Checkpoint::new(cfg, params);
        ck.optimizer = Some(AdamState::zeros_like(&ck.params));
        ck.epochs_completed = 4;
        ck
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Some(&ck.config)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_other_config() {
        let ck = sample();
        let other = ModelConfig::toy(12);
        assert!(matches!(
            Checkpoint::from_bytes(&ck.to_bytes(), Some(&other)),
            Err(CheckpointError::ModelDigest)
        ));
    }

    #[test]
    fn rejects_bad_version_and_truncation() {
        let mut bytes = sample().to_bytes();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::from_bytes(truncated, None),
            Err(CheckpointError::Corrupt(_))
        ));
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, None),
            Err(CheckpointError::Version(9))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, None),
            Err(CheckpointError::BadMagic)
        ));
    }
}
