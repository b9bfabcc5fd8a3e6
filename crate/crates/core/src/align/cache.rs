use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use super::landmarks::{CanonicalTemplate, LandmarkSet};
use super::transform::{estimate_similarity, SimilarityTransform};
use super::{AlignError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> f64 {
        if self.lookups() == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups() as f64
        }
    }
}

/// Frame id → transform map, optionally mirrored to an append-only file of
/// `(u32 id length, id bytes, 6 × f64)` little-endian records.
#[derive(Debug, Default)]
pub struct AlignmentCache {
    map: RwLock<HashMap<String, SimilarityTransform>>,
    hits: AtomicU64,
    misses: AtomicU64,
    log: Mutex<Option<BufWriter<File>>>,
}

impl AlignmentCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persisted cache, replaying existing records;
    /// later records for the same id win.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut map = HashMap::new();
        if path.exists() {
            let bytes = std::fs::read(path)?;
            for (id, t) in decode_records(&bytes)? {
                map.insert(id, t);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            map: RwLock::new(map),
            log: Mutex::new(Some(BufWriter::new(file))),
            ..Self::default()
        })
    }

    /// Lookup that updates the hit/miss counters.
    pub fn get(&self, frame_id: &str) -> Option<SimilarityTransform> {
        let found = self.map.read().expect("cache lock").get(frame_id).copied();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn put(&self, frame_id: &str, t: SimilarityTransform) -> Result<()> {
        let mut log = self.log.lock().expect("cache log lock");
        if let Some(w) = log.as_mut() {
            w.write_all(&encode_record(frame_id, &t))?;
            w.flush()?;
        }
        self.map.write().expect("cache lock").insert(frame_id.to_string(), t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.hits.store(0, Ordering::Relaxed);
        self.misses.store(0, Ordering::Relaxed);
    }
}

/// Cached transform for the landmark set's frame, estimating and storing it on a miss.
pub fn cached_transform(
    cache: &AlignmentCache,
    landmarks: &LandmarkSet,
    template: &CanonicalTemplate,
) -> Result<SimilarityTransform> {
    if let Some(t) = cache.get(&landmarks.frame_id) {
        return Ok(t);
    }
    let t = estimate_similarity(landmarks, template)?;
    cache.put(&landmarks.frame_id, t)?;
    Ok(t)
}

fn encode_record(frame_id: &str, t: &SimilarityTransform) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + frame_id.len() + 48);
    out.extend_from_slice(&(frame_id.len() as u32).to_le_bytes());
    out.extend_from_slice(frame_id.as_bytes());
    for v in t.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_records(mut bytes: &[u8]) -> Result<Vec<(String, SimilarityTransform)>> {
    let corrupt = |m: &str| AlignError::Cache(m.to_string());
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(corrupt("truncated record header"));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        bytes = &bytes[4..];
        if bytes.len() < n + 48 {
            return Err(corrupt("truncated record"));
        }
        let id = String::from_utf8(bytes[..n].to_vec()).map_err(|_| corrupt("frame id is not UTF-8"))?;
        bytes = &bytes[n..];
        let mut m = [0.0; 6];
        for (i, v) in m.iter_mut().enumerate() {
            *v = f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        }
        bytes = &bytes[48..];
        out.push((id, SimilarityTransform::from_array(m)?));
    }
    Ok(out)
}
