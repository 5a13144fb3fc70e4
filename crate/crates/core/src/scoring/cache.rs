// SPDX-License-Identifier: MIT OR Apache-2.0

//! Content-addressed score cache.
//!
//! Keys are SHA-256 digests over the scorer name, the call kind, the tensor
//! shape and bytes, and the prompt text (or the second tensor for
//! distances). With a directory configured every entry is also persisted as
//! `<dir>/<key>.json`, so calibration and benchmark runs that re-score the
//! same samples never pay twice.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AlignScore, AlignmentScorer, PerceptualScorer};
use crate::backends::hex_prefix;
use crate::error::Result;
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CachedScore {
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Default)]
pub struct ScoreCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, CachedScore>>,
    write_lock: Mutex<()>,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn hash_tensor(h: &mut Sha256, t: &LatentTensor) {
    h.update((t.shape().len() as u64).to_le_bytes());
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    h.update(t.to_le_bytes());
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            ..Self::default()
        })
    }

    /// Disk cache under `FSL_CACHE_DIR` when set, otherwise in memory.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os("FSL_CACHE_DIR") {
            Some(d) if !d.is_empty() => Self::on_disk(PathBuf::from(d)),
            _ => Ok(Self::in_memory()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
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

    pub fn align_key(scorer: &str, sample: &LatentTensor, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(b"align\0");
        h.update(scorer.as_bytes());
        h.update(b"\0");
        hash_tensor(&mut h, sample);
        h.update(b"\0");
        h.update(prompt.as_bytes());
        hex_prefix(&h.finalize(), 32)
    }

    pub fn distance_key(scorer: &str, a: &LatentTensor, b: &LatentTensor) -> String {
        let mut h = Sha256::new();
        h.update(b"distance\0");
        h.update(scorer.as_bytes());
        h.update(b"\0");
        hash_tensor(&mut h, a);
        h.update(b"\0");
        hash_tensor(&mut h, b);
        hex_prefix(&h.finalize(), 32)
    }

    fn lookup(&self, key: &str) -> Option<CachedScore> {
        if let Some(v) = self.memory.read().expect("cache lock poisoned").get(key) {
            return Some(*v);
        }
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let text = fs::read_to_string(path).ok()?;
        let value: CachedScore = serde_json::from_str(&text).ok()?;
        self.memory
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_string(), value);
        Some(value)
    }

    fn store(&self, key: &str, value: CachedScore) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        self.memory
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_string(), value);
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{key}.json.tmp"));
            fs::write(&tmp, serde_json::to_vec(&value)?)?;
            fs::rename(tmp, dir.join(format!("{key}.json")))?;
        }
        Ok(())
    }

    pub fn align(
        &self,
        scorer: &dyn AlignmentScorer,
        sample: &LatentTensor,
        prompt: &str,
    ) -> Result<AlignScore> {
        let key = Self::align_key(scorer.name(), sample, prompt);
        if let Some(CachedScore {
            score,
            a_max: Some(a_max),
        }) = self.lookup(&key)
        {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(AlignScore { score, a_max });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = scorer.align(sample, prompt)?;
        self.store(
            &key,
            CachedScore {
                score: fresh.score,
                a_max: Some(fresh.a_max),
            },
        )?;
        Ok(fresh)
    }

    pub fn distance(
        &self,
        scorer: &dyn PerceptualScorer,
        a: &LatentTensor,
        b: &LatentTensor,
    ) -> Result<f64> {
        let key = Self::distance_key(scorer.name(), a, b);
        if let Some(hit) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.score);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let score = scorer.distance(a, b)?;
        self.store(&key, CachedScore { score, a_max: None })?;
        Ok(score)
    }
}
