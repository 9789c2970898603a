//! Key-value cache with expiry, and an embedding client that consults it.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use sha2::{Digest, Sha256};
use slideforge::kb::{EmbedError, EmbeddingClient, EmbeddingVector};

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

/// Storage seam: an external store can replace [`MemoryCache`].
pub trait Cache: Send + Sync {
    fn get(&self, key: &str) -> Option<Vec<u8>>;
    fn put(&self, key: &str, value: Vec<u8>);
    fn stats(&self) -> CacheStats;
}

/// `"{operation}:{sha256(bytes)}"`.
pub fn cache_key(operation: &str, bytes: &[u8]) -> String {
    format!("{operation}:{}", hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub value: Vec<u8>,
    pub expires_at: Instant,
}

pub type Ticker = Arc<dyn Fn() -> Instant + Send + Sync>;

pub struct MemoryCache {
    ttl: Duration,
    now: Ticker,
    entries: Mutex<HashMap<String, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl MemoryCache {
    pub fn new(ttl: Duration) -> Self {
        Self::with_ticker(ttl, Arc::new(Instant::now))
    }

    pub fn with_ticker(ttl: Duration, now: Ticker) -> Self {
        Self {
            ttl,
            now,
            entries: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Drops expired entries; returns how many were removed.
    pub fn purge_expired(&self) -> usize {
        let now = (self.now)();
        let mut entries = self.entries.lock();
        let before = entries.len();
        entries.retain(|_, e| e.expires_at > now);
        before - entries.len()
    }
}

impl Cache for MemoryCache {
    fn get(&self, key: &str) -> Option<Vec<u8>> {
        let now = (self.now)();
        let mut entries = self.entries.lock();
        let fresh = match entries.get(key) {
            Some(e) if e.expires_at > now => Some(e.value.clone()),
            Some(_) => {
                entries.remove(key);
                None
            }
            None => None,
        };
        let counter = if fresh.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        fresh
    }

    fn put(&self, key: &str, value: Vec<u8>) {
        let expires_at = (self.now)() + self.ttl;
        self.entries
            .lock()
            .insert(key.to_string(), CacheEntry { value, expires_at });
    }

    fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.lock().len(),
        }
    }
}

/// Looks texts up by hash before calling the wrapped client.
pub struct CachingEmbedder {
    inner: Arc<dyn EmbeddingClient>,
    cache: Arc<dyn Cache>,
    tag: String,
}

impl CachingEmbedder {
    /// `tag` separates vectors from different models in a shared cache.
    pub fn new(inner: Arc<dyn EmbeddingClient>, cache: Arc<dyn Cache>, tag: impl Into<String>) -> Self {
        Self {
            inner,
            cache,
            tag: tag.into(),
        }
    }

    fn key(&self, text: &str) -> String {
        cache_key(&format!("embed:{}:{}", self.tag, self.inner.dim()), text.as_bytes())
    }
}

fn encode(v: &EmbeddingVector) -> Vec<u8> {
    v.values().iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode(bytes: &[u8], dim: usize) -> Option<EmbeddingVector> {
    if bytes.len() != dim * 4 {
        return None;
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingVector::new(values).ok()
}

impl EmbeddingClient for CachingEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let dim = self.inner.dim();
        let mut out: Vec<Option<EmbeddingVector>> = texts
            .iter()
            .map(|t| self.cache.get(&self.key(t)).and_then(|b| decode(&b, dim)))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed_batch(&batch)?;
            if fresh.len() != batch.len() {
                return Err(EmbedError::CountMismatch {
                    expected: batch.len(),
                    actual: fresh.len(),
                });
            }
            for (&i, vector) in missing.iter().zip(fresh) {
                self.cache.put(&self.key(&texts[i]), encode(&vector));
                out[i] = Some(vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}
