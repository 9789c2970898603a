//! Exact nearest-neighbor store: one row-major `f32` matrix scanned in
//! full for every query.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! "SFIX" | version u16 | dim u32 | count u32 | count*dim f32
//!        | meta_len u32 | meta JSON (meta_len bytes) | crc32 u32
//! ```
//!
//! The CRC covers every byte before it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use super::{Chunk, EmbeddingVector, KbError, SourceDoc};
use crate::exec::Execution;

const MAGIC: &[u8; 4] = b"SFIX";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;
const ROWS_PER_TASK: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMeta {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub chunk_id: String,
    pub l2_squared: f32,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    metadata: BTreeMap<String, ChunkMeta>,
    rows: HashMap<String, usize>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.metadata == other.metadata
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Serialize, Deserialize)]
struct StoredMeta {
    ids: Vec<String>,
    metadata: BTreeMap<String, ChunkMeta>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            metadata: BTreeMap::new(),
            rows: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn metadata(&self, id: &str) -> Option<&ChunkMeta> {
        self.metadata.get(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        let row = *self.rows.get(id)?;
        Some(&self.vectors[row * self.dim..(row + 1) * self.dim])
    }

    /// Raw row-major matrix.
    pub fn matrix(&self) -> &[f32] {
        &self.vectors
    }

    pub fn add(&mut self, id: impl Into<String>, meta: ChunkMeta, vector: &EmbeddingVector) -> Result<(), KbError> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(KbError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if self.rows.contains_key(&id) {
            return Err(KbError::DuplicateId(id));
        }
        self.rows.insert(id.clone(), self.ids.len());
        self.vectors.extend_from_slice(vector.values());
        self.metadata.insert(id.clone(), meta);
        self.ids.push(id);
        Ok(())
    }

    /// Appends a chunk of `doc` under the chunk's id.
    pub fn add_chunk(&mut self, chunk: &Chunk, doc: &SourceDoc, vector: &EmbeddingVector) -> Result<(), KbError> {
        let meta = ChunkMeta {
            doc_id: doc.id.clone(),
            title: doc.title.clone(),
            text: chunk.text.clone(),
            origin: doc.origin.clone(),
        };
        self.add(chunk.id.clone(), meta, vector)
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, KbError> {
        self.search_with(query, k, Execution::default())
    }

    /// The `min(k, len)` nearest rows by squared L2 distance, ascending,
    /// ties broken by insertion order.
    pub fn search_with(&self, query: &EmbeddingVector, k: usize, exec: Execution) -> Result<Vec<SearchHit>, KbError> {
        if query.dim() != self.dim {
            return Err(KbError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.values();
        let dim = self.dim.max(1);
        let distances = exec.flat_map_chunks(&self.vectors, ROWS_PER_TASK * dim, |_, block| {
            block.chunks_exact(dim).map(|row| l2_squared(row, q)).collect()
        });
        let mut order: Vec<(f32, usize)> = distances.into_iter().zip(0..).collect();
        let by_distance = |a: &(f32, usize), b: &(f32, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_distance);
            order.truncate(k);
        }
        order.sort_by(by_distance);
        Ok(order
            .into_iter()
            .map(|(d, row)| SearchHit {
                chunk_id: self.ids[row].clone(),
                l2_squared: d,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&StoredMeta {
            ids: self.ids.clone(),
            metadata: self.metadata.clone(),
        })
        .expect("metadata serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4 + meta.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KbError> {
        if bytes.len() < HEADER_LEN + 4 + 4 {
            return Err(KbError::ChecksumMismatch);
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(KbError::ChecksumMismatch);
        }
        if &body[..4] != MAGIC {
            return Err(KbError::InvalidFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != FORMAT_VERSION {
            return Err(KbError::FormatVersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dim = read_u32(body, 6) as usize;
        let count = read_u32(body, 10) as usize;
        let matrix_len = dim
            .checked_mul(count)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| KbError::InvalidFormat("matrix size overflows".into()))?;
        let meta_at = HEADER_LEN + matrix_len;
        if body.len() < meta_at + 4 {
            return Err(KbError::InvalidFormat("matrix shorter than header claims".into()));
        }
        let vectors = body[HEADER_LEN..meta_at]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<_>>();
        let meta_len = read_u32(body, meta_at) as usize;
        if body.len() != meta_at + 4 + meta_len {
            return Err(KbError::InvalidFormat("metadata length mismatch".into()));
        }
        let stored: StoredMeta = serde_json::from_slice(&body[meta_at + 4..])
            .map_err(|e| KbError::InvalidFormat(format!("metadata: {e}")))?;
        if stored.ids.len() != count {
            return Err(KbError::InvalidFormat("id count mismatch".into()));
        }
        let mut rows = HashMap::with_capacity(count);
        for (row, id) in stored.ids.iter().enumerate() {
            if rows.insert(id.clone(), row).is_some() {
                return Err(KbError::DuplicateId(id.clone()));
            }
            if !stored.metadata.contains_key(id) {
                return Err(KbError::InvalidFormat(format!("no metadata for {id}")));
            }
        }
        Ok(Self {
            dim,
            ids: stored.ids,
            vectors,
            metadata: stored.metadata,
            rows,
        })
    }

    /// Writes to a sibling temp file and renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.persist(path).map_err(|e| KbError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn l2_squared(row: &[f32], query: &[f32]) -> f32 {
    row.iter()
        .zip(query)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn index_save(index: &VectorIndex, path: &Path) -> Result<(), KbError> {
    index.save(path)
}

pub fn index_load(path: &Path) -> Result<VectorIndex, KbError> {
    VectorIndex::load(path)
}

/// Many readers or one writer over a shared index.
#[derive(Debug, Clone)]
pub struct SharedIndex(Arc<RwLock<VectorIndex>>);

impl SharedIndex {
    pub fn new(index: VectorIndex) -> Self {
        Self(Arc::new(RwLock::new(index)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, VectorIndex> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, VectorIndex> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }
}
