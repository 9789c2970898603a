//! Local knowledge base: document ingestion, chunking, embeddings and the
//! exact vector index with its file format.

mod embed;
mod index;
mod ingest;
mod splitter;

use std::path::{Path, PathBuf};

pub use embed::{
    EmbedError, EmbeddingClient, EmbeddingVector, HashingEmbedder, RemoteEmbedder, DEFAULT_DIM, MAX_BATCH,
};
pub use index::{index_load, index_save, ChunkMeta, SearchHit, SharedIndex, VectorIndex, FORMAT_VERSION};
pub use ingest::{ingest_document, normalize_text, DocKind, PdfExtractor, SourceDoc};
pub use splitter::{split_text, Chunk, SplitterConfig, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP, DEFAULT_SEPARATORS};

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("vector dimension {actual} does not match index dimension {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("chunk id {0} already indexed")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("overlap {overlap} must be smaller than chunk size {chunk_size}")]
    InvalidSplitter { chunk_size: usize, overlap: usize },
    #[error("index file checksum mismatch")]
    ChecksumMismatch,
    #[error("index format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u16, expected: u16 },
    #[error("invalid index file: {0}")]
    InvalidFormat(String),
    #[error("no extractable text in {0}")]
    EmptyDocument(String),
    #[error("text extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("text extractor failed: {0}")]
    ExtractorFailed(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const INDEX_FILE: &str = "index.sfix";

/// A directory holding one persisted index.
#[derive(Debug)]
pub struct KnowledgeBase {
    path: PathBuf,
    index: VectorIndex,
}

impl KnowledgeBase {
    /// Loads `<dir>/index.sfix`, or starts an empty index of `dim`.
    pub fn open_or_create(dir: &Path, dim: usize) -> Result<Self, KbError> {
        let path = dir.join(INDEX_FILE);
        let index = if path.exists() {
            let index = VectorIndex::load(&path)?;
            if index.dim() != dim {
                return Err(KbError::DimMismatch {
                    expected: index.dim(),
                    actual: dim,
                });
            }
            index
        } else {
            VectorIndex::new(dim)
        };
        Ok(Self { path, index })
    }

    pub fn open(dir: &Path) -> Result<Self, KbError> {
        let path = dir.join(INDEX_FILE);
        let index = VectorIndex::load(&path)?;
        Ok(Self { path, index })
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn into_index(self) -> VectorIndex {
        self.index
    }

    /// Chunks, embeds and indexes `doc`; chunks already present are
    /// skipped. Returns the number of chunks added.
    pub fn add_document(
        &mut self,
        doc: &SourceDoc,
        splitter: &SplitterConfig,
        embedder: &dyn EmbeddingClient,
    ) -> Result<usize, KbError> {
        let chunks: Vec<Chunk> = chunk_document(doc, splitter)?
            .into_iter()
            .filter(|c| !self.index.contains(&c.id))
            .collect();
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        for (chunk, vector) in chunks.iter().zip(&vectors) {
            self.index.add_chunk(chunk, doc, vector)?;
        }
        Ok(chunks.len())
    }

    pub fn save(&self) -> Result<(), KbError> {
        self.index.save(&self.path)
    }
}

/// Splits a document, assigning `<doc_id>:<seq>` chunk ids.
pub fn chunk_document(doc: &SourceDoc, splitter: &SplitterConfig) -> Result<Vec<Chunk>, KbError> {
    let mut chunks = splitter.split(&doc.full_text)?;
    for chunk in &mut chunks {
        chunk.doc_id.clone_from(&doc.id);
        chunk.id = format!("{}:{}", doc.id, chunk.seq);
    }
    Ok(chunks)
}
