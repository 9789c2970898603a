//! Recursive character splitting with a separator hierarchy and a fixed
//! character overlap between consecutive chunks.
//!
//! Sizes and offsets count Unicode scalar values, not bytes.

use serde::{Deserialize, Serialize};

use super::KbError;

pub const DEFAULT_CHUNK_SIZE: usize = 200;
pub const DEFAULT_OVERLAP: usize = 40;
pub const DEFAULT_SEPARATORS: [&str; 8] = ["\n\n", "\n", ". ", "。", "! ", "? ", " ", ""];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    /// Character offsets `[start, end)` into the source text.
    pub char_span: (usize, usize),
    /// Leading characters repeated from the previous chunk.
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitterConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub separators: Vec<String>,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            separators: DEFAULT_SEPARATORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SplitterConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, KbError> {
        let config = Self {
            chunk_size,
            overlap,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), KbError> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(KbError::InvalidSplitter {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    /// Splits `text`; chunk ids are the sequence numbers.
    pub fn split(&self, text: &str) -> Result<Vec<Chunk>, KbError> {
        self.validate()?;
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Ok(Vec::new());
        }
        let separators: Vec<Vec<char>> = self.separators.iter().map(|s| s.chars().collect()).collect();
        // Every atom must leave room for the overlap carried into its chunk.
        let budget = self.chunk_size - self.overlap;
        let mut atoms = Vec::new();
        atomize(&chars, 0, chars.len(), &separators, budget, &mut atoms);

        let mut chunks = Vec::new();
        let mut previous: Option<(usize, usize)> = None;
        let mut next = 0;
        while next < atoms.len() {
            let overlap = previous.map_or(0, |(s, e)| self.overlap.min(e - s));
            let start = atoms[next].0 - overlap;
            let mut end = atoms[next].1;
            next += 1;
            while next < atoms.len() && atoms[next].1 - start <= self.chunk_size {
                end = atoms[next].1;
                next += 1;
            }
            previous = Some((start, end));
            let body: String = chars[start..end].iter().collect();
            if body.chars().all(char::is_whitespace) {
                continue;
            }
            let seq = chunks.len();
            chunks.push(Chunk {
                id: seq.to_string(),
                doc_id: String::new(),
                seq,
                text: body,
                char_span: (start, end),
                overlap,
            });
        }
        Ok(chunks)
    }
}

/// Splits `[start, end)` into contiguous pieces of at most `budget`
/// characters. Separators stay attached to the end of the piece they close.
fn atomize(
    chars: &[char],
    start: usize,
    end: usize,
    separators: &[Vec<char>],
    budget: usize,
    out: &mut Vec<(usize, usize)>,
) {
    if end - start <= budget {
        out.push((start, end));
        return;
    }
    for (level, sep) in separators.iter().enumerate() {
        if sep.is_empty() {
            out.extend((start..end).map(|i| (i, i + 1)));
            return;
        }
        let cuts = separator_ends(&chars[start..end], sep);
        if cuts.is_empty() {
            continue;
        }
        let mut piece_start = start;
        for cut in cuts.into_iter().map(|c| start + c).chain(std::iter::once(end)) {
            if cut == piece_start {
                continue;
            }
            if cut - piece_start <= budget {
                out.push((piece_start, cut));
            } else {
                atomize(chars, piece_start, cut, &separators[level + 1..], budget, out);
            }
            piece_start = cut;
        }
        return;
    }
    // No separator applies and none is the empty catch-all: hard cut.
    let mut s = start;
    while s < end {
        let e = (s + budget).min(end);
        out.push((s, e));
        s = e;
    }
}

/// End offsets of non-overlapping left-to-right occurrences of `sep`.
fn separator_ends(haystack: &[char], sep: &[char]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut i = 0;
    while i + sep.len() <= haystack.len() {
        if haystack[i..i + sep.len()] == *sep {
            i += sep.len();
            ends.push(i);
        } else {
            i += 1;
        }
    }
    ends
}

/// Splits with the default separator hierarchy.
pub fn split_text(text: &str, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, KbError> {
    SplitterConfig::new(chunk_size, overlap)?.split(text)
}
