//! Oracles and generators shared by the integration tests and the
//! acceptance suite. Nothing here calls into the code it checks except
//! through the public entry points under test.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use slideforge::deck::{extract_deck, DeckExtract, ExtractOptions, ImageAsset, ScriptedOcr, SlideRecord, TextBlock};
use slideforge::kb::{Chunk, ChunkMeta, EmbeddingClient, EmbeddingVector, VectorIndex};
use slideforge::retrieval::{dedup, merge_score, LocalHit, Reference, WebHit, Weights};
use slideforge::Execution;

pub const FIXTURES: [&str; 5] = ["deck_empty", "deck_one", "deck_two", "deck_ten", "deck_dx39"];

/// Resolves from either workspace crate, since the acceptance suite in the
/// service crate shares these oracles.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

#[derive(Debug, Deserialize)]
pub struct Manifest {
    pub source_name: String,
    pub slide_count: usize,
    pub slides: Vec<ManifestSlide>,
    pub ocr: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
pub struct ManifestSlide {
    pub title: Option<String>,
    pub body_blocks: Vec<ManifestBlock>,
    pub notes: Option<String>,
    pub image_hashes: Vec<String>,
}

#[derive(Debug, Deserialize, PartialEq)]
pub struct ManifestBlock {
    pub text: String,
    pub level: u32,
    pub is_bullet: bool,
}

pub fn load_manifest(name: &str) -> Manifest {
    let path = fixtures_dir().join(format!("{name}.manifest.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixtures_dir().join(format!("{name}.pptx"))).unwrap()
}

/// OCR stub answering from the manifest's hash table.
pub fn manifest_ocr(manifest: &Manifest) -> ScriptedOcr {
    ScriptedOcr::new(manifest.ocr.iter().map(|(h, t)| (h.clone(), t.clone())))
}

pub fn extract_fixture(name: &str, export_dir: &Path, exec: Execution) -> DeckExtract {
    let manifest = load_manifest(name);
    let ocr = manifest_ocr(&manifest);
    let mut options = ExtractOptions::new(export_dir, &ocr);
    options.exec = exec;
    let (deck, _warnings) = extract_deck(&fixture_bytes(name), &manifest.source_name, &options).unwrap();
    deck
}

/// Compares an extraction with its authoring manifest.
pub fn check_against_manifest(deck: &DeckExtract, manifest: &Manifest) -> Result<(), String> {
    if deck.slide_count != manifest.slide_count || deck.slides.len() != manifest.slides.len() {
        return Err(format!(
            "slide count {} (records {}), expected {}",
            deck.slide_count,
            deck.slides.len(),
            manifest.slide_count
        ));
    }
    if deck.source_name != manifest.source_name {
        return Err(format!("source name {:?}", deck.source_name));
    }
    for (i, (got, want)) in deck.slides.iter().zip(&manifest.slides).enumerate() {
        if got.index != i {
            return Err(format!("slide {i}: index {}", got.index));
        }
        if got.title != want.title {
            return Err(format!("slide {i}: title {:?}, expected {:?}", got.title, want.title));
        }
        let blocks: Vec<ManifestBlock> = got
            .body_blocks
            .iter()
            .map(|b| ManifestBlock {
                text: b.text.clone(),
                level: b.level,
                is_bullet: b.is_bullet,
            })
            .collect();
        if blocks != want.body_blocks {
            return Err(format!("slide {i}: blocks {blocks:?}, expected {:?}", want.body_blocks));
        }
        if got.notes != want.notes {
            return Err(format!("slide {i}: notes {:?}, expected {:?}", got.notes, want.notes));
        }
        let hashes: Vec<&str> = got.images.iter().map(|a| a.content_hash.as_str()).collect();
        if hashes != want.image_hashes {
            return Err(format!(
                "slide {i}: image hashes {hashes:?}, expected {:?}",
                want.image_hashes
            ));
        }
        let mut raw: Vec<&str> = Vec::new();
        raw.extend(want.title.as_deref());
        raw.extend(want.body_blocks.iter().map(|b| b.text.as_str()));
        raw.extend(want.notes.as_deref());
        if got.raw_text != raw.join("\n") {
            return Err(format!("slide {i}: raw_text {:?}", got.raw_text));
        }
        let ocr: Vec<&str> = want
            .image_hashes
            .iter()
            .filter_map(|h| manifest.ocr.get(h).map(String::as_str))
            .filter(|t| !t.is_empty())
            .collect();
        if got.ocr_text != ocr.join("\n") {
            return Err(format!(
                "slide {i}: ocr_text {:?}, expected {:?}",
                got.ocr_text,
                ocr.join("\n")
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- splitter

pub const REFERENCE_SEPARATORS: [&str; 8] = ["\n\n", "\n", ". ", "。", "! ", "? ", " ", ""];

fn reference_pieces(text: &str, seps: &[&str], budget: usize) -> Vec<String> {
    if text.chars().count() <= budget {
        return vec![text.to_string()];
    }
    match seps.iter().position(|s| s.is_empty() || text.contains(s)) {
        Some(pos) if seps[pos].is_empty() => text.chars().map(String::from).collect(),
        Some(pos) => text
            .split_inclusive(seps[pos])
            .flat_map(|piece| reference_pieces(piece, &seps[pos + 1..], budget))
            .collect(),
        None => {
            let chars: Vec<char> = text.chars().collect();
            chars.chunks(budget).map(|c| c.iter().collect()).collect()
        }
    }
}

/// Straightforward splitter used as the oracle: `(text, span, overlap)`.
pub fn reference_split(text: &str, size: usize, overlap: usize) -> Vec<(String, (usize, usize), usize)> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut atoms = Vec::new();
    let mut offset = 0;
    for piece in reference_pieces(text, &REFERENCE_SEPARATORS, size - overlap) {
        let len = piece.chars().count();
        atoms.push((offset, offset + len));
        offset += len;
    }
    assert_eq!(offset, text.chars().count(), "pieces must tile the text");

    let mut spans: Vec<((usize, usize), usize)> = Vec::new();
    let mut current: Option<((usize, usize), usize)> = None;
    for (a, b) in atoms {
        match current {
            Some(((start, _), ov)) if b - start <= size => current = Some(((start, b), ov)),
            previous => {
                let carried = match previous {
                    Some(((s, e), _)) => {
                        spans.push(previous.unwrap());
                        overlap.min(e - s)
                    }
                    None => 0,
                };
                current = Some(((a - carried, b), carried));
            }
        }
    }
    spans.extend(current);

    let chars: Vec<char> = text.chars().collect();
    spans
        .into_iter()
        .map(|((s, e), ov)| (chars[s..e].iter().collect::<String>(), (s, e), ov))
        .filter(|(t, _, _)| !t.trim().is_empty())
        .collect()
}

/// Random text mixing every separator, non-ASCII words and long runs.
pub fn random_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] = [
        "data",
        "cloud",
        "transformation",
        "agile",
        "x",
        "café",
        "naïve",
        "数字化",
        "変革",
        "Ω",
        "governance",
        "blockchain",
    ];
    const SEPS: [&str; 9] = ["\n\n", "\n", ". ", "。", "! ", "? ", " ", " ", "   "];
    let target = rng.gen_range(0..1500);
    let mut out = String::new();
    while out.chars().count() < target {
        match rng.gen_range(0..20) {
            0 => {
                let n = rng.gen_range(20..320);
                out.extend((0..n).map(|_| rng.gen_range(b'a'..=b'z') as char));
            }
            1 => out.push('\t'),
            2..=9 => out.push_str(WORDS.choose(rng).unwrap()),
            _ => out.push_str(SEPS.choose(rng).unwrap()),
        }
    }
    out
}

fn non_whitespace(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Invariants that hold for any correct split.
pub fn check_split_properties(text: &str, chunks: &[Chunk], size: usize, overlap: usize) -> Result<(), String> {
    let chars: Vec<char> = text.chars().collect();
    let mut rebuilt = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let len = c.text.chars().count();
        if len == 0 || len > size {
            return Err(format!("chunk {i} has {len} chars (limit {size})"));
        }
        let (s, e) = c.char_span;
        if e > chars.len() || chars[s..e].iter().collect::<String>() != c.text {
            return Err(format!("chunk {i}: span {:?} does not match its text", c.char_span));
        }
        if c.seq != i {
            return Err(format!("chunk {i}: seq {}", c.seq));
        }
        if c.overlap > overlap || c.overlap >= len {
            return Err(format!("chunk {i}: overlap {} out of range", c.overlap));
        }
        if i == 0 && s + c.overlap == 0 && c.overlap != 0 {
            return Err("first chunk claims an overlap".into());
        }
        if i > 0 {
            let prev = &chunks[i - 1];
            let prev_len = prev.char_span.1 - prev.char_span.0;
            if s + c.overlap == prev.char_span.1 && c.overlap != overlap.min(prev_len) {
                return Err(format!(
                    "chunk {i}: overlap {} after a {prev_len}-char chunk",
                    c.overlap
                ));
            }
            if s < prev.char_span.0 {
                return Err(format!("chunk {i} starts before chunk {}", i - 1));
            }
        }
        rebuilt.extend(c.text.chars().skip(c.overlap));
    }
    if non_whitespace(&rebuilt) != non_whitespace(text) {
        return Err("non-whitespace content is not reconstructed".into());
    }
    // Boundary preference: when no separator-free run exceeds the room left
    // after the overlap, every cut lands right after a separator.
    let budget = size - overlap;
    let longest_run = text
        .split([' ', '\n', '。'])
        .map(|w| w.chars().count())
        .max()
        .unwrap_or(0);
    if longest_run + 1 < budget {
        for (i, c) in chunks.iter().enumerate() {
            let e = c.char_span.1;
            if e == chars.len() {
                continue;
            }
            let before: String = chars[..e].iter().collect();
            if !REFERENCE_SEPARATORS[..7].iter().any(|sep| before.ends_with(sep)) {
                return Err(format!("chunk {i} ends mid-word at {e}"));
            }
        }
    }
    Ok(())
}

/// Compares `split_text` output with the oracle.
pub fn check_against_reference(text: &str, chunks: &[Chunk], size: usize, overlap: usize) -> Result<(), String> {
    let got: Vec<(String, (usize, usize), usize)> = chunks
        .iter()
        .map(|c| (c.text.clone(), c.char_span, c.overlap))
        .collect();
    let want = reference_split(text, size, overlap);
    if got != want {
        let at = got
            .iter()
            .zip(&want)
            .position(|(a, b)| a != b)
            .unwrap_or(got.len().min(want.len()));
        return Err(format!(
            "differs from oracle at chunk {at}: got {:?}, want {:?} ({} vs {} chunks)",
            got.get(at),
            want.get(at),
            got.len(),
            want.len()
        ));
    }
    Ok(())
}

// ------------------------------------------------------------------- index

/// Exhaustive scan in f64: `(row, l2_squared)` for the `k` nearest rows.
pub fn brute_force_knn(rows: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row
                .iter()
                .zip(query)
                .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                .sum();
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub struct IndexInstance {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
    pub query: Vec<f32>,
    pub k: usize,
}

pub fn random_index_instance(rng: &mut ChaCha8Rng) -> IndexInstance {
    let dim = rng.gen_range(1..=64);
    let n = rng.gen_range(0..=1000);
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.gen_bool(0.05) {
            let copy = rows[rng.gen_range(0..rows.len())].clone();
            rows.push(copy);
        } else {
            rows.push((0..dim).map(|_| rng.gen_range(-10.0f32..10.0)).collect());
        }
    }
    let query = if !rows.is_empty() && rng.gen_bool(0.3) {
        rows[rng.gen_range(0..rows.len())].clone()
    } else {
        (0..dim).map(|_| rng.gen_range(-10.0f32..10.0)).collect()
    };
    let k = rng.gen_range(1..=n + 5);
    IndexInstance { dim, rows, query, k }
}

pub fn build_index(instance: &IndexInstance) -> VectorIndex {
    let mut index = VectorIndex::new(instance.dim);
    for (i, row) in instance.rows.iter().enumerate() {
        let meta = ChunkMeta {
            doc_id: format!("doc{}", i % 7),
            title: format!("Doc {}", i % 7),
            text: format!("chunk {i}"),
            origin: format!("doc{}.md", i % 7),
        };
        index
            .add(format!("c{i}"), meta, &EmbeddingVector::new(row.clone()).unwrap())
            .unwrap();
    }
    index
}

/// Search results versus the oracle, then a save/load round trip.
pub fn check_index_instance(instance: &IndexInstance, exec: Execution, scratch: &Path) -> Result<(), String> {
    let index = build_index(instance);
    let query = EmbeddingVector::new(instance.query.clone()).unwrap();
    let got = index.search_with(&query, instance.k, exec).map_err(|e| e.to_string())?;
    let want = brute_force_knn(&instance.rows, &instance.query, instance.k);
    if got.len() != want.len() {
        return Err(format!("{} hits, oracle has {}", got.len(), want.len()));
    }
    for (rank, (hit, (row, d))) in got.iter().zip(&want).enumerate() {
        if hit.chunk_id != format!("c{row}") {
            return Err(format!("rank {rank}: {} but oracle says c{row}", hit.chunk_id));
        }
        let err = (f64::from(hit.l2_squared) - d).abs();
        if err > 1e-5 * d.abs().max(f64::MIN_POSITIVE) && err > 0.0 {
            return Err(format!("rank {rank}: distance {} vs oracle {d}", hit.l2_squared));
        }
    }
    let path = scratch.join("index.sfix");
    slideforge::kb::index_save(&index, &path).map_err(|e| e.to_string())?;
    let loaded = slideforge::kb::index_load(&path).map_err(|e| e.to_string())?;
    let bits = |m: &[f32]| m.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    if bits(loaded.matrix()) != bits(index.matrix()) || loaded.ids() != index.ids() || loaded.dim() != index.dim() {
        return Err("save/load changed the vectors".into());
    }
    if index.ids().iter().any(|id| loaded.metadata(id) != index.metadata(id)) {
        return Err("save/load changed the metadata".into());
    }
    if loaded.to_bytes() != index.to_bytes() {
        return Err("re-serialized bytes differ".into());
    }
    Ok(())
}

// -------------------------------------------------------------------- decks

fn random_string(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: [&str; 14] = [
        "a", "Z", " ", "\n", "\"", "\\", "é", "数", "🙂", "\t", "<", "&", "\u{0}", "}",
    ];
    (0..rng.gen_range(0..=max))
        .map(|_| *ALPHABET.choose(rng).unwrap())
        .collect()
}

pub fn random_deck(rng: &mut ChaCha8Rng) -> DeckExtract {
    let slides = (0..rng.gen_range(0..12))
        .map(|index| {
            let mut slide = SlideRecord::empty(index);
            slide.title = rng.gen_bool(0.8).then(|| random_string(rng, 20));
            slide.notes = rng.gen_bool(0.5).then(|| random_string(rng, 40));
            slide.body_blocks = (0..rng.gen_range(0..5))
                .map(|_| TextBlock {
                    text: random_string(rng, 30),
                    level: rng.gen_range(0..5),
                    is_bullet: rng.gen_bool(0.7),
                })
                .collect();
            slide.images = (0..rng.gen_range(0..3))
                .map(|n| ImageAsset {
                    id: format!("s{index}-img{n}"),
                    exported_path: rng.gen_bool(0.5).then(|| format!("media/{n}.png")),
                    ocr_text: random_string(rng, 15),
                    slide_index: index,
                    media_path: format!("ppt/media/image{n}.png"),
                    content_hash: format!("{:064x}", rng.gen::<u128>()),
                })
                .collect();
            slide.raw_text = slide.compose_raw_text();
            slide.ocr_text = slide.compose_ocr_text();
            slide
        })
        .collect();
    DeckExtract::new(random_string(rng, 12) + ".pptx", slides)
}

// ---------------------------------------------------------------- retrieval

pub fn local_hit(id: &str, similarity: f64) -> LocalHit {
    LocalHit {
        chunk_id: id.into(),
        l2_squared: 0.0,
        similarity,
        title: format!("Title {id}"),
        origin: format!("kb/{id}.md"),
        text: format!("snippet for {id}"),
    }
}

pub fn web_hit(n: usize, rank: usize) -> WebHit {
    WebHit {
        title: format!("Web {n}"),
        url: format!("https://example.org/{n}"),
        snippet: format!("web snippet {n}"),
        rank,
    }
}

/// Raising one local similarity never moves that hit later.
pub fn check_monotonicity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let locals: Vec<LocalHit> = (0..rng.gen_range(1..8))
        .map(|i| local_hit(&format!("l{i}"), rng.gen_range(0.0..=1.0)))
        .collect();
    let webs: Vec<WebHit> = (0..rng.gen_range(0..6)).map(|i| web_hit(i, i + 1)).collect();
    let weights = Weights {
        local: rng.gen_range(0.0..2.0),
        web: rng.gen_range(0.01..2.0),
    };
    let target = rng.gen_range(0..locals.len());
    let position = |hits: &[LocalHit]| -> Result<usize, String> {
        let merged = merge_score(hits, &webs, weights).map_err(|e| e.to_string())?;
        Ok(merged
            .iter()
            .position(|r| r.locator == hits[target].origin)
            .expect("every hit survives a merge"))
    };
    let before = position(&locals)?;
    let mut raised = locals.clone();
    raised[target].similarity += rng.gen_range(0.0..1.0);
    let after = position(&raised)?;
    if after > before {
        return Err(format!("raising similarity moved a hit from {before} to {after}"));
    }
    Ok(())
}

pub fn random_references(rng: &mut ChaCha8Rng) -> Vec<Reference> {
    const SNIPPETS: [&str; 5] = [
        "cloud computing enables elastic scale",
        "cloud computing enables elastic scale.",
        "blockchain ledgers are append only",
        "agile teams deliver in short iterations",
        "totally unrelated words here",
    ];
    let locals: Vec<LocalHit> = (0..rng.gen_range(0..6))
        .map(|i| {
            let mut hit = local_hit(&format!("l{}", rng.gen_range(0..4)), rng.gen_range(0.0..1.0));
            hit.text = SNIPPETS.choose(rng).unwrap().to_string();
            hit.chunk_id = format!("x{i}");
            hit
        })
        .collect();
    let webs: Vec<WebHit> = (0..rng.gen_range(0..6))
        .map(|i| {
            let mut hit = web_hit(rng.gen_range(0..4), i + 1);
            hit.snippet = SNIPPETS.choose(rng).unwrap().to_string();
            hit
        })
        .collect();
    merge_score(&locals, &webs, Weights::default()).unwrap()
}

pub fn check_dedup_idempotent(refs: &[Reference], embed: &dyn EmbeddingClient) -> Result<(), String> {
    let (once, _) = dedup(refs, Some(embed), 0.95);
    let (twice, _) = dedup(&once, Some(embed), 0.95);
    if once != twice {
        return Err(format!(
            "dedup not idempotent: {} then {} references",
            once.len(),
            twice.len()
        ));
    }
    let mut locators: Vec<&str> = once.iter().map(|r| r.locator.as_str()).collect();
    locators.sort_unstable();
    locators.dedup();
    if locators.len() != once.len() {
        return Err("duplicate locator survived".into());
    }
    Ok(())
}
