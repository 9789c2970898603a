//! Hybrid reference retrieval: local index hits and web results merged
//! under one weighted score, deduplicated, scored for relevance against
//! generated text and rendered as a Markdown reference list.

mod web;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use web::{
    search_web, CustomSearchClient, NoWebSearch, RateLimiter, ScriptedWebSearch, SyntheticWebSearch, WebHit,
    WebSearchClient, WebSearchError, CUSTOM_SEARCH_ENDPOINT,
};

use crate::kb::{EmbedError, EmbeddingClient, KbError, VectorIndex};

pub const DEFAULT_LOCAL_K: usize = 5;
pub const DEFAULT_WEB_N: usize = 5;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("weights must be non-negative with a positive sum (local {local}, web {web})")]
    InvalidWeights { local: f64, web: f64 },
    #[error(transparent)]
    Index(#[from] KbError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalHit {
    pub chunk_id: String,
    pub l2_squared: f32,
    /// `1 / (1 + l2_squared)`, in `(0, 1]`.
    pub similarity: f64,
    pub title: String,
    pub origin: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Academic,
    Web,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub kind: ReferenceKind,
    pub title: String,
    /// Document origin for academic sources, URL for web sources.
    pub locator: String,
    pub snippet: String,
    pub relevance_score: Option<f64>,
    pub combined_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBundle {
    pub query: String,
    pub references: Vec<Reference>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub local: f64,
    pub web: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { local: 0.7, web: 0.3 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let ok = self.local >= 0.0 && self.web >= 0.0 && self.local + self.web > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RetrievalError::InvalidWeights {
                local: self.local,
                web: self.web,
            })
        }
    }
}

pub fn similarity_from_l2(l2_squared: f32) -> f64 {
    1.0 / (1.0 + f64::from(l2_squared))
}

/// Embeds the query and returns the `k` nearest chunks, most similar first.
pub fn search_local(
    index: &VectorIndex,
    embed: &dyn EmbeddingClient,
    query: &str,
    k: usize,
) -> Result<Vec<LocalHit>, RetrievalError> {
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let vector = embed.embed(query)?;
    let hits = index.search(&vector, k)?;
    Ok(hits
        .into_iter()
        .map(|hit| {
            let meta = index
                .metadata(&hit.chunk_id)
                .cloned()
                .unwrap_or_else(|| unreachable!("index keeps metadata for every id"));
            LocalHit {
                similarity: similarity_from_l2(hit.l2_squared),
                chunk_id: hit.chunk_id,
                l2_squared: hit.l2_squared,
                title: meta.title,
                origin: meta.origin,
                text: meta.text,
            }
        })
        .collect())
}

fn kind_rank(kind: ReferenceKind) -> u8 {
    match kind {
        ReferenceKind::Academic => 0,
        ReferenceKind::Web => 1,
    }
}

/// Descending score; academic before web on ties; otherwise input order
/// (the sort is stable).
fn bundle_order(a: &Reference, b: &Reference) -> Ordering {
    b.combined_score
        .total_cmp(&a.combined_score)
        .then(kind_rank(a.kind).cmp(&kind_rank(b.kind)))
}

/// Academic score `w_local * similarity`, web score `w_web / rank`.
pub fn merge_score(local: &[LocalHit], web: &[WebHit], weights: Weights) -> Result<Vec<Reference>, RetrievalError> {
    weights.validate()?;
    let mut refs: Vec<Reference> = local
        .iter()
        .map(|hit| Reference {
            kind: ReferenceKind::Academic,
            title: hit.title.clone(),
            locator: hit.origin.clone(),
            snippet: hit.text.clone(),
            relevance_score: None,
            combined_score: weights.local * hit.similarity,
        })
        .chain(web.iter().map(|hit| Reference {
            kind: ReferenceKind::Web,
            title: hit.title.clone(),
            locator: hit.url.clone(),
            snippet: hit.snippet.clone(),
            relevance_score: None,
            combined_score: weights.web / hit.rank.max(1) as f64,
        }))
        .collect();
    refs.sort_by(bundle_order);
    Ok(refs)
}

/// Removes exact locator duplicates, then near-duplicate snippets
/// (cosine ≥ `threshold`), always keeping the earlier (higher-scored)
/// entry. Without usable embeddings only the exact pass runs and a
/// warning is returned.
pub fn dedup(
    refs: &[Reference],
    embed: Option<&dyn EmbeddingClient>,
    threshold: f64,
) -> (Vec<Reference>, Option<String>) {
    let mut seen = HashSet::new();
    let unique: Vec<Reference> = refs
        .iter()
        .filter(|r| seen.insert(r.locator.clone()))
        .cloned()
        .collect();
    let Some(embed) = embed else {
        return (unique, None);
    };
    let snippets: Vec<String> = unique.iter().map(|r| r.snippet.clone()).collect();
    let vectors = match embed.embed_batch(&snippets) {
        Ok(v) if v.len() == unique.len() => v,
        Ok(v) => {
            let warning = format!(
                "semantic dedup skipped: {} embeddings for {} references",
                v.len(),
                unique.len()
            );
            return (unique, Some(warning));
        }
        Err(e) => return (unique, Some(format!("semantic dedup skipped: {e}"))),
    };
    let mut kept: Vec<usize> = Vec::with_capacity(unique.len());
    for i in 0..unique.len() {
        if kept.iter().all(|&j| vectors[i].cosine(&vectors[j]) < threshold) {
            kept.push(i);
        }
    }
    (kept.into_iter().map(|i| unique[i].clone()).collect(), None)
}

/// `(cos + 1) / 2` between the snippet and the chapter text; `None`
/// when either is empty or embedding fails.
pub fn relevance_score(reference: &Reference, chapter_text: &str, embed: &dyn EmbeddingClient) -> Option<f64> {
    if reference.snippet.trim().is_empty() || chapter_text.trim().is_empty() {
        return None;
    }
    let vectors = embed
        .embed_batch(&[reference.snippet.clone(), chapter_text.to_string()])
        .ok()?;
    let [snippet, chapter] = vectors.as_slice() else {
        return None;
    };
    Some(((snippet.cosine(chapter) + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Scores every reference in place against `chapter_text`.
pub fn score_references(refs: &mut [Reference], chapter_text: &str, embed: &dyn EmbeddingClient) {
    for r in refs {
        r.relevance_score = relevance_score(r, chapter_text, embed);
    }
}

/// Two decimals, truncated toward zero.
pub fn truncate_2dp(value: f64) -> String {
    let truncated = ((value * 100.0) + 1e-9).trunc() / 100.0;
    format!("{truncated:.2}")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn escape_link_text(text: &str) -> String {
    one_line(text).replace('[', "\\[").replace(']', "\\]")
}

pub fn format_citations(refs: &[Reference]) -> String {
    let mut out = String::from("## References\n\n");
    if refs.is_empty() {
        out.push_str("_None._");
        return out;
    }
    for (i, r) in refs.iter().enumerate() {
        let n = i + 1;
        let relevance = r
            .relevance_score
            .map(|s| format!(" (relevance: {})", truncate_2dp(s)))
            .unwrap_or_default();
        match r.kind {
            ReferenceKind::Academic => {
                out.push_str(&format!(
                    "{n}. {}. {}.{relevance}\n",
                    one_line(&r.title),
                    one_line(&r.locator)
                ));
            }
            ReferenceKind::Web => {
                let indent = " ".repeat(n.to_string().len() + 2);
                out.push_str(&format!(
                    "{n}. [{}]({}){relevance}\n",
                    escape_link_text(&r.title),
                    r.locator
                ));
                if !r.snippet.trim().is_empty() {
                    out.push_str(&format!("{indent}{}\n", one_line(&r.snippet)));
                }
                out.push_str(&format!("{indent}{}\n", r.locator));
            }
        }
    }
    out.truncate(out.trim_end().len());
    out
}

/// Handles for one retrieval pass.
pub struct RetrievalSources<'a> {
    pub index: Option<&'a VectorIndex>,
    pub embed: &'a dyn EmbeddingClient,
    pub web: &'a dyn WebSearchClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub local_k: usize,
    pub web_n: usize,
    pub weights: Weights,
    pub dedup_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            local_k: DEFAULT_LOCAL_K,
            web_n: DEFAULT_WEB_N,
            weights: Weights::default(),
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

/// Local + web retrieval for one query. Web failures and local embedding
/// failures degrade to whichever side still works, with a warning.
pub fn retrieve(
    query: &str,
    sources: &RetrievalSources<'_>,
    config: &RetrievalConfig,
) -> Result<RetrievalBundle, RetrievalError> {
    config.weights.validate()?;
    let mut warnings = Vec::new();
    let local = match sources.index {
        Some(index) => match search_local(index, sources.embed, query, config.local_k) {
            Ok(hits) => hits,
            Err(RetrievalError::Embed(e)) => {
                warnings.push(format!("local retrieval skipped: {e}"));
                Vec::new()
            }
            Err(e) => return Err(e),
        },
        None => Vec::new(),
    };
    let web = match search_web(sources.web, query, config.web_n) {
        Ok(hits) => hits,
        Err(e) => {
            tracing::warn!(query, "web search degraded: {e}");
            warnings.push(format!("web search unavailable: {e}"));
            Vec::new()
        }
    };
    let merged = merge_score(&local, &web, config.weights)?;
    let (references, warning) = dedup(&merged, Some(sources.embed), config.dedup_threshold);
    warnings.extend(warning);
    Ok(RetrievalBundle {
        query: query.to_string(),
        references,
        warnings,
    })
}

/// Chapter title followed by its keywords.
pub fn chapter_query(title: &str, keywords: &[String]) -> String {
    std::iter::once(title)
        .chain(keywords.iter().map(String::as_str))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{ChunkMeta, EmbeddingVector, HashingEmbedder};

    fn local(id: &str, similarity: f64) -> LocalHit {
        LocalHit {
            chunk_id: id.into(),
            l2_squared: (1.0 / similarity - 1.0) as f32,
            similarity,
            title: format!("Paper {id}"),
            origin: format!("{id}.pdf"),
            text: format!("snippet of {id}"),
        }
    }

    fn web(url: &str, rank: usize) -> WebHit {
        WebHit {
            title: format!("Site {url}"),
            url: url.into(),
            snippet: format!("text at {url}"),
            rank,
        }
    }

    fn reference(kind: ReferenceKind, locator: &str, snippet: &str, score: f64) -> Reference {
        Reference {
            kind,
            title: locator.to_uppercase(),
            locator: locator.into(),
            snippet: snippet.into(),
            relevance_score: None,
            combined_score: score,
        }
    }

    #[test]
    fn merge_example_ordering() {
        let refs = merge_score(
            &[local("l1", 1.0), local("l2", 0.5)],
            &[web("https://w1", 1), web("https://w2", 2)],
            Weights::default(),
        )
        .unwrap();
        let scores: Vec<f64> = refs.iter().map(|r| r.combined_score).collect();
        for (got, want) in scores.iter().zip([0.70, 0.35, 0.30, 0.15]) {
            assert!((got - want).abs() < 1e-12, "{scores:?}");
        }
        let order: Vec<&str> = refs.iter().map(|r| r.locator.as_str()).collect();
        assert_eq!(order, ["l1.pdf", "l2.pdf", "https://w1", "https://w2"]);
    }

    #[test]
    fn merge_without_web_keeps_local_order() {
        let refs = merge_score(&[local("a", 0.9), local("b", 0.4)], &[], Weights::default()).unwrap();
        assert_eq!(refs.len(), 2);
        assert!((refs[0].combined_score - 0.63).abs() < 1e-12);
        assert!((refs[1].combined_score - 0.28).abs() < 1e-12);
    }

    #[test]
    fn zero_local_weight_puts_web_first() {
        let refs = merge_score(
            &[local("a", 1.0)],
            &[web("https://w", 5)],
            Weights { local: 0.0, web: 0.3 },
        )
        .unwrap();
        assert_eq!(refs[0].kind, ReferenceKind::Web);
    }

    #[test]
    fn ties_prefer_academic() {
        let refs = merge_score(&[local("a", 0.3 / 0.7)], &[web("https://w", 1)], Weights::default()).unwrap();
        assert!((refs[0].combined_score - refs[1].combined_score).abs() < 1e-12);
        // The web score is exactly 0.3; nudge-free equality is not guaranteed
        // in floating point, so only check order when the scores are equal.
        if refs[0].combined_score == refs[1].combined_score {
            assert_eq!(refs[0].kind, ReferenceKind::Academic);
        }
        let exact = merge_score(
            &[local("a", 1.0)],
            &[web("https://w", 1)],
            Weights { local: 0.5, web: 0.5 },
        )
        .unwrap();
        assert_eq!(exact[0].kind, ReferenceKind::Academic);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        assert!(merge_score(&[], &[], Weights { local: 0.0, web: 0.0 }).is_err());
        assert!(merge_score(&[], &[], Weights { local: -1.0, web: 2.0 }).is_err());
    }

    #[test]
    fn dedup_by_url_keeps_higher_scored() {
        let refs = vec![
            reference(ReferenceKind::Web, "https://same", "first", 0.3),
            reference(ReferenceKind::Web, "https://same", "second", 0.1),
        ];
        let (out, warning) = dedup(&refs, None, 0.95);
        assert!(warning.is_none());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].snippet, "first");
    }

    #[test]
    fn dedup_identical_snippets() {
        let embed = HashingEmbedder::new(256);
        let refs = vec![
            reference(ReferenceKind::Web, "https://a", "Cloud computing basics", 0.3),
            reference(ReferenceKind::Web, "https://b", "Cloud computing basics", 0.15),
        ];
        let (out, _) = dedup(&refs, Some(&embed), 0.95);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].locator, "https://a");
    }

    struct FailingEmbedder;
    impl EmbeddingClient for FailingEmbedder {
        fn dim(&self) -> usize {
            2
        }
        fn embed_batch(&self, _: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
            Err(EmbedError::Transport("offline".into()))
        }
    }

    #[test]
    fn dedup_degrades_to_exact_matching() {
        let refs = vec![
            reference(ReferenceKind::Web, "https://a", "same", 0.3),
            reference(ReferenceKind::Web, "https://b", "same", 0.2),
            reference(ReferenceKind::Web, "https://a", "same", 0.1),
        ];
        let (out, warning) = dedup(&refs, Some(&FailingEmbedder), 0.95);
        assert_eq!(out.len(), 2);
        assert!(warning.unwrap().contains("offline"));
        assert_eq!(relevance_score(&refs[0], "chapter", &FailingEmbedder), None);
    }

    #[test]
    fn relevance_of_identical_text_is_one() {
        let embed = HashingEmbedder::new(128);
        let r = reference(ReferenceKind::Academic, "a.pdf", "Feedback loops", 0.5);
        let score = relevance_score(&r, "Feedback loops", &embed).unwrap();
        assert!((score - 1.0).abs() < 1e-6);
        assert_eq!(relevance_score(&r, "  ", &embed), None);
    }

    #[test]
    fn citation_layout() {
        assert_eq!(format_citations(&[]), "## References\n\n_None._");
        let mut academic = reference(ReferenceKind::Academic, "papers/dx.pdf", "s", 0.7);
        academic.relevance_score = Some(0.876);
        let web = reference(ReferenceKind::Web, "https://example.org/dx", "A short snippet.", 0.3);
        let md = format_citations(&[academic, web]);
        assert!(md.contains("relevance: 0.87"), "{md}");
        let lines: Vec<&str> = md.lines().collect();
        assert!(lines.contains(&"   A short snippet."));
        assert!(lines.iter().any(|l| l.trim() == "https://example.org/dx"));
        assert!(md.contains("2. [HTTPS://EXAMPLE.ORG/DX](https://example.org/dx)"));
    }

    #[test]
    fn truncation_rounds_toward_zero() {
        assert_eq!(truncate_2dp(0.876), "0.87");
        assert_eq!(truncate_2dp(0.29), "0.29");
        assert_eq!(truncate_2dp(1.0), "1.00");
        assert_eq!(truncate_2dp(0.0), "0.00");
        assert_eq!(truncate_2dp(0.999), "0.99");
    }

    #[test]
    fn local_search_similarity() {
        let embed = HashingEmbedder::new(64);
        let mut index = VectorIndex::new(64);
        for (id, text) in [
            ("a", "stocks and flows"),
            ("b", "feedback loops"),
            ("c", "cloud native"),
        ] {
            let meta = ChunkMeta {
                doc_id: id.into(),
                title: id.into(),
                text: text.into(),
                origin: format!("{id}.md"),
            };
            index.add(id, meta, &embed.embed_one(text)).unwrap();
        }
        let hits = search_local(&index, &embed, "feedback loops", 3).unwrap();
        assert_eq!(hits[0].chunk_id, "b");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert!(search_local(&VectorIndex::new(64), &embed, "x", 3).unwrap().is_empty());
    }

    #[test]
    fn web_failure_degrades_bundle() {
        let embed = HashingEmbedder::new(64);
        let mut index = VectorIndex::new(64);
        let meta = ChunkMeta {
            doc_id: "d".into(),
            title: "Doc".into(),
            text: "feedback loops".into(),
            origin: "d.md".into(),
        };
        index.add("d:0", meta, &embed.embed_one("feedback loops")).unwrap();
        let failing = ScriptedWebSearch::failing(WebSearchError::QuotaExceeded("daily".into()));
        let sources = RetrievalSources {
            index: Some(&index),
            embed: &embed,
            web: &failing,
        };
        let bundle = retrieve("feedback", &sources, &RetrievalConfig::default()).unwrap();
        assert_eq!(bundle.references.len(), 1);
        assert_eq!(bundle.warnings.len(), 1);
    }

    #[test]
    fn query_joins_title_and_keywords() {
        assert_eq!(
            chapter_query("Cloud", &["elastic".into(), "scaling".into()]),
            "Cloud elastic scaling"
        );
    }
}
