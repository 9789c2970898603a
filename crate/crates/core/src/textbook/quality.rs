//! Automatable quality checks: keyword coverage and Markdown lint.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::deck::{DeckExtract, SlideRecord};

pub const DEFAULT_TOP_K: usize = 20;

const STOPWORDS: &[&str] = &[
    // English
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her",
    "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more",
    "most", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out",
    "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
    "your", "yours", // Japanese particles and copulas
    "は", "が", "を", "に", "で", "と", "の", "も", "へ", "や", "か", "な", "ね", "よ", "から", "まで", "より", "など",
    "です", "ます", "する", "した", "して", "こと", "これ", "それ",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Case-folded alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Tokens worth keeping as keywords: two or more characters, not purely
/// numeric, not a stopword.
pub fn is_salient(token: &str) -> bool {
    token.chars().count() >= 2 && !token.chars().all(|c| c.is_numeric()) && !is_stopword(token)
}

/// The `k` most frequent salient tokens; ties break lexically.
pub fn top_tokens<'a>(texts: impl IntoIterator<Item = &'a str>, k: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for token in tokenize(text).filter(|t| is_salient(t)) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t).collect()
}

/// Retrieval keywords for a chapter: the top five tokens of its slides.
pub fn chapter_keywords(slides: &[&SlideRecord]) -> Vec<String> {
    top_tokens(slides.iter().map(|s| s.raw_text.as_str()), 5)
}

/// Salient words of every slide title plus the `top_k` most frequent
/// salient raw-text tokens.
pub fn deck_keywords(deck: &DeckExtract, top_k: usize) -> BTreeSet<String> {
    let mut keywords: BTreeSet<String> = deck
        .slides
        .iter()
        .filter_map(|s| s.title.as_deref())
        .flat_map(tokenize)
        .filter(|t| is_salient(t))
        .collect();
    keywords.extend(top_tokens(deck.slides.iter().map(|s| s.raw_text.as_str()), top_k));
    keywords
}

/// Fraction of deck keywords occurring as whole words in `book_md`.
pub fn keyword_coverage(book_md: &str, deck: &DeckExtract, top_k: usize) -> f64 {
    let keywords = deck_keywords(deck, top_k);
    if keywords.is_empty() {
        return 1.0;
    }
    let book: HashSet<String> = tokenize(book_md).collect();
    let found = keywords.iter().filter(|k| book.contains(*k)).count();
    found as f64 / keywords.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LintIssue {
    HeadingJump { line: usize, from: usize, to: usize },
    EmptyChapter { line: usize, heading: String },
    ReferencesSectionCount { found: usize },
    DanglingCitation { line: usize, tag: usize, entries: usize },
}

/// ATX heading level and text, or `None` for other lines.
pub fn heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let level = trimmed.bytes().take_while(|&b| b == b'#').count();
    if !(1..=6).contains(&level) {
        return None;
    }
    let rest = &trimmed[level..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    Some((level, rest.trim().trim_end_matches('#').trim_end()))
}

fn fence_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    if t.starts_with("```") {
        Some("```")
    } else if t.starts_with("~~~") {
        Some("~~~")
    } else {
        None
    }
}

/// Every line with its 1-based number and whether it is prose (outside
/// fenced code, fence markers included in the code).
fn classify_lines(md: &str) -> Vec<(usize, &str, bool)> {
    let mut open: Option<&str> = None;
    let mut out = Vec::new();
    for (i, line) in md.lines().enumerate() {
        let prose = match (open, fence_marker(line)) {
            (None, Some(m)) => {
                open = Some(m);
                false
            }
            (Some(o), Some(m)) if o == m => {
                open = None;
                false
            }
            (None, None) => true,
            _ => false,
        };
        out.push((i + 1, line, prose));
    }
    out
}

/// Lines outside fenced code blocks, with 1-based line numbers.
pub fn prose_lines(md: &str) -> Vec<(usize, &str)> {
    classify_lines(md)
        .into_iter()
        .filter(|(_, _, prose)| *prose)
        .map(|(n, l, _)| (n, l))
        .collect()
}

/// `[Rn]` tags in a line, skipping backslash-escaped brackets.
pub fn citation_tags(line: &str) -> Vec<usize> {
    let bytes = line.as_bytes();
    let mut tags = Vec::new();
    let mut i = 0;
    while let Some(pos) = line[i..].find("[R") {
        let start = i + pos;
        let digits_from = start + 2;
        let digits = bytes[digits_from..].iter().take_while(|b| b.is_ascii_digit()).count();
        let escaped = start > 0 && bytes[start - 1] == b'\\';
        if digits > 0 && bytes.get(digits_from + digits) == Some(&b']') && !escaped {
            if let Ok(n) = line[digits_from..digits_from + digits].parse() {
                tags.push(n);
            }
        }
        i = digits_from;
    }
    tags
}

fn is_list_entry(line: &str) -> bool {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    digits > 0 && line[digits..].starts_with(". ")
}

pub fn format_lint(book_md: &str) -> Vec<LintIssue> {
    let lines = prose_lines(book_md);
    let mut issues = Vec::new();

    let mut previous: Option<usize> = None;
    for &(n, line) in &lines {
        if let Some((level, _)) = heading(line) {
            if let Some(prev) = previous {
                if level > prev + 1 {
                    issues.push(LintIssue::HeadingJump {
                        line: n,
                        from: prev,
                        to: level,
                    });
                }
            }
            previous = Some(level);
        }
    }

    let all = classify_lines(book_md);
    let section_heading = |line: &str, prose: bool| prose && heading(line).is_some_and(|(lvl, _)| lvl <= 2);
    for (pos, &(n, line, prose)) in all.iter().enumerate() {
        let Some((2, text)) = heading(line).filter(|_| prose) else {
            continue;
        };
        if !text.starts_with("Chapter ") {
            continue;
        }
        let has_body = all[pos + 1..]
            .iter()
            .take_while(|(_, l, p)| !section_heading(l, *p))
            .any(|(_, l, _)| !l.trim().is_empty());
        if !has_body {
            issues.push(LintIssue::EmptyChapter {
                line: n,
                heading: text.to_string(),
            });
        }
    }

    let reference_headings: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| matches!(heading(l), Some((lvl, "References")) if lvl <= 2))
        .map(|(pos, _)| pos)
        .collect();
    if reference_headings.len() != 1 {
        issues.push(LintIssue::ReferencesSectionCount {
            found: reference_headings.len(),
        });
    }
    let entries = reference_headings.first().map_or(0, |&start| {
        lines[start + 1..]
            .iter()
            .take_while(|(_, l)| heading(l).is_none_or(|(lvl, _)| lvl > 2))
            .filter(|(_, l)| is_list_entry(l))
            .count()
    });
    for &(n, line) in &lines {
        for tag in citation_tags(line) {
            if tag == 0 || tag > entries {
                issues.push(LintIssue::DanglingCitation { line: n, tag, entries });
            }
        }
    }
    issues
}
