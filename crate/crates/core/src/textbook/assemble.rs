//! Final Markdown assembly: title, metadata, contents, chapters in plan
//! order and one merged bibliography.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::retrieval::{format_citations, Reference};

use super::customize::CustomizationSpec;
use super::plan::BookPlan;
use super::quality::heading;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterDraft {
    pub number: usize,
    pub title: String,
    pub body_markdown: String,
    /// `references[k - 1]` is what the body cites as `[Rk]`.
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ChapterOutcome {
    Drafted(ChapterDraft),
    Failed {
        number: usize,
        title: String,
        reason: String,
    },
}

impl ChapterOutcome {
    pub fn number(&self) -> usize {
        match self {
            ChapterOutcome::Drafted(d) => d.number,
            ChapterOutcome::Failed { number, .. } => *number,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, ChapterOutcome::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookMetadata {
    pub title: String,
    pub source_name: String,
    pub customization: CustomizationSpec,
    pub generated_at: String,
    pub model_id: String,
}

/// A rendered chapter. Bodies are stored as they appear in the book, with
/// demoted headings and global citation numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookChapter {
    pub number: usize,
    pub title: String,
    pub body_markdown: String,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Textbook {
    pub metadata: BookMetadata,
    pub chapters: Vec<BookChapter>,
    pub bibliography: Vec<Reference>,
}

/// GitHub-style heading anchor.
pub fn anchor(text: &str) -> String {
    text.trim()
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            ' ' => Some('-'),
            c if c.is_alphanumeric() || c == '-' || c == '_' => Some(c),
            _ => None,
        })
        .collect()
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Applies `f` to every line outside fenced code blocks.
fn map_prose_lines(body: &str, mut f: impl FnMut(&str) -> String) -> String {
    let mut fence: Option<&str> = None;
    let mut out: Vec<String> = Vec::new();
    for line in body.lines() {
        let t = line.trim_start();
        let marker = ["```", "~~~"].into_iter().find(|m| t.starts_with(m));
        match (fence, marker) {
            (None, Some(m)) => {
                fence = Some(m);
                out.push(line.to_string());
            }
            (Some(open), Some(m)) if open == m => {
                fence = None;
                out.push(line.to_string());
            }
            (Some(_), _) => out.push(line.to_string()),
            (None, None) => out.push(f(line)),
        }
    }
    out.join("\n")
}

/// Shifts body headings so the shallowest becomes level 3 and no heading
/// is more than one level below its predecessor.
pub fn normalize_headings(body: &str) -> String {
    let mut min_level = usize::MAX;
    map_prose_lines(body, |line| {
        if let Some((level, _)) = heading(line) {
            min_level = min_level.min(level);
        }
        line.to_string()
    });
    if min_level == usize::MAX {
        return body.to_string();
    }
    let mut previous = 2usize;
    map_prose_lines(body, |line| match heading(line) {
        Some((level, text)) => {
            let shifted = level + 3 - min_level;
            let level = shifted.clamp(3, (previous + 1).min(6));
            previous = level;
            format!("{} {}", "#".repeat(level), text)
        }
        None => line.to_string(),
    })
}

/// Rewrites `[Rk]` tags through `map`; unmapped tags stay as written.
pub fn renumber_citations(body: &str, map: impl Fn(usize) -> Option<usize>) -> String {
    map_prose_lines(body, |line| {
        let mut out = String::with_capacity(line.len());
        let mut rest = line;
        while let Some(pos) = rest.find("[R") {
            let (before, tail) = rest.split_at(pos);
            out.push_str(before);
            let digits = tail[2..].bytes().take_while(u8::is_ascii_digit).count();
            let closed = tail.as_bytes().get(2 + digits) == Some(&b']');
            let escaped = out.ends_with('\\');
            let mapped = (digits > 0 && closed && !escaped)
                .then(|| tail[2..2 + digits].parse().ok().and_then(&map))
                .flatten();
            match mapped {
                Some(global) => {
                    out.push_str(&format!("[R{global}]"));
                    rest = &tail[3 + digits..];
                }
                None => {
                    out.push_str("[R");
                    rest = &tail[2..];
                }
            }
        }
        out.push_str(rest);
        out
    })
}

fn placeholder(reason: &str) -> String {
    format!(
        "> [!WARNING]\n> This chapter could not be generated: {}",
        one_line(reason).replace('[', "\\[")
    )
}

fn metadata_block(meta: &BookMetadata) -> String {
    let spec = &meta.customization;
    let mut lines = vec![
        format!("> - **Source deck:** {}", one_line(&meta.source_name)),
        format!("> - **Model:** {}", meta.model_id),
        format!("> - **Language:** {}", spec.output_language),
        format!("> - **Style:** {}", spec.style.as_str()),
        format!("> - **Difficulty:** {}", spec.difficulty.as_str()),
    ];
    if !spec.objectives.is_empty() {
        let objectives: Vec<String> = spec.objectives.iter().map(|o| one_line(o)).collect();
        lines.push(format!("> - **Objectives:** {}", objectives.join("; ")));
    }
    lines.push(format!("> - **Generated:** {}", meta.generated_at));
    lines.join("\n")
}

/// Builds the book from chapter outcomes (matched to the plan by number,
/// so generation order is irrelevant) and renders it.
pub fn assemble(
    plan: &BookPlan,
    outcomes: &[ChapterOutcome],
    spec: &CustomizationSpec,
    source_name: &str,
    generated_at: &str,
) -> (Textbook, String) {
    let by_number: HashMap<usize, &ChapterOutcome> = outcomes.iter().map(|o| (o.number(), o)).collect();

    let mut bibliography: Vec<Reference> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    let mut chapters = Vec::with_capacity(plan.chapters.len());
    for chapter in &plan.chapters {
        let rendered = match by_number.get(&chapter.number) {
            Some(ChapterOutcome::Drafted(draft)) => {
                let local_to_global: Vec<usize> = draft
                    .references
                    .iter()
                    .map(|r| {
                        *position.entry(r.locator.clone()).or_insert_with(|| {
                            bibliography.push(r.clone());
                            bibliography.len()
                        })
                    })
                    .collect();
                let body = renumber_citations(&draft.body_markdown, |k| {
                    k.checked_sub(1).and_then(|i| local_to_global.get(i).copied())
                });
                BookChapter {
                    number: chapter.number,
                    title: chapter.title.clone(),
                    body_markdown: normalize_headings(body.trim()),
                    failed: None,
                }
            }
            Some(ChapterOutcome::Failed { reason, .. }) => BookChapter {
                number: chapter.number,
                title: chapter.title.clone(),
                body_markdown: placeholder(reason),
                failed: Some(reason.clone()),
            },
            None => {
                let reason = "no draft was produced";
                BookChapter {
                    number: chapter.number,
                    title: chapter.title.clone(),
                    body_markdown: placeholder(reason),
                    failed: Some(reason.into()),
                }
            }
        };
        chapters.push(rendered);
    }

    let book = Textbook {
        metadata: BookMetadata {
            title: plan.book_title.clone(),
            source_name: source_name.to_string(),
            customization: spec.clone(),
            generated_at: generated_at.to_string(),
            model_id: spec.model_id.clone(),
        },
        chapters,
        bibliography,
    };
    let markdown = render(&book);
    (book, markdown)
}

pub fn render(book: &Textbook) -> String {
    let mut out = format!(
        "# {}\n\n{}\n\n## Contents\n\n",
        one_line(&book.metadata.title),
        metadata_block(&book.metadata)
    );
    let headings: Vec<String> = book
        .chapters
        .iter()
        .map(|c| format!("Chapter {}: {}", c.number, one_line(&c.title)))
        .collect();
    for (i, h) in headings.iter().enumerate() {
        out.push_str(&format!(
            "{}. [{}](#{})\n",
            i + 1,
            h.replace('[', "\\[").replace(']', "\\]"),
            anchor(h)
        ));
    }
    for (chapter, h) in book.chapters.iter().zip(&headings) {
        out.push_str(&format!("\n## {h}\n\n{}\n", chapter.body_markdown));
    }
    out.push('\n');
    out.push_str(&format_citations(&book.bibliography));
    out.push('\n');
    out
}
