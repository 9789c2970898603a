//! Chapter planning: strict-JSON plan requests with bounded re-prompts and
//! a repair pass that turns any usable plan into an exact partition of the
//! slide indices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::deck::DeckExtract;

use super::customize::CustomizationSpec;
use super::llm::{CompletionRequest, LlmClient};
use super::prompt::build_plan_prompt;
use super::{GenerationParams, TextbookError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterPlan {
    pub number: usize,
    pub title: String,
    pub summary: String,
    pub slide_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookPlan {
    pub book_title: String,
    pub chapters: Vec<ChapterPlan>,
}

impl BookPlan {
    /// Checks numbering, ordering, and that chapters partition `0..slide_count`.
    pub fn validate(&self, slide_count: usize) -> Result<(), String> {
        let mut seen = vec![false; slide_count];
        for (pos, chapter) in self.chapters.iter().enumerate() {
            if chapter.number != pos + 1 {
                return Err(format!("chapter at position {pos} is numbered {}", chapter.number));
            }
            if chapter.slide_indices.is_empty() {
                return Err(format!("chapter {} has no slides", chapter.number));
            }
            if !chapter.slide_indices.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("chapter {} indices are not sorted", chapter.number));
            }
            for &i in &chapter.slide_indices {
                match seen.get_mut(i) {
                    None => return Err(format!("slide {i} out of range")),
                    Some(true) => return Err(format!("slide {i} assigned twice")),
                    Some(flag) => *flag = true,
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(missing) => Err(format!("slide {missing} unassigned")),
            None => Ok(()),
        }
    }
}

/// Plan as returned by the model, before repair.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawPlan {
    #[serde(default)]
    pub book_title: String,
    pub chapters: Vec<RawChapter>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawChapter {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub summary: String,
    pub slide_indices: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOutcome {
    pub plan: BookPlan,
    /// Re-prompts needed before a usable response arrived.
    pub retries: u32,
}

fn strip_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

pub fn parse_plan_response(text: &str) -> Result<RawPlan, String> {
    let plan: RawPlan = serde_json::from_str(strip_fences(text)).map_err(|e| format!("invalid JSON: {e}"))?;
    if plan.chapters.is_empty() {
        return Err("the plan has no chapters".into());
    }
    Ok(plan)
}

/// Drops out-of-range and repeated indices (first chapter wins), gives each
/// unassigned slide to the chapter of its nearest originally assigned
/// neighbour (lower index on ties), removes empty chapters and renumbers.
pub fn repair_plan(raw: &RawPlan, slide_count: usize, fallback_title: &str) -> Result<BookPlan, String> {
    let mut owner: Vec<Option<usize>> = vec![None; slide_count];
    for (c, chapter) in raw.chapters.iter().enumerate() {
        for &i in &chapter.slide_indices {
            if let Some(slot) = usize::try_from(i).ok().and_then(|i| owner.get_mut(i)) {
                slot.get_or_insert(c);
            }
        }
    }
    let assigned: Vec<usize> = (0..slide_count).filter(|&i| owner[i].is_some()).collect();
    if assigned.is_empty() {
        return Err("the plan assigns no valid slide index".into());
    }
    let mut repaired = owner.clone();
    for (i, slot) in repaired.iter_mut().enumerate() {
        if slot.is_none() {
            let nearest = match assigned.binary_search(&i) {
                Ok(_) => unreachable!("unassigned index cannot be in the assigned list"),
                Err(pos) => {
                    let below = pos.checked_sub(1).map(|p| assigned[p]);
                    let above = assigned.get(pos).copied();
                    match (below, above) {
                        (Some(b), Some(a)) if a - i < i - b => a,
                        (Some(b), _) => b,
                        (None, Some(a)) => a,
                        (None, None) => unreachable!("assigned is non-empty"),
                    }
                }
            };
            *slot = owner[nearest];
        }
    }
    let mut by_chapter: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in repaired.iter().enumerate() {
        by_chapter.entry(c.expect("every slot is filled")).or_default().push(i);
    }
    let chapters = by_chapter
        .into_iter()
        .enumerate()
        .map(|(pos, (c, slide_indices))| {
            let source = &raw.chapters[c];
            let title = source.title.trim();
            ChapterPlan {
                number: pos + 1,
                title: if title.is_empty() {
                    format!("Part {}", pos + 1)
                } else {
                    title.to_string()
                },
                summary: source.summary.trim().to_string(),
                slide_indices,
            }
        })
        .collect();
    let book_title = raw.book_title.trim();
    Ok(BookPlan {
        book_title: if book_title.is_empty() {
            fallback_title.to_string()
        } else {
            book_title.to_string()
        },
        chapters,
    })
}

/// Asks the model for a plan, re-prompting with the parse error appended
/// up to `params.plan_retries` times.
pub fn plan_structure(
    deck: &DeckExtract,
    spec: &CustomizationSpec,
    llm: &dyn LlmClient,
    params: &GenerationParams,
) -> Result<PlanOutcome, TextbookError> {
    if deck.slide_count == 0 {
        return Err(TextbookError::EmptyDeck);
    }
    let (system, base_user) = build_plan_prompt(deck, spec);
    let fallback_title = deck
        .source_name
        .rsplit_once('.')
        .map_or(deck.source_name.as_str(), |(stem, _)| stem)
        .to_string();
    let mut user = base_user.clone();
    let mut last_error = String::new();
    for attempt in 0..=params.plan_retries {
        let request = CompletionRequest {
            model_id: spec.model_id.clone(),
            system_prompt: system.clone(),
            user_prompt: user.clone(),
            temperature: params.plan_temperature,
            max_tokens: params.plan_max_tokens,
        };
        let outcome = llm
            .complete(&request)
            .map_err(|e| format!("model call failed: {e}"))
            .and_then(|text| parse_plan_response(&text))
            .and_then(|raw| repair_plan(&raw, deck.slide_count, &fallback_title));
        match outcome {
            Ok(plan) => {
                debug_assert!(plan.validate(deck.slide_count).is_ok());
                return Ok(PlanOutcome { plan, retries: attempt });
            }
            Err(e) => {
                tracing::warn!(attempt, "chapter plan rejected: {e}");
                user = format!(
                    "{base_user}\nYour previous response could not be used: {e}\nRespond again with the JSON object only.\n"
                );
                last_error = e;
            }
        }
    }
    Err(TextbookError::PlanningFailed {
        attempts: params.plan_retries + 1,
        reason: last_error,
    })
}
