//! Chapter drafting and the end-to-end book generator.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::deck::DeckExtract;
use crate::exec::Execution;
use crate::retrieval::{chapter_query, retrieve, score_references, RetrievalBundle, RetrievalConfig, RetrievalSources};

use super::assemble::{assemble, ChapterDraft, ChapterOutcome, Textbook};
use super::customize::CustomizationSpec;
use super::llm::{CompletionRequest, LlmClient};
use super::plan::{plan_structure, BookPlan, ChapterPlan};
use super::prompt::{build_chapter_prompt, ChapterPrompt};
use super::quality::chapter_keywords;
use super::{GenerationParams, TextbookError};

/// Calls the model until it returns non-blank text, at most
/// `1 + params.chapter_retries` times.
pub fn generate_chapter(
    prompt: &ChapterPrompt,
    spec: &CustomizationSpec,
    llm: &dyn LlmClient,
    params: &GenerationParams,
) -> Result<ChapterDraft, TextbookError> {
    let request = CompletionRequest {
        model_id: spec.model_id.clone(),
        system_prompt: prompt.system_prompt.clone(),
        user_prompt: prompt.user_prompt.clone(),
        temperature: params.chapter_temperature,
        max_tokens: params.chapter_max_tokens,
    };
    let mut reason = String::new();
    for attempt in 0..=params.chapter_retries {
        match llm.complete(&request) {
            Ok(text) if !text.trim().is_empty() => {
                return Ok(ChapterDraft {
                    number: prompt.number,
                    title: prompt.title.clone(),
                    body_markdown: text.trim().to_string(),
                    references: prompt.references.clone(),
                });
            }
            Ok(_) => reason = "the model returned an empty chapter".into(),
            Err(e) => reason = e.to_string(),
        }
        tracing::warn!(chapter = prompt.number, attempt, "chapter attempt failed: {reason}");
    }
    Err(TextbookError::ChapterFailed {
        number: prompt.number,
        reason,
    })
}

/// Everything one generation run needs besides the deck and customization.
pub struct BookGenerator<'a> {
    pub llm: &'a dyn LlmClient,
    pub sources: RetrievalSources<'a>,
    pub retrieval: RetrievalConfig,
    pub params: GenerationParams,
    pub exec: Execution,
}

#[derive(Debug, Clone)]
pub struct DraftedChapters {
    pub outcomes: Vec<ChapterOutcome>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GeneratedBook {
    pub plan: BookPlan,
    pub plan_retries: u32,
    pub textbook: Textbook,
    pub markdown: String,
    pub warnings: Vec<String>,
}

impl BookGenerator<'_> {
    pub fn plan(&self, deck: &DeckExtract, spec: &CustomizationSpec) -> Result<super::PlanOutcome, TextbookError> {
        plan_structure(deck, spec, self.llm, &self.params)
    }

    fn bundle_for(&self, chapter: &ChapterPlan, deck: &DeckExtract, warnings: &mut Vec<String>) -> RetrievalBundle {
        let slides: Vec<_> = chapter
            .slide_indices
            .iter()
            .filter_map(|&i| deck.slides.get(i))
            .collect();
        let query = chapter_query(&chapter.title, &chapter_keywords(&slides));
        match retrieve(&query, &self.sources, &self.retrieval) {
            Ok(bundle) => {
                warnings.extend(
                    bundle
                        .warnings
                        .iter()
                        .map(|w| format!("chapter {}: {w}", chapter.number)),
                );
                bundle
            }
            Err(e) => {
                warnings.push(format!("chapter {}: retrieval skipped: {e}", chapter.number));
                RetrievalBundle {
                    query,
                    references: Vec::new(),
                    warnings: Vec::new(),
                }
            }
        }
    }

    /// Retrieval, prompting and drafting for one chapter.
    pub fn draft_chapter(
        &self,
        chapter: &ChapterPlan,
        deck: &DeckExtract,
        spec: &CustomizationSpec,
    ) -> (ChapterOutcome, Vec<String>) {
        let mut warnings = Vec::new();
        let bundle = self.bundle_for(chapter, deck, &mut warnings);
        let prompt = build_chapter_prompt(chapter, deck, &bundle, spec);
        let outcome = match generate_chapter(&prompt, spec, self.llm, &self.params) {
            Ok(mut draft) => {
                score_references(&mut draft.references, &draft.body_markdown, self.sources.embed);
                ChapterOutcome::Drafted(draft)
            }
            Err(e) => ChapterOutcome::Failed {
                number: chapter.number,
                title: chapter.title.clone(),
                reason: e.to_string(),
            },
        };
        (outcome, warnings)
    }

    /// Drafts every chapter on at most `params.chapter_workers` threads.
    /// `on_done(finished, total)` fires after each chapter completes.
    pub fn draft_chapters(
        &self,
        plan: &BookPlan,
        deck: &DeckExtract,
        spec: &CustomizationSpec,
        on_done: &(dyn Fn(usize, usize) + Sync),
    ) -> DraftedChapters {
        let total = plan.chapters.len();
        let finished = AtomicUsize::new(0);
        let results = self
            .exec
            .map_bounded(&plan.chapters, self.params.chapter_workers, |chapter| {
                let result = self.draft_chapter(chapter, deck, spec);
                on_done(finished.fetch_add(1, Ordering::SeqCst) + 1, total);
                result
            });
        let mut outcomes = Vec::with_capacity(total);
        let mut warnings = Vec::new();
        for (outcome, w) in results {
            outcomes.push(outcome);
            warnings.extend(w);
        }
        DraftedChapters { outcomes, warnings }
    }

    /// Plan, draft and assemble in one call.
    pub fn generate(
        &self,
        deck: &DeckExtract,
        spec: &CustomizationSpec,
        generated_at: &str,
    ) -> Result<GeneratedBook, TextbookError> {
        let planned = self.plan(deck, spec)?;
        let drafted = self.draft_chapters(&planned.plan, deck, spec, &|_, _| {});
        let (textbook, markdown) = assemble(&planned.plan, &drafted.outcomes, spec, &deck.source_name, generated_at);
        Ok(GeneratedBook {
            plan: planned.plan,
            plan_retries: planned.retries,
            textbook,
            markdown,
            warnings: drafted.warnings,
        })
    }
}
