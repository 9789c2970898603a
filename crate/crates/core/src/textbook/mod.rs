//! Textbook generation: chapter planning, per-chapter prompting and
//! drafting through a pluggable chat model, Markdown assembly, and
//! automatable quality checks.

mod assemble;
mod customize;
mod generate;
pub mod llm;
mod plan;
pub mod prompt;
pub mod quality;

use serde::{Deserialize, Serialize};

pub use assemble::{
    anchor, assemble, normalize_headings, render, renumber_citations, BookChapter, BookMetadata, ChapterDraft,
    ChapterOutcome, Textbook,
};
pub use customize::{is_language_tag, CustomizationSpec, Difficulty, Style};
pub use generate::{generate_chapter, BookGenerator, DraftedChapters, GeneratedBook};
pub use llm::{
    CompletionRequest, EchoLlm, LlmClient, LlmError, ModelEntry, ModelRegistry, Provider, RegistryClient, RemoteLlm,
    ScriptedLlm,
};
pub use plan::{
    parse_plan_response, plan_structure, repair_plan, BookPlan, ChapterPlan, PlanOutcome, RawChapter, RawPlan,
};
pub use prompt::{build_chapter_prompt, build_plan_prompt, ChapterPrompt};
pub use quality::{format_lint, keyword_coverage, LintIssue, DEFAULT_TOP_K};

#[derive(Debug, thiserror::Error)]
pub enum TextbookError {
    #[error("the deck has no slides")]
    EmptyDeck,
    #[error("planning failed after {attempts} attempts: {reason}")]
    PlanningFailed { attempts: u32, reason: String },
    #[error("chapter {number} failed: {reason}")]
    ChapterFailed { number: usize, reason: String },
    #[error("invalid customization: {0}")]
    InvalidCustomization(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub plan_temperature: f32,
    pub chapter_temperature: f32,
    pub plan_max_tokens: u32,
    pub chapter_max_tokens: u32,
    /// Re-prompts after a malformed plan.
    pub plan_retries: u32,
    /// Re-tries after an empty or failed chapter.
    pub chapter_retries: u32,
    pub chapter_workers: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            plan_temperature: 0.3,
            chapter_temperature: 0.7,
            plan_max_tokens: 4096,
            chapter_max_tokens: 4096,
            plan_retries: 2,
            chapter_retries: 2,
            chapter_workers: 3,
        }
    }
}
