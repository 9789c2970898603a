//! Prompt construction for planning and chapter drafting, plus the
//! inverse parsers the offline echo model relies on.

use crate::deck::DeckExtract;
use crate::retrieval::{Reference, RetrievalBundle};

use super::customize::CustomizationSpec;
use super::plan::ChapterPlan;

pub const PLAN_TASK: &str = "TASK: chapter-plan";
pub const CHAPTER_TASK: &str = "TASK: chapter-draft";
pub const ROLE_PHRASE: &str = "expert textbook author";

const RAW_OPEN: &str = "--- raw text ---";
const OCR_OPEN: &str = "--- ocr text ---";
const UNTITLED: &str = "(untitled)";

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn slide_close(index: usize) -> String {
    format!("--- end of slide {index} ---")
}

fn customization_block(spec: &CustomizationSpec) -> String {
    let mut out = format!(
        "Output language: {}\nStyle: {}\nDifficulty: {}\n",
        spec.output_language,
        spec.style.as_str(),
        spec.difficulty.as_str()
    );
    if spec.objectives.is_empty() {
        out.push_str("Objectives: none\n");
    } else {
        out.push_str("Objectives:\n");
        for objective in &spec.objectives {
            out.push_str(&format!("- {}\n", one_line(objective)));
        }
    }
    out
}

/// Prompts asking for the JSON chapter plan. Each slide is summarized as
/// its title and first body line.
pub fn build_plan_prompt(deck: &DeckExtract, spec: &CustomizationSpec) -> (String, String) {
    let n = deck.slide_count;
    let system = format!(
        "You are an {ROLE_PHRASE} organizing lecture slides into textbook chapters. \
         Respond with strict JSON only, no prose and no code fences, matching \
         {{\"book_title\": string, \"chapters\": [{{\"title\": string, \"summary\": string, \"slide_indices\": [integer]}}]}}. \
         Every slide index from 0 to {last} must appear in exactly one chapter. \
         Keep related consecutive slides together and write titles and summaries in the output language.",
        last = n.saturating_sub(1)
    );
    let mut user = format!(
        "{PLAN_TASK}\nDeck: {}\nSlide count: {n}\n{}\nSlides:\n",
        one_line(&deck.source_name),
        customization_block(spec)
    );
    for slide in &deck.slides {
        let title = slide.title.as_deref().map(one_line).filter(|t| !t.is_empty());
        let first_line = slide
            .body_blocks
            .iter()
            .map(|b| one_line(&b.text))
            .find(|t| !t.is_empty())
            .unwrap_or_default();
        user.push_str(&format!(
            "[Slide {}] {} | {}\n",
            slide.index,
            title.as_deref().unwrap_or(UNTITLED),
            first_line
        ));
    }
    (system, user)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlineSlide {
    pub index: usize,
    pub title: Option<String>,
    pub first_line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanOutline {
    pub deck_name: String,
    pub slides: Vec<OutlineSlide>,
}

fn slide_label(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix("[Slide ")?;
    let close = rest.find(']')?;
    let index = rest[..close].parse().ok()?;
    Some((index, rest[close + 1..].trim_start()))
}

pub fn parse_plan_prompt(prompt: &str) -> PlanOutline {
    let mut outline = PlanOutline::default();
    for line in prompt.lines() {
        if let Some(name) = line.strip_prefix("Deck: ") {
            outline.deck_name = name.to_string();
        } else if let Some((index, rest)) = slide_label(line) {
            let (title, first_line) = rest.split_once(" | ").unwrap_or((rest.trim_end_matches(" |"), ""));
            outline.slides.push(OutlineSlide {
                index,
                title: (title != UNTITLED && !title.is_empty()).then(|| title.to_string()),
                first_line: first_line.to_string(),
            });
        }
    }
    outline
}

/// Prompts for one chapter plus the references its citation tags point at.
#[derive(Debug, Clone, PartialEq)]
pub struct ChapterPrompt {
    pub number: usize,
    pub title: String,
    pub system_prompt: String,
    pub user_prompt: String,
    /// `references[k - 1]` is cited as `[Rk]`.
    pub references: Vec<Reference>,
}

pub fn build_chapter_prompt(
    chapter: &ChapterPlan,
    deck: &DeckExtract,
    bundle: &RetrievalBundle,
    spec: &CustomizationSpec,
) -> ChapterPrompt {
    let mut system = format!(
        "You are an {ROLE_PHRASE}. Turn the lecture slide content below into one chapter of a textbook, \
         combining scholarly rigor with pedagogical clarity. Write in the language tagged {lang}, \
         in a {style} style suited to {difficulty} readers. \
         Output Markdown only. Do not repeat the chapter title; it is added later. \
         Open with a level-3 heading, then organize the explanation into level-3 body sections \
         that expand every slide point into connected prose with examples. \
         Support claims with the supplementary sources by citing their tags, for example [R1]; \
         never invent tags and do not add a reference list.",
        lang = spec.output_language,
        style = spec.style.as_str(),
        difficulty = spec.difficulty.as_str(),
    );
    if spec.include_exercises {
        system.push_str(" Finish with a level-3 \"Exercises\" section of practice questions.");
    }

    let mut user = format!(
        "{CHAPTER_TASK}\n\n## Customization\n{}Exercises: {}\n\n## Chapter\nNumber: {}\nTitle: {}\nSummary: {}\n\n## Slide content\n",
        customization_block(spec),
        if spec.include_exercises { "include" } else { "omit" },
        chapter.number,
        one_line(&chapter.title),
        one_line(&chapter.summary),
    );
    for &index in &chapter.slide_indices {
        let Some(slide) = deck.slides.get(index) else {
            continue;
        };
        user.push_str(&format!(
            "[Slide {index}]\n{RAW_OPEN}\n{}\n{OCR_OPEN}\n{}\n{}\n",
            slide.raw_text,
            slide.ocr_text,
            slide_close(index)
        ));
    }
    user.push_str("\n## References\n");
    if bundle.references.is_empty() {
        user.push_str("None.\n");
    }
    for (k, r) in bundle.references.iter().enumerate() {
        user.push_str(&format!(
            "[R{}] {}. {}\n{}\n",
            k + 1,
            one_line(&r.title),
            r.locator,
            one_line(&r.snippet)
        ));
    }
    ChapterPrompt {
        number: chapter.number,
        title: chapter.title.clone(),
        system_prompt: system,
        user_prompt: user,
        references: bundle.references.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSlide {
    pub index: usize,
    pub raw_text: String,
    pub ocr_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedChapterPrompt {
    pub title: String,
    pub summary: String,
    pub include_exercises: bool,
    pub slides: Vec<PromptSlide>,
    pub reference_count: usize,
}

pub fn parse_chapter_prompt(prompt: &str) -> ParsedChapterPrompt {
    #[derive(PartialEq)]
    enum Section {
        Head,
        Chapter,
        Slides,
        Raw,
        Ocr,
        References,
    }
    let mut parsed = ParsedChapterPrompt::default();
    let mut section = Section::Head;
    let mut current: Option<PromptSlide> = None;
    let mut buffer: Vec<&str> = Vec::new();
    for line in prompt.lines() {
        match section {
            Section::Raw | Section::Ocr => {
                let index = current.as_ref().map_or(usize::MAX, |s| s.index);
                if section == Section::Raw && line == OCR_OPEN {
                    if let Some(slide) = current.as_mut() {
                        slide.raw_text = buffer.join("\n");
                    }
                    buffer.clear();
                    section = Section::Ocr;
                } else if line == slide_close(index) {
                    if let Some(mut slide) = current.take() {
                        if section == Section::Raw {
                            slide.raw_text = buffer.join("\n");
                        } else {
                            slide.ocr_text = buffer.join("\n");
                        }
                        parsed.slides.push(slide);
                    }
                    buffer.clear();
                    section = Section::Slides;
                } else {
                    buffer.push(line);
                }
            }
            _ if line == "## Chapter" && section == Section::Head => section = Section::Chapter,
            _ if line == "## Slide content" && section == Section::Chapter => section = Section::Slides,
            _ if line == "## References" && section == Section::Slides => section = Section::References,
            Section::Head => {
                if let Some(v) = line.strip_prefix("Exercises: ") {
                    parsed.include_exercises = v == "include";
                }
            }
            Section::Chapter => {
                if let Some(v) = line.strip_prefix("Title: ") {
                    parsed.title = v.to_string();
                } else if let Some(v) = line.strip_prefix("Summary: ") {
                    parsed.summary = v.to_string();
                }
            }
            Section::Slides => {
                if let Some((index, _)) = slide_label(line) {
                    current = Some(PromptSlide {
                        index,
                        raw_text: String::new(),
                        ocr_text: String::new(),
                    });
                } else if line == RAW_OPEN && current.is_some() {
                    section = Section::Raw;
                }
            }
            Section::References => {
                let is_tag = line
                    .strip_prefix("[R")
                    .and_then(|r| r.split_once(']'))
                    .is_some_and(|(n, _)| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()));
                if is_tag {
                    parsed.reference_count += 1;
                }
            }
        }
    }
    parsed
}
