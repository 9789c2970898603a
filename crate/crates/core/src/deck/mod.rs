//! Presentation extraction: container validation, slide text in reading
//! order, embedded image export, OCR association and the canonical JSON
//! model.

mod archive;
mod images;
mod legacy;
mod ocr;
mod slide;
mod xml;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use archive::{open_deck, DeckArchive};
pub use images::extract_images;
pub use legacy::LegacyConverter;
pub use ocr::{ocr_deck, ExternalOcr, NoOcr, OcrEngine, OcrError, ScriptedOcr};
pub use slide::{extract_slides, extract_slides_with};

use crate::exec::Execution;

pub(crate) use slide::content_hash;

#[derive(Debug, thiserror::Error)]
pub enum DeckError {
    #[error("not a ZIP container")]
    NotAnArchive,
    #[error("not a presentation: {0}")]
    NotAPresentation(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("slide index {index} out of range for {count} slides")]
    SlideOutOfRange { index: usize, count: usize },
    #[error("OCR engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("invalid deck JSON: {0}")]
    InvalidJson(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A non-fatal problem recorded during extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeckWarning {
    pub slide_index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for DeckWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.slide_index {
            Some(i) => write!(f, "slide {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub text: String,
    pub level: u32,
    pub is_bullet: bool,
}

/// An embedded picture. `exported_path` is set once the bytes have been
/// written out for OCR; it serializes as `path`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub id: String,
    #[serde(rename = "path")]
    pub exported_path: Option<String>,
    pub ocr_text: String,
    pub slide_index: usize,
    pub media_path: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub index: usize,
    pub title: Option<String>,
    pub raw_text: String,
    pub ocr_text: String,
    pub images: Vec<ImageAsset>,
    pub notes: Option<String>,
    pub body_blocks: Vec<TextBlock>,
}

impl SlideRecord {
    pub fn empty(index: usize) -> Self {
        Self {
            index,
            title: None,
            raw_text: String::new(),
            ocr_text: String::new(),
            images: Vec::new(),
            notes: None,
            body_blocks: Vec::new(),
        }
    }

    /// Title, body blocks and notes joined by newlines, skipping absent parts.
    pub fn compose_raw_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(self.body_blocks.len() + 2);
        parts.extend(self.title.as_deref());
        parts.extend(self.body_blocks.iter().map(|b| b.text.as_str()));
        parts.extend(self.notes.as_deref());
        parts.join("\n")
    }

    /// Non-empty OCR outputs of this slide's images, in image order.
    pub fn compose_ocr_text(&self) -> String {
        self.images
            .iter()
            .map(|img| img.ocr_text.as_str())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeckExtract {
    pub source_name: String,
    pub slide_count: usize,
    pub slides: Vec<SlideRecord>,
}

impl DeckExtract {
    pub fn new(source_name: impl Into<String>, slides: Vec<SlideRecord>) -> Self {
        Self {
            source_name: source_name.into(),
            slide_count: slides.len(),
            slides,
        }
    }

    pub fn assets(&self) -> impl Iterator<Item = &ImageAsset> {
        self.slides.iter().flat_map(|s| s.images.iter())
    }

    fn validate(&self) -> Result<(), DeckError> {
        if self.slide_count != self.slides.len() {
            return Err(DeckError::InvalidJson(format!(
                "slide_count {} but {} slides",
                self.slide_count,
                self.slides.len()
            )));
        }
        if let Some((pos, slide)) = self.slides.iter().enumerate().find(|(pos, s)| s.index != *pos) {
            return Err(DeckError::InvalidJson(format!(
                "slide at position {pos} has index {}",
                slide.index
            )));
        }
        Ok(())
    }
}

pub fn deck_to_json(deck: &DeckExtract) -> String {
    serde_json::to_string_pretty(deck).expect("deck model always serializes")
}

pub fn deck_from_json(text: &str) -> Result<DeckExtract, DeckError> {
    let deck: DeckExtract = serde_json::from_str(text).map_err(|e| DeckError::InvalidJson(e.to_string()))?;
    deck.validate()?;
    Ok(deck)
}

/// Knobs for [`extract_deck`].
pub struct ExtractOptions<'a> {
    pub export_dir: &'a Path,
    pub engine: &'a dyn OcrEngine,
    pub language_hints: Vec<String>,
    pub exec: Execution,
}

impl<'a> ExtractOptions<'a> {
    pub fn new(export_dir: &'a Path, engine: &'a dyn OcrEngine) -> Self {
        Self {
            export_dir,
            engine,
            language_hints: vec!["eng".to_string()],
            exec: Execution::default(),
        }
    }
}

/// Full extraction: open, walk slides, export images and run OCR.
pub fn extract_deck(
    bytes: &[u8],
    source_name: &str,
    options: &ExtractOptions<'_>,
) -> Result<(DeckExtract, Vec<DeckWarning>), DeckError> {
    let archive = open_deck(bytes, source_name)?;
    let (mut slides, mut warnings) = extract_slides_with(&archive, options.exec);
    let mut assets = Vec::new();
    for slide in &mut slides {
        let (exported, w) = extract_images(&archive, slide.index, options.export_dir)?;
        warnings.extend(w);
        slide.images = exported.clone();
        assets.extend(exported);
    }
    let deck = DeckExtract::new(source_name, slides);
    let (deck, w) = ocr_deck(deck, &assets, options.engine, &options.language_hints, options.exec)?;
    warnings.extend(w);
    Ok((deck, warnings))
}
