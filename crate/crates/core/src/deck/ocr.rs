use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{content_hash, DeckError, DeckExtract, DeckWarning, ImageAsset};
use crate::exec::Execution;

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct OcrError(pub String);

/// Turns image bytes into text. Preprocessing (contrast, denoise,
/// grayscale, rescale) belongs to the adapter.
pub trait OcrEngine: Send + Sync {
    fn ensure_available(&self) -> Result<(), DeckError> {
        Ok(())
    }

    fn recognize(&self, image_path: &Path, bytes: &[u8], hints: &[String]) -> Result<String, OcrError>;
}

/// Engine that recognizes nothing; used when OCR is not configured.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoOcr;

impl OcrEngine for NoOcr {
    fn recognize(&self, _: &Path, _: &[u8], _: &[String]) -> Result<String, OcrError> {
        Ok(String::new())
    }
}

/// Fixed content-hash → text table.
#[derive(Debug, Default, Clone)]
pub struct ScriptedOcr {
    by_hash: BTreeMap<String, String>,
}

impl ScriptedOcr {
    pub fn new(by_hash: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            by_hash: by_hash.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, hash: impl Into<String>, text: impl Into<String>) {
        self.by_hash.insert(hash.into(), text.into());
    }
}

impl OcrEngine for ScriptedOcr {
    fn recognize(&self, _: &Path, bytes: &[u8], _: &[String]) -> Result<String, OcrError> {
        let hash = content_hash(bytes);
        self.by_hash
            .get(&hash)
            .cloned()
            .ok_or_else(|| OcrError(format!("no scripted text for {hash}")))
    }
}

/// Runs an installed OCR binary once per image and reads stdout.
///
/// Arguments are a template: `{image}` becomes the image path and
/// `{langs}` the `+`-joined language hints. The default template,
/// `{image} stdout -l {langs}`, matches tesseract.
#[derive(Debug, Clone)]
pub struct ExternalOcr {
    command: PathBuf,
    args: Vec<String>,
}

impl ExternalOcr {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            args: ["{image}", "stdout", "-l", "{langs}"].map(String::from).to_vec(),
        }
    }

    pub fn with_args(mut self, args: Vec<String>) -> Self {
        self.args = args;
        self
    }

    fn resolve(&self) -> Option<PathBuf> {
        if self.command.components().count() > 1 {
            return self.command.is_file().then(|| self.command.clone());
        }
        let path = std::env::var_os("PATH")?;
        std::env::split_paths(&path)
            .map(|dir| dir.join(&self.command))
            .find(|candidate| candidate.is_file())
    }
}

impl OcrEngine for ExternalOcr {
    fn ensure_available(&self) -> Result<(), DeckError> {
        self.resolve()
            .map(|_| ())
            .ok_or_else(|| DeckError::EngineUnavailable(format!("{} not found", self.command.display())))
    }

    fn recognize(&self, image_path: &Path, _: &[u8], hints: &[String]) -> Result<String, OcrError> {
        let langs = if hints.is_empty() {
            "eng".to_string()
        } else {
            hints.join("+")
        };
        let image = image_path.to_string_lossy();
        let args = self
            .args
            .iter()
            .map(|a| a.replace("{image}", &image).replace("{langs}", &langs));
        let output = Command::new(&self.command)
            .args(args)
            .output()
            .map_err(|e| OcrError(format!("spawn {}: {e}", self.command.display())))?;
        if !output.status.success() {
            return Err(OcrError(format!(
                "{} exited with {}: {}",
                self.command.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&output.stdout).trim().to_string())
    }
}

/// Runs OCR over exported assets and writes the text back onto the deck.
/// A failing image contributes an empty string and a warning.
pub fn ocr_deck(
    mut deck: DeckExtract,
    assets: &[ImageAsset],
    engine: &dyn OcrEngine,
    language_hints: &[String],
    exec: Execution,
) -> Result<(DeckExtract, Vec<DeckWarning>), DeckError> {
    if assets.is_empty() {
        for slide in &mut deck.slides {
            slide.ocr_text = slide.compose_ocr_text();
        }
        return Ok((deck, Vec::new()));
    }
    engine.ensure_available()?;

    // Recognize each distinct image once.
    let mut unique: Vec<&ImageAsset> = Vec::new();
    for asset in assets {
        if !unique.iter().any(|u| u.content_hash == asset.content_hash) {
            unique.push(asset);
        }
    }
    let results = exec.map(&unique, |asset| {
        let path = asset
            .exported_path
            .as_deref()
            .ok_or_else(|| OcrError("image was not exported".into()))?;
        let bytes = fs::read(path).map_err(|e| OcrError(format!("{path}: {e}")))?;
        engine.recognize(Path::new(path), &bytes, language_hints)
    });

    let mut warnings = Vec::new();
    let mut text_by_hash = HashMap::new();
    for (asset, result) in unique.iter().zip(results) {
        let text = result.unwrap_or_else(|e| {
            tracing::warn!(image = %asset.id, "OCR failed: {e}");
            warnings.push(DeckWarning {
                slide_index: Some(asset.slide_index),
                message: format!("OCR failed for {}: {e}", asset.id),
            });
            String::new()
        });
        text_by_hash.insert(asset.content_hash.as_str(), text);
    }

    let by_id: HashMap<&str, &ImageAsset> = assets.iter().map(|a| (a.id.as_str(), a)).collect();
    for slide in &mut deck.slides {
        for image in &mut slide.images {
            if let Some(asset) = by_id.get(image.id.as_str()) {
                image.exported_path.clone_from(&asset.exported_path);
                image.ocr_text = text_by_hash
                    .get(asset.content_hash.as_str())
                    .cloned()
                    .unwrap_or_default();
            }
        }
        slide.ocr_text = slide.compose_ocr_text();
    }
    Ok((deck, warnings))
}
