use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::KbError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub id: String,
    pub title: String,
    pub origin: String,
    pub full_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocKind {
    PlainText,
    Markdown,
    Pdf,
}

impl DocKind {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "txt" | "text" => Some(Self::PlainText),
            "md" | "markdown" => Some(Self::Markdown),
            "pdf" => Some(Self::Pdf),
            _ => None,
        }
    }
}

/// External PDF-to-text command, run as `<command> <file.pdf>`; stdout
/// is the extracted text.
#[derive(Debug, Clone)]
pub struct PdfExtractor {
    command: PathBuf,
}

impl PdfExtractor {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
        }
    }

    pub fn extract(&self, pdf: &[u8]) -> Result<String, KbError> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.pdf");
        fs::write(&input, pdf)?;
        let output = Command::new(&self.command)
            .arg(&input)
            .output()
            .map_err(|e| KbError::ExtractorUnavailable(format!("{}: {e}", self.command.display())))?;
        if !output.status.success() {
            return Err(KbError::ExtractorFailed(format!(
                "{} exited with {}: {}",
                self.command.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }
}

/// NFC with all line endings folded to `\n`.
pub fn normalize_text(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n").nfc().collect()
}

/// Builds a [`SourceDoc`]. Markdown is the stored form, so Markdown and
/// plain text pass through apart from normalization.
pub fn ingest_document(
    source: &[u8],
    kind: DocKind,
    title: &str,
    origin: &str,
    pdf: Option<&PdfExtractor>,
) -> Result<SourceDoc, KbError> {
    let raw = match kind {
        DocKind::PlainText | DocKind::Markdown => String::from_utf8_lossy(source).into_owned(),
        DocKind::Pdf => pdf
            .ok_or_else(|| KbError::ExtractorUnavailable("no PDF extractor configured".into()))?
            .extract(source)?,
    };
    let full_text = normalize_text(&raw);
    if full_text.trim().is_empty() {
        return Err(KbError::EmptyDocument(origin.to_string()));
    }
    let mut hasher = Sha256::new();
    hasher.update(origin.as_bytes());
    hasher.update([0]);
    hasher.update(full_text.as_bytes());
    let id = hex::encode(&hasher.finalize()[..8]);
    Ok(SourceDoc {
        id,
        title: title.to_string(),
        origin: origin.to_string(),
        full_text,
    })
}
