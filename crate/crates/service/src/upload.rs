//! Upload validation, applied before any parsing.

use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_MAX_UPLOAD;

const ZIP_MAGIC: &[u8] = b"PK\x03\x04";
const OLE_MAGIC: &[u8] = &[0xD0, 0xCF, 0x11, 0xE0, 0xA1, 0xB1, 0x1A, 0xE1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadPolicy {
    pub max_bytes: u64,
    pub allowed_extensions: Vec<String>,
    pub require_zip_magic: bool,
}

impl Default for UploadPolicy {
    fn default() -> Self {
        Self {
            max_bytes: DEFAULT_MAX_UPLOAD,
            allowed_extensions: vec![".pptx".into(), ".ppt".into()],
            require_zip_magic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadKind {
    Pptx,
    LegacyPpt,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UploadError {
    #[error("{0}")]
    InvalidFileType(String),
    #[error("upload is {size} bytes; the limit is {limit}")]
    TooLarge { size: u64, limit: u64 },
}

fn extension(file_name: &str) -> Option<String> {
    let name = file_name.rsplit(['/', '\\']).next().unwrap_or(file_name);
    name.rfind('.')
        .filter(|&i| i > 0)
        .map(|i| name[i..].to_ascii_lowercase())
}

impl UploadPolicy {
    pub fn with_max_bytes(max_bytes: u64) -> Self {
        Self {
            max_bytes,
            ..Self::default()
        }
    }

    /// Extension check alone, usable before the body has been read.
    pub fn check_name(&self, file_name: &str, legacy_enabled: bool) -> Result<UploadKind, UploadError> {
        let ext = extension(file_name).ok_or_else(|| {
            UploadError::InvalidFileType(format!(
                "{file_name:?} has no file extension; upload a .pptx or .ppt file"
            ))
        })?;
        if !self.allowed_extensions.iter().any(|a| a.eq_ignore_ascii_case(&ext)) {
            return Err(UploadError::InvalidFileType(format!(
                "{ext} files are not accepted; allowed: {}",
                self.allowed_extensions.join(", ")
            )));
        }
        match ext.as_str() {
            ".ppt" if !legacy_enabled => Err(UploadError::InvalidFileType(
                "legacy .ppt uploads need a configured converter (SLIDEFORGE_PPT_CONVERTER); save the deck as .pptx instead"
                    .into(),
            )),
            ".ppt" => Ok(UploadKind::LegacyPpt),
            _ => Ok(UploadKind::Pptx),
        }
    }

    pub fn check_size(&self, size: u64) -> Result<(), UploadError> {
        if size > self.max_bytes {
            Err(UploadError::TooLarge {
                size,
                limit: self.max_bytes,
            })
        } else {
            Ok(())
        }
    }

    /// Full check: extension, size, then container magic.
    pub fn check(&self, file_name: &str, bytes: &[u8], legacy_enabled: bool) -> Result<UploadKind, UploadError> {
        let kind = self.check_name(file_name, legacy_enabled)?;
        self.check_size(bytes.len() as u64)?;
        match kind {
            UploadKind::Pptx if self.require_zip_magic && !bytes.starts_with(ZIP_MAGIC) => Err(
                UploadError::InvalidFileType("the file is not a ZIP container, so it cannot be a .pptx deck".into()),
            ),
            UploadKind::LegacyPpt if !bytes.starts_with(OLE_MAGIC) => Err(UploadError::InvalidFileType(
                "the file is not a legacy PowerPoint container".into(),
            )),
            kind => Ok(kind),
        }
    }
}
