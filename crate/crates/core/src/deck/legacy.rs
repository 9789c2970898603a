use std::fs;
use std::path::PathBuf;
use std::process::Command;

use super::DeckError;

/// Converts legacy binary decks to Open XML with an external command run
/// as `<command> <input.ppt> <output.pptx>`.
#[derive(Debug, Clone)]
pub struct LegacyConverter {
    command: PathBuf,
}

impl LegacyConverter {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
        }
    }

    pub fn convert(&self, bytes: &[u8]) -> Result<Vec<u8>, DeckError> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.ppt");
        let output = dir.path().join("output.pptx");
        fs::write(&input, bytes)?;
        let status = Command::new(&self.command)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| DeckError::UnsupportedFormat(format!("converter {}: {e}", self.command.display())))?;
        if !status.success() {
            return Err(DeckError::UnsupportedFormat(format!(
                "converter {} exited with {status}",
                self.command.display()
            )));
        }
        Ok(fs::read(&output)?)
    }
}
