use serde::{Deserialize, Serialize};

use super::TextbookError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Academic,
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Introductory,
    Intermediate,
    Advanced,
}

impl Style {
    pub fn as_str(self) -> &'static str {
        match self {
            Style::Academic => "academic",
            Style::Simplified => "simplified",
        }
    }
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Introductory => "introductory",
            Difficulty::Intermediate => "intermediate",
            Difficulty::Advanced => "advanced",
        }
    }
}

fn default_true() -> bool {
    true
}

/// Per-request tailoring of the generated book.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomizationSpec {
    /// BCP-47 tag such as `en` or `ja`.
    pub output_language: String,
    pub style: Style,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub objectives: Vec<String>,
    pub model_id: String,
    #[serde(default = "default_true")]
    pub include_exercises: bool,
}

impl Default for CustomizationSpec {
    fn default() -> Self {
        Self {
            output_language: "en".into(),
            style: Style::Academic,
            difficulty: Difficulty::Introductory,
            objectives: Vec::new(),
            model_id: "stub-echo".into(),
            include_exercises: true,
        }
    }
}

impl CustomizationSpec {
    /// Checks the language tag shape and that `model_id` is known.
    pub fn validate(&self, is_known_model: impl Fn(&str) -> bool) -> Result<(), TextbookError> {
        if !is_language_tag(&self.output_language) {
            return Err(TextbookError::InvalidCustomization(format!(
                "output_language {:?} is not a language tag",
                self.output_language
            )));
        }
        if !is_known_model(&self.model_id) {
            return Err(TextbookError::UnknownModel(self.model_id.clone()));
        }
        if self.objectives.iter().any(|o| o.trim().is_empty()) {
            return Err(TextbookError::InvalidCustomization(
                "objectives must not contain blank entries".into(),
            ));
        }
        Ok(())
    }

    /// Parses and validates a JSON customization document.
    pub fn from_json(text: &str, is_known_model: impl Fn(&str) -> bool) -> Result<Self, TextbookError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| TextbookError::InvalidCustomization(e.to_string()))?;
        spec.validate(is_known_model)?;
        Ok(spec)
    }
}

/// Syntactic BCP-47 check: a 2 to 8 letter primary subtag followed by
/// alphanumeric subtags of 1 to 8 characters.
pub fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary_ok = parts
        .next()
        .is_some_and(|p| (2..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphabetic()));
    primary_ok && parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_tags() {
        for ok in ["en", "ja", "en-US", "zh-Hant-TW"] {
            assert!(is_language_tag(ok), "{ok}");
        }
        for bad in ["", "e", "en_US", "en-", "123", "english-language-x-toolongsubtag"] {
            assert!(!is_language_tag(bad), "{bad}");
        }
    }

    #[test]
    fn parse_applies_defaults_and_rejects_unknown_models() {
        let json = r#"{"output_language":"ja","style":"simplified","difficulty":"advanced","model_id":"stub-echo"}"#;
        let spec = CustomizationSpec::from_json(json, |m| m == "stub-echo").unwrap();
        assert!(spec.include_exercises);
        assert!(spec.objectives.is_empty());
        assert!(matches!(
            CustomizationSpec::from_json(json, |_| false),
            Err(TextbookError::UnknownModel(_))
        ));
        assert!(matches!(
            CustomizationSpec::from_json(r#"{"style":"fancy"}"#, |_| true),
            Err(TextbookError::InvalidCustomization(_))
        ));
    }
}
