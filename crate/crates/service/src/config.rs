//! Settings from defaults, then `SLIDEFORGE_*` environment variables, then
//! an optional TOML or JSON file whose keys override both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_UPLOAD: u64 = 50 * 1024 * 1024;
/// Dimension of the offline hashing embedder.
pub const DEFAULT_STUB_DIM: usize = 384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub workdir: PathBuf,
    pub bind: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    pub kb_dir: Option<PathBuf>,
    pub models_file: Option<PathBuf>,
    pub ocr_cmd: Option<String>,
    pub ocr_langs: Vec<String>,
    pub ppt_converter: Option<String>,
    pub pdf_cmd: Option<String>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
    pub embed_key: Option<String>,
    pub embed_dim: Option<usize>,
    pub search_key: Option<String>,
    pub search_cx: Option<String>,
    pub search_rate: f64,
    pub max_upload_bytes: u64,
    pub job_workers: usize,
    pub chapter_workers: usize,
    pub cache_ttl_secs: u64,
    pub job_max_age_hours: u64,
    pub cleanup_interval_secs: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("slideforge-work"),
            bind: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            static_dir: None,
            kb_dir: None,
            models_file: None,
            ocr_cmd: None,
            ocr_langs: vec!["eng".into()],
            ppt_converter: None,
            pdf_cmd: None,
            embed_url: None,
            embed_model: None,
            embed_key: None,
            embed_dim: None,
            search_key: None,
            search_cx: None,
            search_rate: 5.0,
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
            job_workers: 2,
            chapter_workers: 3,
            cache_ttl_secs: 3600,
            job_max_age_hours: 24,
            cleanup_interval_secs: 600,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{var}: {message}")]
    Env { var: String, message: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

fn parse_env<T: std::str::FromStr>(var: &str, value: String) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var: var.to_string(),
        message: e.to_string(),
    })
}

impl Settings {
    /// Defaults overridden by whichever `SLIDEFORGE_*` variables `env` yields.
    pub fn from_env(env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        let get = |name: &str| env(&format!("SLIDEFORGE_{name}")).filter(|v| !v.is_empty());
        macro_rules! text {
            ($field:ident, $name:literal) => {
                if let Some(v) = get($name) {
                    s.$field = Some(v.into());
                }
            };
        }
        macro_rules! parsed {
            ($field:ident, $name:literal) => {
                if let Some(v) = get($name) {
                    s.$field = parse_env(concat!("SLIDEFORGE_", $name), v)?;
                }
            };
        }
        if let Some(v) = get("WORKDIR") {
            s.workdir = v.into();
        }
        if let Some(v) = get("BIND") {
            s.bind = v;
        }
        parsed!(port, "PORT");
        text!(static_dir, "STATIC_DIR");
        text!(kb_dir, "KB_DIR");
        text!(models_file, "MODELS");
        text!(ocr_cmd, "OCR_CMD");
        if let Some(v) = get("OCR_LANGS") {
            s.ocr_langs = v
                .split(['+', ','])
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
        }
        text!(ppt_converter, "PPT_CONVERTER");
        text!(pdf_cmd, "PDF_CMD");
        text!(embed_url, "EMBED_URL");
        text!(embed_model, "EMBED_MODEL");
        text!(embed_key, "EMBED_KEY");
        if let Some(v) = get("EMBED_DIM") {
            s.embed_dim = Some(parse_env("SLIDEFORGE_EMBED_DIM", v)?);
        }
        text!(search_key, "SEARCH_KEY");
        text!(search_cx, "SEARCH_CX");
        parsed!(search_rate, "SEARCH_RATE");
        parsed!(max_upload_bytes, "MAX_UPLOAD_BYTES");
        parsed!(job_workers, "JOB_WORKERS");
        parsed!(chapter_workers, "CHAPTER_WORKERS");
        parsed!(cache_ttl_secs, "CACHE_TTL_SECS");
        parsed!(job_max_age_hours, "JOB_MAX_AGE_HOURS");
        Ok(s)
    }

    /// Overlays the keys present in a `.toml` or `.json` file.
    pub fn overlay_file(self, path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let overrides: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| err(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| err(e.to_string()))?,
        };
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(err("expected a table of settings".into()));
        };
        let mut merged = serde_json::to_value(&self).expect("settings serialize");
        let base = merged.as_object_mut().expect("settings are an object");
        for (key, value) in overrides {
            base.insert(key, value);
        }
        serde_json::from_value(merged).map_err(|e| err(e.to_string()))
    }

    /// Environment plus the file named by `explicit` or `SLIDEFORGE_CONFIG`.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let env = |k: &str| std::env::var(k).ok();
        let settings = Self::from_env(env)?;
        let file = explicit
            .map(Path::to_path_buf)
            .or_else(|| env("SLIDEFORGE_CONFIG").map(PathBuf::from));
        match file {
            Some(path) => settings.overlay_file(&path),
            None => Ok(settings),
        }
    }
}
