//! Chat-completion clients and the model registry.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{self, Attempt, RetryPolicy};

use super::prompt::{parse_chapter_prompt, parse_plan_prompt, CHAPTER_TASK, PLAN_TASK};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("missing API key: set {0}")]
    MissingKey(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("model endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Hex SHA-256 over both prompts, used to key scripted replies.
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.system_prompt, &self.user_prompt)
    }
}

pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system.as_bytes());
    hasher.update([0u8]);
    hasher.update(user.as_bytes());
    hex::encode(hasher.finalize())
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    /// Any endpoint speaking the OpenAI chat-completions format.
    OpenaiCompatible,
    /// Offline deterministic stub that echoes slide content.
    Echo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    pub provider: Provider,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Model name sent on the wire; defaults to `id`.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl ModelEntry {
    pub fn wire_model(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.id)
    }

    /// Whether the entry can be called with the current environment.
    pub fn is_available(&self) -> bool {
        match self.provider {
            Provider::Echo => true,
            Provider::OpenaiCompatible => {
                self.endpoint.is_some()
                    && self
                        .api_key_env
                        .as_deref()
                        .is_none_or(|var| std::env::var(var).is_ok_and(|v| !v.is_empty()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub models: Vec<ModelEntry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn builtin() -> Self {
        Self {
            models: vec![
                ModelEntry {
                    id: "gpt-4o".into(),
                    display_name: "GPT-4o".into(),
                    provider: Provider::OpenaiCompatible,
                    endpoint: Some("https://api.openai.com/v1/chat/completions".into()),
                    model: None,
                    api_key_env: Some("OPENAI_API_KEY".into()),
                },
                ModelEntry {
                    id: "deepseek-v3".into(),
                    display_name: "DeepSeek V3".into(),
                    provider: Provider::OpenaiCompatible,
                    endpoint: Some("https://api.deepseek.com/chat/completions".into()),
                    model: Some("deepseek-chat".into()),
                    api_key_env: Some("DEEPSEEK_API_KEY".into()),
                },
                ModelEntry {
                    id: "stub-echo".into(),
                    display_name: "Offline echo (testing)".into(),
                    provider: Provider::Echo,
                    endpoint: None,
                    model: None,
                    api_key_env: None,
                },
            ],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_json_str(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a `.toml` or `.json` registry file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let registry = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text)?,
            _ => Self::from_toml_str(&text)?,
        };
        registry.check()?;
        Ok(registry)
    }

    fn check(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if !seen.insert(m.id.as_str()) {
                return Err(format!("duplicate model id {:?}", m.id));
            }
            if m.provider == Provider::OpenaiCompatible && m.endpoint.is_none() {
                return Err(format!("model {:?} needs an endpoint", m.id));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }
}

/// Client for an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: http::LazyClient,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteLlm {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            client: http::LazyClient::new(Duration::from_secs(300)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl LlmClient for RemoteLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &request.system_prompt,
                },
                ChatMessage {
                    role: "user",
                    content: &request.user_prompt,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        self.retry.run(|_| {
            let mut call = self.client.get().post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                call = call.bearer_auth(key);
            }
            let response = call.send().map_err(|e| {
                let err = LlmError::Transport(e.to_string());
                if http::is_transient_error(&e) {
                    Attempt::Transient(err)
                } else {
                    Attempt::Fatal(err)
                }
            })?;
            let status = response.status();
            if !status.is_success() {
                let err = LlmError::Status {
                    status: status.as_u16(),
                    body: response.text().unwrap_or_default(),
                };
                return Err(if http::is_transient_status(status) {
                    Attempt::Transient(err)
                } else {
                    Attempt::Fatal(err)
                });
            }
            let parsed: ChatResponse = response
                .json()
                .map_err(|e| Attempt::Fatal(LlmError::Malformed(e.to_string())))?;
            parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| Attempt::Fatal(LlmError::Malformed("no choices[0].message.content".into())))
        })
    }
}

/// Routes each request to the registry entry named by `model_id`.
pub struct RegistryClient {
    registry: ModelRegistry,
    clients: HashMap<String, Arc<dyn LlmClient>>,
}

impl RegistryClient {
    pub fn new(registry: ModelRegistry) -> Self {
        let mut clients: HashMap<String, Arc<dyn LlmClient>> = HashMap::new();
        for entry in &registry.models {
            let client: Arc<dyn LlmClient> = match entry.provider {
                Provider::Echo => Arc::new(EchoLlm),
                Provider::OpenaiCompatible => {
                    let key = entry.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                    let endpoint = entry.endpoint.clone().unwrap_or_default();
                    Arc::new(RemoteLlm::new(endpoint, entry.wire_model(), key))
                }
            };
            clients.insert(entry.id.clone(), client);
        }
        Self { registry, clients }
    }

    /// Replaces the client behind one model id (used to inject stubs).
    pub fn with_client(mut self, id: &str, client: Arc<dyn LlmClient>) -> Self {
        self.clients.insert(id.to_string(), client);
        self
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }
}

impl LlmClient for RegistryClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let entry = self
            .registry
            .get(&request.model_id)
            .ok_or_else(|| LlmError::UnknownModel(request.model_id.clone()))?;
        if entry.provider == Provider::OpenaiCompatible && !entry.is_available() {
            let var = entry.api_key_env.clone().unwrap_or_default();
            return Err(LlmError::MissingKey(var));
        }
        self.clients
            .get(&request.model_id)
            .ok_or_else(|| LlmError::UnknownModel(request.model_id.clone()))?
            .complete(request)
    }
}

type Reply = Result<String, LlmError>;

#[derive(Default)]
struct ScriptState {
    sequence: Vec<Reply>,
    next: usize,
    calls: Vec<CompletionRequest>,
}

/// Replays canned replies. Lookup order: exact prompt hash, then the first
/// substring rule matching the user prompt, then the call sequence, then
/// the fallback client if any.
#[derive(Default)]
pub struct ScriptedLlm {
    by_hash: HashMap<String, Reply>,
    rules: Vec<(String, Reply)>,
    fallback: Option<Arc<dyn LlmClient>>,
    state: Mutex<ScriptState>,
}

impl ScriptedLlm {
    pub fn sequence(replies: impl IntoIterator<Item = Reply>) -> Self {
        let s = Self::default();
        s.state.lock().unwrap().sequence = replies.into_iter().collect();
        s
    }

    pub fn with_hash(mut self, hash: impl Into<String>, reply: Reply) -> Self {
        self.by_hash.insert(hash.into(), reply);
        self
    }

    pub fn with_rule(mut self, needle: impl Into<String>, reply: Reply) -> Self {
        self.rules.push((needle.into(), reply));
        self
    }

    pub fn with_fallback(mut self, client: Arc<dyn LlmClient>) -> Self {
        self.fallback = Some(client);
        self
    }

    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.state.lock().unwrap().calls.clone()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let scripted = {
            let mut state = self.state.lock().unwrap();
            state.calls.push(request.clone());
            if let Some(reply) = self.by_hash.get(&request.prompt_hash()) {
                Some(reply.clone())
            } else if let Some((_, reply)) = self
                .rules
                .iter()
                .find(|(needle, _)| request.user_prompt.contains(needle.as_str()))
            {
                Some(reply.clone())
            } else if state.next < state.sequence.len() {
                state.next += 1;
                Some(state.sequence[state.next - 1].clone())
            } else {
                None
            }
        };
        match (scripted, &self.fallback) {
            (Some(reply), _) => reply,
            (None, Some(fallback)) => fallback.complete(request),
            (None, None) => Err(LlmError::Scripted("script exhausted".into())),
        }
    }
}

/// Deterministic offline model. Plans group consecutive slides four to a
/// chapter; chapter drafts restate every slide's text verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoLlm;

pub const ECHO_SLIDES_PER_CHAPTER: usize = 4;

impl LlmClient for EchoLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let prompt = request.user_prompt.as_str();
        if prompt.starts_with(PLAN_TASK) {
            Ok(echo_plan(prompt))
        } else if prompt.starts_with(CHAPTER_TASK) {
            Ok(echo_chapter(prompt))
        } else {
            Ok(prompt.trim().to_string())
        }
    }
}

fn echo_plan(prompt: &str) -> String {
    let outline = parse_plan_prompt(prompt);
    let book_title = outline
        .slides
        .iter()
        .find_map(|s| s.title.clone())
        .unwrap_or_else(|| outline.deck_name.clone());
    let chapters: Vec<serde_json::Value> = outline
        .slides
        .chunks(ECHO_SLIDES_PER_CHAPTER)
        .enumerate()
        .map(|(n, group)| {
            let title = group
                .iter()
                .find_map(|s| s.title.clone())
                .unwrap_or_else(|| format!("Part {}", n + 1));
            let first = group[0].index;
            let last = group[group.len() - 1].index;
            serde_json::json!({
                "title": title,
                "summary": format!("Slides {} to {}.", first + 1, last + 1),
                "slide_indices": group.iter().map(|s| s.index).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "book_title": book_title, "chapters": chapters }).to_string()
}

fn escape_line(line: &str) -> String {
    let trimmed = line.trim_start();
    if trimmed.starts_with('#') || trimmed.starts_with("```") || trimmed.starts_with('>') {
        format!("\\{trimmed}")
    } else {
        line.to_string()
    }
}

fn echo_chapter(prompt: &str) -> String {
    let parsed = parse_chapter_prompt(prompt);
    let mut out = String::new();
    out.push_str("### Overview\n\n");
    out.push_str(&format!("This chapter covers {}.", parsed.title));
    if !parsed.summary.is_empty() {
        out.push(' ');
        out.push_str(&parsed.summary);
    }
    out.push_str("\n\n");
    for slide in &parsed.slides {
        let heading = slide
            .raw_text
            .lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
            .unwrap_or_else(|| format!("Slide {}", slide.index + 1));
        out.push_str(&format!("### {}\n\n", heading.trim_start_matches('#').trim()));
        for text in [&slide.raw_text, &slide.ocr_text] {
            let lines: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(escape_line).collect();
            if !lines.is_empty() {
                out.push_str(&lines.join("\n\n"));
                out.push_str("\n\n");
            }
        }
    }
    if parsed.reference_count > 0 {
        let tags: Vec<String> = (1..=parsed.reference_count).map(|k| format!("[R{k}]")).collect();
        out.push_str("### Further Reading\n\n");
        out.push_str(&format!("See {}.\n\n", tags.join(", ")));
    }
    if parsed.include_exercises {
        out.push_str("### Exercises\n\n");
        out.push_str(&format!(
            "1. Summarize the main ideas of {} in your own words.\n",
            parsed.title
        ));
        out.push_str("2. Give one example that applies a concept from this chapter.\n");
    }
    out.trim().to_string()
}
