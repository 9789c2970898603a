//! Harness for driving the REST router in-process.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use slideforge::deck::ScriptedOcr;
use slideforge::kb::{ChunkMeta, EmbeddingClient, VectorIndex};
use slideforge::retrieval::SyntheticWebSearch;
use slideforge::textbook::llm::{CompletionRequest, EchoLlm, LlmClient, LlmError};
use slideforge::textbook::prompt::CHAPTER_TASK;
use slideforge::textbook::{ModelRegistry, RegistryClient};
use slideforge_service::api::{router, AppState};
use slideforge_service::jobs::{Job, JobStore};
use slideforge_service::pipeline::{Runner, Services};
use slideforge_service::upload::UploadPolicy;
use slideforge_service::{fixed_clock, Clock};
use tower::ServiceExt;

pub const BOUNDARY: &str = "sf-test-boundary-7c1f";
pub const STUB_SPEC: &str =
    r#"{"output_language":"en","style":"academic","difficulty":"introductory","model_id":"stub-echo"}"#;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/fixtures/{name}"))
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap()
}

pub fn frozen_clock() -> Clock {
    fixed_clock(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap())
}

/// OCR answers for every fixture image, keyed by content hash.
pub fn fixture_ocr() -> ScriptedOcr {
    let mut ocr = ScriptedOcr::default();
    for name in ["deck_one", "deck_two", "deck_ten", "deck_dx39"] {
        let manifest: Value = serde_json::from_slice(&fixture(&format!("{name}.manifest.json"))).unwrap();
        for (hash, text) in manifest["ocr"].as_object().unwrap() {
            ocr.insert(hash.clone(), text.as_str().unwrap());
        }
    }
    ocr
}

/// A small local knowledge base embedded with the hashing stub.
pub fn stub_index(embed: &dyn EmbeddingClient) -> VectorIndex {
    let docs = [
        (
            "Cloud Economics",
            "Elastic cloud capacity turns fixed costs into variable costs.",
        ),
        (
            "Data Platforms",
            "A data platform unifies ingestion, storage and governance of data.",
        ),
        (
            "Agile at Scale",
            "Agile organizations align small teams around customer value.",
        ),
    ];
    let mut index = VectorIndex::new(embed.dim());
    for (i, (title, text)) in docs.iter().enumerate() {
        let meta = ChunkMeta {
            doc_id: format!("kb{i}"),
            title: title.to_string(),
            text: text.to_string(),
            origin: format!("library/{i}.md#0"),
        };
        index
            .add(format!("kb{i}:0"), meta, &embed.embed(text).unwrap())
            .unwrap();
    }
    index
}

/// Every external dependency stubbed: OCR, embeddings, web search, LLM.
pub fn stub_services(llm: Arc<dyn LlmClient>) -> Services {
    let base = Services::offline();
    let registry = ModelRegistry::builtin();
    let index = stub_index(base.embed.as_ref());
    Services {
        ocr: Arc::new(fixture_ocr()),
        web: Arc::new(SyntheticWebSearch::default()),
        llm: Arc::new(RegistryClient::new(registry.clone()).with_client("stub-echo", llm)),
        registry,
        index: Some(Arc::new(index)),
        clock: frozen_clock(),
        ..base
    }
}

pub struct TestApp {
    pub router: Router,
    pub store: Arc<JobStore>,
    pub dir: tempfile::TempDir,
}

pub fn app_with(services: Services, policy: UploadPolicy, static_dir: Option<PathBuf>) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(JobStore::new(dir.path(), services.clock.clone()));
    let state = AppState {
        runner: Runner::new(Arc::new(services), store.clone(), 2),
        policy,
        static_dir,
    };
    TestApp {
        router: router(state),
        store,
        dir,
    }
}

pub fn app(llm: Arc<dyn LlmClient>) -> TestApp {
    app_with(stub_services(llm), UploadPolicy::default(), None)
}

pub fn echo_app() -> TestApp {
    app(Arc::new(EchoLlm))
}

pub fn multipart(file: Option<(&str, &[u8])>, customization: Option<&str>) -> Vec<u8> {
    let mut body = Vec::new();
    if let Some((name, bytes)) = file {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{name}\"\r\n\
                 Content-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    if let Some(spec) = customization {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"customization\"\r\n\r\n{spec}\r\n")
                .as_bytes(),
        );
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn send(router: &Router, request: Request<Body>) -> (StatusCode, Vec<u8>) {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn get(router: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn delete(router: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(router, Request::delete(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_upload(
    router: &Router,
    file: Option<(&str, &[u8])>,
    customization: Option<&str>,
) -> (StatusCode, Value) {
    let request = Request::post("/api/jobs")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(file, customization)))
        .unwrap();
    let (status, body) = send(router, request).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

pub async fn create(router: &Router, name: &str, bytes: &[u8]) -> String {
    let (status, body) = post_upload(router, Some((name, bytes)), Some(STUB_SPEC)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    body["job_id"].as_str().unwrap().to_string()
}

pub async fn status(router: &Router, id: &str) -> Job {
    let (code, body) = get(router, &format!("/api/jobs/{id}")).await;
    assert_eq!(code, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

/// Polls until the job is terminal, returning every observed snapshot.
pub async fn wait_terminal(router: &Router, id: &str, limit: Duration) -> Vec<Job> {
    let started = Instant::now();
    let mut seen = Vec::new();
    loop {
        let job = status(router, id).await;
        let done = job.state.is_terminal();
        seen.push(job);
        if done {
            return seen;
        }
        assert!(started.elapsed() < limit, "job {id} still running after {limit:?}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Echo model whose chapter calls block until the gate opens.
pub struct GatedLlm {
    open: Mutex<bool>,
    signal: Condvar,
}

impl GatedLlm {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            open: Mutex::new(false),
            signal: Condvar::new(),
        })
    }

    pub fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.signal.notify_all();
    }
}

impl LlmClient for GatedLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if request.user_prompt.starts_with(CHAPTER_TASK) {
            let mut open = self.open.lock().unwrap();
            while !*open {
                open = self.signal.wait(open).unwrap();
            }
        }
        EchoLlm.complete(request)
    }
}
