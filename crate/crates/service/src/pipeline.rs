//! The four-stage job pipeline and the services it runs against.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use slideforge::deck::{
    deck_from_json, deck_to_json, extract_deck, extract_images, open_deck, DeckExtract, ExternalOcr, ExtractOptions,
    LegacyConverter, NoOcr, OcrEngine,
};
use slideforge::kb::{
    EmbeddingClient, HashingEmbedder, KnowledgeBase, RemoteEmbedder, VectorIndex, DEFAULT_DIM, INDEX_FILE,
};
use slideforge::retrieval::{
    CustomSearchClient, NoWebSearch, RateLimiter, RetrievalConfig, RetrievalSources, WebSearchClient,
};
use slideforge::textbook::{
    assemble, BookGenerator, CustomizationSpec, GenerationParams, LlmClient, ModelRegistry, RegistryClient,
};
use slideforge::Execution;
use tokio::sync::Semaphore;

use crate::cache::{cache_key, Cache, CachingEmbedder, MemoryCache};
use crate::config::{Settings, DEFAULT_STUB_DIM};
use crate::jobs::{JobState, JobStore};
use crate::upload::UploadKind;
use crate::{system_clock, Clock};

pub const MEDIA_DIR: &str = "media";
pub const DECK_JSON: &str = "deck.json";
pub const BOOK_MD: &str = "book.md";
pub const BOOK_JSON: &str = "book.json";
pub const PLAN_JSON: &str = "plan.json";

/// Everything the pipeline calls out to.
pub struct Services {
    pub ocr: Arc<dyn OcrEngine>,
    pub ocr_langs: Vec<String>,
    pub embed: Arc<dyn EmbeddingClient>,
    pub web: Arc<dyn WebSearchClient>,
    pub llm: Arc<dyn LlmClient>,
    pub registry: ModelRegistry,
    pub index: Option<Arc<VectorIndex>>,
    pub legacy: Option<LegacyConverter>,
    pub cache: Arc<dyn Cache>,
    pub params: GenerationParams,
    pub retrieval: RetrievalConfig,
    pub exec: Execution,
    pub clock: Clock,
}

impl Services {
    /// No OCR, hashing embeddings, no web search, built-in model registry.
    pub fn offline() -> Self {
        let cache: Arc<dyn Cache> = Arc::new(MemoryCache::new(crate::cache::DEFAULT_TTL));
        let registry = ModelRegistry::builtin();
        Self {
            ocr: Arc::new(NoOcr),
            ocr_langs: vec!["eng".into()],
            embed: Arc::new(CachingEmbedder::new(
                Arc::new(HashingEmbedder::new(DEFAULT_STUB_DIM)),
                cache.clone(),
                "hashing",
            )),
            web: Arc::new(NoWebSearch),
            llm: Arc::new(RegistryClient::new(registry.clone())),
            registry,
            index: None,
            legacy: None,
            cache,
            params: GenerationParams::default(),
            retrieval: RetrievalConfig::default(),
            exec: Execution::default(),
            clock: system_clock(),
        }
    }

    pub fn from_settings(settings: &Settings) -> Result<Self, String> {
        let cache: Arc<dyn Cache> = Arc::new(MemoryCache::new(Duration::from_secs(settings.cache_ttl_secs)));

        let ocr: Arc<dyn OcrEngine> = match &settings.ocr_cmd {
            Some(cmd) => {
                let engine = ExternalOcr::new(cmd);
                engine.ensure_available().map_err(|e| e.to_string())?;
                Arc::new(engine)
            }
            None => {
                tracing::info!("OCR disabled: SLIDEFORGE_OCR_CMD is not set");
                Arc::new(NoOcr)
            }
        };

        let (inner, tag): (Arc<dyn EmbeddingClient>, String) = match &settings.embed_url {
            Some(url) => {
                let model = settings
                    .embed_model
                    .clone()
                    .unwrap_or_else(|| "text-embedding-3-small".into());
                let dim = settings.embed_dim.unwrap_or(DEFAULT_DIM);
                let client = RemoteEmbedder::new(url, model.clone(), settings.embed_key.clone()).with_dim(dim);
                (Arc::new(client), model)
            }
            None => {
                let dim = settings.embed_dim.unwrap_or(DEFAULT_STUB_DIM);
                (Arc::new(HashingEmbedder::new(dim)), "hashing".into())
            }
        };
        let embed: Arc<dyn EmbeddingClient> = Arc::new(CachingEmbedder::new(inner, cache.clone(), tag));

        let web: Arc<dyn WebSearchClient> = match (&settings.search_key, &settings.search_cx) {
            (Some(key), Some(cx)) => {
                Arc::new(CustomSearchClient::new(key, cx).with_limiter(RateLimiter::per_second(settings.search_rate)))
            }
            _ => {
                tracing::info!("web search disabled: SLIDEFORGE_SEARCH_KEY/CX are not set");
                Arc::new(NoWebSearch)
            }
        };

        let registry = match &settings.models_file {
            Some(path) => ModelRegistry::load(path)?,
            None => ModelRegistry::builtin(),
        };

        let index = match &settings.kb_dir {
            Some(dir) if dir.join(INDEX_FILE).exists() => {
                let index = KnowledgeBase::open(dir).map_err(|e| e.to_string())?.into_index();
                if index.dim() != embed.dim() {
                    return Err(format!(
                        "knowledge base dimension {} does not match the embedder's {}",
                        index.dim(),
                        embed.dim()
                    ));
                }
                Some(Arc::new(index))
            }
            Some(dir) => {
                tracing::warn!(dir = %dir.display(), "knowledge base not found; local retrieval disabled");
                None
            }
            None => None,
        };

        Ok(Self {
            ocr,
            ocr_langs: settings.ocr_langs.clone(),
            embed,
            web,
            llm: Arc::new(RegistryClient::new(registry.clone())),
            registry,
            index,
            legacy: settings.ppt_converter.as_ref().map(LegacyConverter::new),
            cache,
            params: GenerationParams {
                chapter_workers: settings.chapter_workers.max(1),
                ..GenerationParams::default()
            },
            retrieval: RetrievalConfig::default(),
            exec: Execution::default(),
            clock: system_clock(),
        })
    }

    pub fn generator(&self) -> BookGenerator<'_> {
        BookGenerator {
            llm: self.llm.as_ref(),
            sources: RetrievalSources {
                index: self.index.as_deref(),
                embed: self.embed.as_ref(),
                web: self.web.as_ref(),
            },
            retrieval: self.retrieval,
            params: self.params,
            exec: self.exec,
        }
    }

    pub fn timestamp(&self) -> String {
        (self.clock)().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    /// Deck extraction consulting the cache by file hash. Images are
    /// written to `base_dir/media_rel` either way and recorded relative to
    /// `base_dir`, so cached and fresh results serialize identically.
    pub fn extract(
        &self,
        bytes: &[u8],
        source_name: &str,
        base_dir: &Path,
        media_rel: &str,
    ) -> Result<(DeckExtract, bool, Vec<String>), String> {
        let key = cache_key("deck", bytes);
        let media = base_dir.join(media_rel);
        if let Some(cached) = self.cache.get(&key) {
            let text = String::from_utf8(cached).map_err(|e| e.to_string())?;
            let mut deck = deck_from_json(&text).map_err(|e| e.to_string())?;
            deck.source_name = source_name.to_string();
            let archive = open_deck(bytes, source_name).map_err(|e| e.to_string())?;
            for index in 0..archive.slide_count() {
                extract_images(&archive, index, &media).map_err(|e| e.to_string())?;
            }
            return Ok((deck, true, Vec::new()));
        }
        let mut options = ExtractOptions::new(&media, self.ocr.as_ref());
        options.language_hints = self.ocr_langs.clone();
        options.exec = self.exec;
        let (mut deck, warnings) = extract_deck(bytes, source_name, &options).map_err(|e| e.to_string())?;
        for slide in &mut deck.slides {
            for image in &mut slide.images {
                image.exported_path = image
                    .exported_path
                    .as_deref()
                    .and_then(|p| Path::new(p).file_name())
                    .map(|f| format!("{media_rel}/{}", f.to_string_lossy()));
            }
        }
        self.cache.put(&key, deck_to_json(&deck).into_bytes());
        Ok((deck, false, warnings.into_iter().map(|w| w.to_string()).collect()))
    }
}

type StageResult<T> = Result<T, (JobState, String)>;

fn at(stage: JobState) -> impl Fn(String) -> (JobState, String) {
    move |message| (stage, message)
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<String, String> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(name.to_string())
}

/// Runs every stage for one job, recording failures on the job.
pub fn run_job(services: &Services, store: &JobStore, job_id: &str, input: &Path, kind: UploadKind) {
    if let Err((stage, message)) = run_stages(services, store, job_id, input, kind) {
        tracing::warn!(job_id, stage = stage.as_str(), "job failed: {message}");
        let _ = store.fail(job_id, format!("{} failed: {message}", stage.as_str()));
    }
}

fn timed<T>(store: &JobStore, job_id: &str, stage: JobState, f: impl FnOnce() -> StageResult<T>) -> StageResult<T> {
    store.advance(job_id, stage).map_err(|e| (stage, e.to_string()))?;
    let started = Instant::now();
    let out = f()?;
    let elapsed = started.elapsed().as_millis() as u64;
    let _ = store.update(job_id, |job| {
        job.stage_ms.insert(stage.as_str().to_string(), elapsed);
    });
    Ok(out)
}

fn run_stages(services: &Services, store: &JobStore, job_id: &str, input: &Path, kind: UploadKind) -> StageResult<()> {
    let job = store
        .get(job_id)
        .ok_or_else(|| (JobState::Queued, format!("job {job_id} vanished")))?;
    let spec: CustomizationSpec = job.customization.clone();
    let dir = store.job_dir(job_id);

    let deck = timed(store, job_id, JobState::Extracting, || {
        let err = at(JobState::Extracting);
        let raw = fs::read(input).map_err(|e| err(format!("reading upload: {e}")))?;
        let bytes = match (kind, &services.legacy) {
            (UploadKind::LegacyPpt, Some(converter)) => converter.convert(&raw).map_err(|e| err(e.to_string()))?,
            (UploadKind::LegacyPpt, None) => return Err(err("no legacy converter configured".into())),
            (UploadKind::Pptx, _) => raw,
        };
        let (deck, from_cache, warnings) = services
            .extract(&bytes, &job.source_name, &dir, MEDIA_DIR)
            .map_err(&err)?;
        let name = write_artifact(&dir, DECK_JSON, deck_to_json(&deck).as_bytes()).map_err(&err)?;
        let _ = store.update(job_id, |j| {
            j.deck_from_cache = from_cache;
            j.warnings.extend(warnings);
            j.artifact_paths.deck_json = Some(name);
        });
        let _ = store.set_progress(job_id, JobState::Extracting.progress_span().1);
        Ok(deck)
    })?;

    let generator = services.generator();
    let plan = timed(store, job_id, JobState::Planning, || {
        let err = at(JobState::Planning);
        let outcome = generator.plan(&deck, &spec).map_err(|e| err(e.to_string()))?;
        let json = serde_json::to_vec_pretty(&outcome.plan).expect("plan serializes");
        write_artifact(&dir, PLAN_JSON, &json).map_err(&err)?;
        let _ = store.set_progress(job_id, JobState::Planning.progress_span().1);
        Ok(outcome.plan)
    })?;

    let drafted = timed(store, job_id, JobState::Generating, || {
        let total = plan.chapters.len();
        let _ = store.update(job_id, |j| j.chapter_progress = (0, total));
        let (lo, hi) = JobState::Generating.progress_span();
        let on_done = |done: usize, total: usize| {
            let progress = lo as usize + (hi - lo) as usize * done / total.max(1);
            let _ = store.update(job_id, |j| j.chapter_progress = (j.chapter_progress.0.max(done), total));
            let _ = store.set_progress(job_id, progress as u8);
        };
        Ok(generator.draft_chapters(&plan, &deck, &spec, &on_done))
    })?;

    timed(store, job_id, JobState::Assembling, || {
        let err = at(JobState::Assembling);
        let (book, markdown) = assemble(
            &plan,
            &drafted.outcomes,
            &spec,
            &deck.source_name,
            &services.timestamp(),
        );
        let book_json = serde_json::to_vec_pretty(&book).expect("textbook serializes");
        write_artifact(&dir, BOOK_JSON, &book_json).map_err(&err)?;
        let name = write_artifact(&dir, BOOK_MD, markdown.as_bytes()).map_err(&err)?;
        let failed: Vec<String> = drafted
            .outcomes
            .iter()
            .filter(|o| o.is_failed())
            .map(|o| format!("chapter {} failed", o.number()))
            .collect();
        let _ = store.update(job_id, |j| {
            j.artifact_paths.book_md = Some(name);
            j.warnings.extend(drafted.warnings.iter().cloned());
            j.warnings.extend(failed);
        });
        Ok(())
    })?;

    store
        .advance(job_id, JobState::Done)
        .map_err(|e| (JobState::Assembling, e.to_string()))
}

/// Schedules jobs onto blocking workers, at most `job_workers` at a time.
#[derive(Clone)]
pub struct Runner {
    services: Arc<Services>,
    store: Arc<JobStore>,
    slots: Arc<Semaphore>,
}

impl Runner {
    pub fn new(services: Arc<Services>, store: Arc<JobStore>, job_workers: usize) -> Self {
        Self {
            services,
            store,
            slots: Arc::new(Semaphore::new(job_workers.max(1))),
        }
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }

    pub fn store(&self) -> &Arc<JobStore> {
        &self.store
    }

    pub fn spawn(&self, job_id: String, input: PathBuf, kind: UploadKind) -> tokio::task::JoinHandle<()> {
        let runner = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = runner.slots.clone().acquire_owned().await else {
                return;
            };
            let (services, store, id) = (runner.services.clone(), runner.store.clone(), job_id.clone());
            let result = tokio::task::spawn_blocking(move || run_job(&services, &store, &id, &input, kind)).await;
            if let Err(e) = result {
                tracing::error!(job_id, "pipeline worker crashed: {e}");
                let _ = runner.store.fail(&job_id, format!("internal error: {e}"));
            }
        })
    }
}
