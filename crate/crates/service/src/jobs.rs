//! Job records, the stage state machine and the in-memory job table with
//! a JSON journal per job directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use slideforge::textbook::CustomizationSpec;

use crate::Clock;

pub const JOURNAL_FILE: &str = "job.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Extracting,
    Planning,
    Generating,
    Assembling,
    Done,
    Failed,
}

impl JobState {
    pub const STAGES: [JobState; 6] = [
        JobState::Queued,
        JobState::Extracting,
        JobState::Planning,
        JobState::Generating,
        JobState::Assembling,
        JobState::Done,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Extracting => "extracting",
            JobState::Planning => "planning",
            JobState::Generating => "generating",
            JobState::Assembling => "assembling",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }

    /// Progress range `[start, end]` covered by a stage.
    pub fn progress_span(self) -> (u8, u8) {
        match self {
            JobState::Queued => (0, 0),
            JobState::Extracting => (0, 20),
            JobState::Planning => (20, 30),
            JobState::Generating => (30, 90),
            JobState::Assembling => (90, 100),
            JobState::Done => (100, 100),
            JobState::Failed => (0, 100),
        }
    }

    /// The only legal moves: one stage forward, or to `Failed` from any
    /// non-terminal state.
    pub fn can_move_to(self, next: JobState) -> bool {
        if self.is_terminal() {
            return false;
        }
        if next == JobState::Failed {
            return true;
        }
        let pos = |s| Self::STAGES.iter().position(|x| *x == s);
        matches!((pos(self), pos(next)), (Some(a), Some(b)) if b == a + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub deck_json: Option<String>,
    pub book_md: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: JobState,
    pub to: JobState,
    pub progress: u8,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub state: JobState,
    pub progress: u8,
    /// `(finished, total)` chapters.
    pub chapter_progress: (usize, usize),
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub error: Option<String>,
    pub artifact_paths: ArtifactPaths,
    pub source_name: String,
    pub customization: CustomizationSpec,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Whether the extraction stage was served from the cache.
    #[serde(default)]
    pub deck_from_cache: bool,
    /// Wall time per completed stage in milliseconds.
    #[serde(default)]
    pub stage_ms: BTreeMap<String, u64>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JobError {
    #[error("unknown job {0}")]
    Unknown(String),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: JobState, to: JobState },
}

/// All jobs, behind one lock. Snapshots handed out are copies.
pub struct JobStore {
    workdir: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
    clock: Clock,
}

impl JobStore {
    pub fn new(workdir: impl Into<PathBuf>, clock: Clock) -> Self {
        Self {
            workdir: workdir.into(),
            jobs: Mutex::new(HashMap::new()),
            clock,
        }
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.workdir.join(id)
    }

    /// Registers a queued job and creates its directory.
    pub fn create(&self, source_name: &str, customization: CustomizationSpec) -> std::io::Result<Job> {
        let now = self.now();
        let job = Job {
            id: uuid::Uuid::new_v4().to_string(),
            state: JobState::Queued,
            progress: 0,
            chapter_progress: (0, 0),
            created_at: now,
            updated_at: now,
            error: None,
            artifact_paths: ArtifactPaths::default(),
            source_name: source_name.to_string(),
            customization,
            warnings: Vec::new(),
            deck_from_cache: false,
            stage_ms: BTreeMap::new(),
            transitions: Vec::new(),
        };
        fs::create_dir_all(self.job_dir(&job.id))?;
        self.insert(job.clone());
        Ok(job)
    }

    /// Adds an existing record, e.g. one read back from a journal.
    pub fn insert(&self, job: Job) {
        write_journal(&self.job_dir(&job.id), &job);
        self.jobs.lock().insert(job.id.clone(), job);
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.jobs.lock().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn snapshot(&self) -> Vec<Job> {
        self.jobs.lock().values().cloned().collect()
    }

    pub fn remove(&self, id: &str) -> Option<Job> {
        self.jobs.lock().remove(id)
    }

    /// Applies `f` under the lock and returns the updated snapshot.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut Job) -> T) -> Result<T, JobError> {
        let mut jobs = self.jobs.lock();
        let job = jobs.get_mut(id).ok_or_else(|| JobError::Unknown(id.to_string()))?;
        let out = f(job);
        job.updated_at = self.now();
        Ok(out)
    }

    /// Moves to `next`, raising progress to the start of its span.
    pub fn advance(&self, id: &str, next: JobState) -> Result<(), JobError> {
        let now = self.now();
        let mut jobs = self.jobs.lock();
        let job = jobs.get_mut(id).ok_or_else(|| JobError::Unknown(id.to_string()))?;
        if !job.state.can_move_to(next) {
            return Err(JobError::IllegalTransition {
                from: job.state,
                to: next,
            });
        }
        if next != JobState::Failed {
            job.progress = job.progress.max(next.progress_span().0);
        }
        job.transitions.push(Transition {
            from: job.state,
            to: next,
            progress: job.progress,
            at: now,
        });
        job.state = next;
        job.updated_at = now;
        write_journal(&self.job_dir(id), job);
        Ok(())
    }

    /// Raises progress within the current stage's span; never lowers it.
    pub fn set_progress(&self, id: &str, progress: u8) -> Result<(), JobError> {
        self.update(id, |job| {
            let (lo, hi) = job.state.progress_span();
            job.progress = job.progress.max(progress.clamp(lo, hi));
        })
    }

    pub fn fail(&self, id: &str, message: String) -> Result<(), JobError> {
        self.advance(id, JobState::Failed)?;
        self.update(id, |job| job.error = Some(message))?;
        if let Some(job) = self.get(id) {
            write_journal(&self.job_dir(id), &job);
        }
        Ok(())
    }

    /// Reads every `<workdir>/*/job.json`. Jobs that were still running
    /// when the journal was written are marked failed.
    pub fn restore(&self) -> usize {
        let Ok(entries) = fs::read_dir(&self.workdir) else {
            return 0;
        };
        let mut restored = 0;
        for entry in entries.flatten() {
            let path = entry.path().join(JOURNAL_FILE);
            let Ok(text) = fs::read_to_string(&path) else { continue };
            let Ok(mut job) = serde_json::from_str::<Job>(&text) else {
                tracing::warn!(path = %path.display(), "unreadable job journal");
                continue;
            };
            if entry.file_name().to_str() != Some(job.id.as_str()) {
                continue;
            }
            if !job.state.is_terminal() {
                job.transitions.push(Transition {
                    from: job.state,
                    to: JobState::Failed,
                    progress: job.progress,
                    at: self.now(),
                });
                job.state = JobState::Failed;
                job.error = Some("interrupted by a server restart".into());
            }
            self.insert(job);
            restored += 1;
        }
        restored
    }
}

fn write_journal(dir: &Path, job: &Job) {
    if !dir.is_dir() {
        return;
    }
    let text = serde_json::to_vec_pretty(job).expect("job serializes");
    let result = tempfile::NamedTempFile::new_in(dir).and_then(|mut f| {
        std::io::Write::write_all(&mut f, &text)?;
        f.persist(dir.join(JOURNAL_FILE)).map_err(|e| e.error)?;
        Ok(())
    });
    if let Err(e) = result {
        tracing::warn!(dir = %dir.display(), "journal write failed: {e}");
    }
}
