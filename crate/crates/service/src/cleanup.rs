//! Periodic removal of finished job directories.

use std::fs;
use std::io::ErrorKind;

use chrono::{DateTime, Duration, Utc};

use crate::jobs::JobStore;

pub fn default_max_age() -> Duration {
    Duration::hours(24)
}

/// Deletes the directories of terminal jobs last updated more than
/// `max_age` before `now` and forgets those jobs. Live jobs are never
/// touched. IO failures are logged and the job is kept for a later tick.
pub fn cleanup_tick(store: &JobStore, now: DateTime<Utc>, max_age: Duration) -> usize {
    let mut deleted = 0;
    for job in store.snapshot() {
        if !job.state.is_terminal() || now - job.updated_at <= max_age {
            continue;
        }
        let dir = store.job_dir(&job.id);
        match fs::remove_dir_all(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => {
                tracing::warn!(dir = %dir.display(), "cleanup skipped: {e}");
                continue;
            }
        }
        store.remove(&job.id);
        deleted += 1;
    }
    deleted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobs::JobState;
    use crate::system_clock;
    use slideforge::textbook::CustomizationSpec;

    #[test]
    fn expired_done_job_goes_running_job_stays() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::new(dir.path(), system_clock());
        let now = Utc::now();
        let done = store.create("a.pptx", CustomizationSpec::default()).unwrap();
        let running = store.create("b.pptx", CustomizationSpec::default()).unwrap();
        store.advance(&running.id, JobState::Extracting).unwrap();
        for id in [&done.id, &running.id] {
            store.update(id, |_| ()).unwrap();
        }
        for state in [
            JobState::Extracting,
            JobState::Planning,
            JobState::Generating,
            JobState::Assembling,
            JobState::Done,
        ] {
            store.advance(&done.id, state).unwrap();
        }
        assert_eq!(cleanup_tick(&store, now, default_max_age()), 0);
        let later = now + Duration::hours(25);
        assert_eq!(cleanup_tick(&store, later, default_max_age()), 1);
        assert!(!store.job_dir(&done.id).exists());
        assert!(store.job_dir(&running.id).exists());
        assert!(store.get(&running.id).is_some());
    }
}
