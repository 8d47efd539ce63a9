//! Content-addressed verdict cache in front of any backend.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use physforge_core::verify::{Backend, CheckMode, Status, VerificationJob, VerificationVerdict};

use crate::jsonl::write_atomic;

#[derive(Serialize, Deserialize)]
struct Entry {
    status: Status,
    wall_time: f64,
    diagnostics: String,
}

/// Caches verdicts under `dir/<key prefix>/<key>.json`. Entries are written
/// by rename, so concurrent writers of one key just race to store the same
/// content. Timeouts and toolchain errors are not cached: they say more
/// about the machine than about the proof.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        CachedBackend { inner, dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn load(path: &Path) -> Option<Entry> {
        serde_json::from_slice(&std::fs::read(path).ok()?).ok()
    }

    fn store(path: &Path, v: &VerificationVerdict) {
        if matches!(v.status, Status::Timeout | Status::ToolchainError) {
            return;
        }
        let entry = Entry { status: v.status, wall_time: v.wall_time, diagnostics: v.diagnostics.clone() };
        let written = serde_json::to_vec(&entry).map_err(anyhow::Error::from).and_then(|b| write_atomic(path, &b));
        if let Err(e) = written {
            warn!("verdict cache write failed: {e:#}");
        }
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        let path = self.path(&job.content_key(mode));
        if let Some(e) = Self::load(&path) {
            let mut v = VerificationVerdict::new(job.job_id.clone(), e.status, e.diagnostics);
            v.wall_time = e.wall_time;
            return v;
        }
        let v = self.inner.check(job, mode);
        Self::store(&path, &v);
        v
    }

    fn check_batch(&self, jobs: &[(&VerificationJob, CheckMode)]) -> Vec<VerificationVerdict> {
        let mut out: Vec<Option<VerificationVerdict>> = Vec::with_capacity(jobs.len());
        let mut misses = Vec::new();
        for (i, (job, mode)) in jobs.iter().enumerate() {
            let hit = Self::load(&self.path(&job.content_key(*mode))).map(|e| {
                let mut v = VerificationVerdict::new(job.job_id.clone(), e.status, e.diagnostics);
                v.wall_time = e.wall_time;
                v
            });
            if hit.is_none() {
                misses.push(i);
            }
            out.push(hit);
        }
        let pending: Vec<(&VerificationJob, CheckMode)> = misses.iter().map(|&i| jobs[i]).collect();
        for (&i, v) in misses.iter().zip(self.inner.check_batch(&pending)) {
            let (job, mode) = jobs[i];
            Self::store(&self.path(&job.content_key(mode)), &v);
            out[i] = Some(v);
        }
        out.into_iter().flatten().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize, Status);

    impl Backend for Counting {
        fn check(&self, job: &VerificationJob, _: CheckMode) -> VerificationVerdict {
            self.0.fetch_add(1, Ordering::SeqCst);
            VerificationVerdict::new(job.job_id.clone(), self.1, "diag")
        }
    }

    fn job(id: &str, proof: &str) -> VerificationJob {
        VerificationJob::new(id, "import Mathlib", "theorem t : True", proof, 5.0).unwrap()
    }

    #[test]
    fn hits_skip_the_backend_and_keep_job_ids() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(Counting(AtomicUsize::new(0), Status::Pass), dir.path());
        let first = cached.check(&job("a", ":= trivial"), CheckMode::Proof);
        let second = cached.check(&job("b", ":= trivial"), CheckMode::Proof);
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 1);
        assert_eq!((first.status, second.status), (Status::Pass, Status::Pass));
        assert_eq!(second.job_id, "b");
        assert_eq!(second.diagnostics, first.diagnostics);
        cached.check(&job("c", ":= trivial"), CheckMode::Syntax);
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 2);
        let j1 = job("x", ":= trivial");
        let j2 = job("y", ":= by simp");
        let batch = cached.check_batch(&[(&j1, CheckMode::Proof), (&j2, CheckMode::Proof)]);
        assert_eq!(batch.iter().map(|v| v.job_id.as_str()).collect::<Vec<_>>(), ["x", "y"]);
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transient_statuses_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(Counting(AtomicUsize::new(0), Status::Timeout), dir.path());
        cached.check(&job("a", ":= trivial"), CheckMode::Proof);
        cached.check(&job("a", ":= trivial"), CheckMode::Proof);
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 2);
    }
}
