//! Bounded parallel execution of backend batches.

use anyhow::Result;
use rayon::prelude::*;
use rayon::ThreadPool;

use physforge_core::verify::{Backend, CheckMode, VerificationJob, VerificationVerdict};

/// Runs at most `max_parallel` backend checks at once. Output order always
/// matches input order, so results do not depend on scheduling.
pub struct ParallelBackend<B> {
    inner: B,
    pool: ThreadPool,
}

impl<B: Backend + Sync> ParallelBackend<B> {
    pub fn new(inner: B, max_parallel: usize) -> Result<Self> {
        anyhow::ensure!(max_parallel >= 1, "max_parallel must be at least 1");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_parallel)
            .thread_name(|i| format!("verify-{i}"))
            .build()?;
        Ok(ParallelBackend { inner, pool })
    }

    pub fn max_parallel(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl<B: Backend + Sync> Backend for ParallelBackend<B> {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        self.inner.check(job, mode)
    }

    fn check_batch(&self, jobs: &[(&VerificationJob, CheckMode)]) -> Vec<VerificationVerdict> {
        self.pool.install(|| jobs.par_iter().with_max_len(1).map(|(job, mode)| self.inner.check(job, *mode)).collect())
    }
}
