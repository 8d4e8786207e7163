use std::sync::Arc;

use levsense_core::harness::{TrialExecutor, TrialPlan, TrialResult};
use levsense_core::Error;
use rayon::prelude::*;

/// Runs trials on a dedicated rayon pool. Each trial owns its random
/// stream and results are collected in index order, so the output is the
/// same for any number of workers.
#[derive(Debug, Clone)]
pub struct Parallel {
    pool: Arc<rayon::ThreadPool>,
    workers: usize,
}

impl Parallel {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Parallel {
            pool: Arc::new(pool),
            workers,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl TrialExecutor for Parallel {
    fn run_trials(&self, plan: &TrialPlan, n_trials: usize, master_seed: u64) -> levsense_core::Result<Vec<TrialResult>> {
        let results: Vec<_> = self
            .pool
            .install(|| (0..n_trials).into_par_iter().map(|i| plan.run_trial(i, master_seed)).collect());
        // Report the lowest failing index, independent of scheduling.
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Trial {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}
