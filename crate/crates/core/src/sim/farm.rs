use rayon::prelude::*;

use crate::rng;

pub const WORKERS_ENV: &str = "KCM_LAB_WORKERS";

/// Worker count requested through the environment, if any.
pub fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Runs `replicas` independent tasks in parallel. Task `r` receives its index
/// and a seed derived from `(seed, r)`; results come back in index order, so
/// the outcome does not depend on scheduling.
pub fn run_replicas<T, F>(replicas: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync,
{
    (0..replicas).into_par_iter().map(|r| f(r, rng::derive_seed(seed, r as u64))).collect()
}
