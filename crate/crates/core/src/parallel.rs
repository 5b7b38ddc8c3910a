use crate::error::{Error, Result};

/// Environment variable capping every worker pool.
pub const WORKERS_ENV: &str = "RANKSURGE_WORKERS";

/// `requested` (0 means one per core), capped by `RANKSURGE_WORKERS` when set.
pub fn effective_workers(requested: usize) -> usize {
    let base = if requested == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { requested };
    match std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => base.min(cap),
        _ => base,
    }
}

pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(effective_workers(workers))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}
