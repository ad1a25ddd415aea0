//! Optional data parallelism for grid and probe evaluations.
//!
//! `REGSCATTER_THREADS` selects the worker count; unset or `0` runs serially.
//! Results are always collected in input order, so aggregates do not depend on
//! the thread count.

use rayon::prelude::*;

pub const THREADS_ENV: &str = "REGSCATTER_THREADS";

pub fn configured_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Applies `f` to every item, in parallel when a thread count is configured.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_ordered_with(configured_threads(), items, f)
}

pub fn map_ordered_with<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
