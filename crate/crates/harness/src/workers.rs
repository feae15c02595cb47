//! Bounded worker pool for seed sweeps. Each run gets its own RNG substream,
//! so results do not depend on the worker count or scheduling order.

use anyhow::{anyhow, Result};
use rayon::prelude::*;

pub const WORKERS_ENV: &str = "FASTCS_WORKERS";

/// Worker count from `FASTCS_WORKERS`, else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(anyhow!("{WORKERS_ENV} must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn worker_pool() -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(worker_count()?).build()?)
}

/// `f(0..n)` on the current pool, results in run order.
pub fn par_runs<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let v = pool.install(|| par_runs(100, |i| Ok(i * i))).unwrap();
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert!(par_runs(5, |i| if i == 3 { Err(anyhow!("boom")) } else { Ok(i) }).is_err());
    }
}
