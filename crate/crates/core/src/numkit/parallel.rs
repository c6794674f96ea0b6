//! Order-preserving parallel map over a process-wide worker pool.
//!
//! The pool size comes from `S2C_THREADS` (default: available cores).
//! Results are returned in input order, so reductions performed by the
//! caller are independent of the worker count.

use std::sync::OnceLock;

use rayon::prelude::*;

pub const THREADS_ENV: &str = "S2C_THREADS";

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool")
    })
}

pub fn worker_count() -> usize {
    pool().current_num_threads()
}

/// `f(0), …, f(n-1)` evaluated on the pool, in order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n <= 1 || worker_count() == 1 {
        return (0..n).map(f).collect();
    }
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = par_map(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert!(worker_count() >= 1);
    }
}
