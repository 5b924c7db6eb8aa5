//! Rayon-backed [`Runner`]. Jobs are seeded by index, so results do not
//! depend on the number of workers.

use gst_core::gsd::Runner;
use rayon::prelude::*;

pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// A pool with `workers` threads; zero picks the number of CPUs.
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(workers).build()? })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Runner for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let p = Pool::new(3).unwrap();
        assert_eq!(p.workers(), 3);
        assert_eq!(p.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
