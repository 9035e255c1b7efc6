use m3_core::ChunkExecutor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Runs chunk work on a dedicated rayon pool with a fixed thread count.
pub struct ThreadPoolExecutor {
    pool: ThreadPool,
}

impl ThreadPoolExecutor {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("m3-worker-{i}"))
            .build()
            .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl ChunkExecutor for ThreadPoolExecutor {
    fn map_chunks<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        // Indexed collect keeps results in chunk order.
        self.pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
}
