//! Pluggable execution of per-chunk work.

use alloc::vec::Vec;

/// Runs `f(0), f(1), ..., f(count - 1)` and returns the results in index
/// order.
///
/// Implementations may evaluate indices concurrently and in any order, but the
/// returned vector must always be ordered by index. Callers fold the partial
/// results front to back, so the final value never depends on scheduling.
pub trait ChunkExecutor {
    fn map_chunks<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync;
}

/// Evaluates chunks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChunkExecutor for Sequential {
    fn map_chunks<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        (0..count).map(f).collect()
    }
}

impl<E: ChunkExecutor + ?Sized> ChunkExecutor for &E {
    fn map_chunks<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        (**self).map_chunks(count, f)
    }
}
