use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs per-client work either inline or on a dedicated rayon pool. Results
/// always come back in input order, so the thread count never changes what
/// the caller sees.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// A pool with `threads` workers; `1` runs inline.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, F>(&self, items: &[usize], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => items.iter().map(|&i| f(i)).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(|&i| f(i)).collect()),
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}
