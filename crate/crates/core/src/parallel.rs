use rayon::prelude::*;

use crate::error::{Error, Result};

/// Width of per-task parallel evaluation. Results always come back in input
/// order, so reductions over them are deterministic.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn serial() -> Self {
        Workers { pool: None }
    }

    pub fn new(width: usize) -> Result<Self> {
        if width <= 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(width)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(Workers { pool: Some(pool) })
    }

    /// Reads `METALEARN_WORKERS`, defaulting to 1.
    pub fn from_env() -> Result<Self> {
        match std::env::var("METALEARN_WORKERS") {
            Ok(v) => {
                let width: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("METALEARN_WORKERS must be a positive integer, got `{v}`")))?;
                if width == 0 {
                    return Err(Error::Config("METALEARN_WORKERS must be at least 1".into()));
                }
                Self::new(width)
            }
            Err(_) => Ok(Self::serial()),
        }
    }

    pub fn width(&self) -> usize {
        self.pool.as_ref().map_or(1, rayon::ThreadPool::current_num_threads)
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            Some(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        }
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::serial()
    }
}
