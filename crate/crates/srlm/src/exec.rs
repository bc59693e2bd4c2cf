// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use srlm_core::Executor;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "SRLM_THREADS";

/// A fixed-size rayon pool. Results are collected in index order, so the
/// worker count never changes an output.
pub struct Pool {
    pool: rayon::ThreadPool,
    threads: usize,
}

impl Pool {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
        Ok(Self { pool, threads })
    }
}

impl Executor for Pool {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        if self.threads == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    fn threads(&self) -> usize {
        self.threads
    }
}

/// `--threads`, else `SRLM_THREADS`, else the available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, usize::from)),
    }
}
