//! Thread-pool plumbing behind the `DSMHN_THREADS` environment variable.
//!
//! `DSMHN_THREADS` caps internal parallelism; `0` or unset means one thread
//! per available core. Parallel code paths split work along independent
//! output rows or queries, so results are bitwise identical for every thread
//! count.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "DSMHN_THREADS";

/// Parses `DSMHN_THREADS` strictly. Unset or `0` maps to the number of
/// available cores; anything that is not a nonnegative integer is a config
/// error.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(auto_threads()),
        Err(std::env::VarError::NotUnicode(_)) => Err(Error::Config(format!(
            "{THREADS_ENV} is not valid unicode"
        ))),
        Ok(raw) => {
            let trimmed = raw.trim();
            match trimmed.parse::<usize>() {
                Ok(0) => Ok(auto_threads()),
                Ok(n) => Ok(n),
                Err(_) => Err(Error::Config(format!(
                    "{THREADS_ENV} must be a nonnegative integer, got {trimmed:?}"
                ))),
            }
        }
    }
}

fn auto_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Number of threads the shared pool runs with. The value is fixed at first
/// use; an unparseable `DSMHN_THREADS` falls back to auto here (the CLI
/// validates the variable strictly at startup).
pub fn threads() -> usize {
    pool().current_num_threads()
}

/// Shared rayon pool, built lazily from `DSMHN_THREADS`.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = threads_from_env().unwrap_or_else(|_| auto_threads());
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("failed to build thread pool")
    })
}
