//! Trial-parallel execution with derived per-trial seeds.
//!
//! With the `parallel` feature trials run on the rayon pool; without it they
//! run in order on the calling thread. Results always come back in trial order.

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Sub-stream `stream` of a trial, for experiments that need several
/// independent generators per trial.
pub fn stream_seed(master: u64, stream: u64, index: u64) -> u64 {
    trial_seed(mix64(master ^ stream.rotate_left(32)), index)
}

/// `f(0), …, f(n−1)` on the calling thread.
pub fn map_trials_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_trials<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_trials<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_trials_sequential(n, f)
}

/// Fallible variant; the first error in trial order wins.
pub fn try_map_trials<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_trials(n, f).into_iter().collect()
}

/// Runs `f` with at most `threads` worker threads. `None` keeps the global pool.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(f())
}
