//! Data-parallel helpers with a sequential fallback.
//!
//! Reductions are computed per fixed-size chunk and the chunk partials are
//! folded in index order, so the result does not depend on the number of
//! workers or on whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for reductions over draws.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Falls back to sequential execution when built without the `parallel` feature.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

fn chunk_bounds(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
}

/// Maps `f` over `0..n` preserving order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// `Σ f(i)` for `i in 0..n`, deterministic across execution modes.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunked_sum_with(ExecMode::default(), n, f)
}

pub fn chunked_sum_with<F>(mode: ExecMode, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let bounds = chunk_bounds(n);
    let partial = |&(lo, hi): &(usize, usize)| (lo..hi).map(&f).sum::<f64>();
    let parts: Vec<f64> = if bounds.len() > 1 {
        map_indexed(mode, bounds.len(), |c| partial(&bounds[c]))
    } else {
        bounds.iter().map(partial).collect()
    };
    parts.into_iter().sum()
}

/// Element-wise `Σ f(i)` of fixed-length vectors, deterministic across execution modes.
pub fn chunked_vec_sum<F>(mode: ExecMode, n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    let bounds = chunk_bounds(n);
    let partial = |&(lo, hi): &(usize, usize)| {
        let mut acc = vec![0.0; len];
        for i in lo..hi {
            for (a, v) in acc.iter_mut().zip(f(i)) {
                *a += v;
            }
        }
        acc
    };
    let parts: Vec<Vec<f64>> = if bounds.len() > 1 {
        map_indexed(mode, bounds.len(), |c| partial(&bounds[c]))
    } else {
        bounds.iter().map(partial).collect()
    };
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Runs one independent job per seed; results come back in seed order.
pub fn run_replicates<T, F>(mode: ExecMode, seeds: &[u64], job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    map_indexed(mode, seeds.len(), |i| job(seeds[i]))
}
