//! Execution strategy for the data-parallel inner loops.
//!
//! Every hot loop in the crate (per-node synthesis, basis assembly, volume
//! sums) goes through these helpers so the same code path can run on the
//! rayon pool or sequentially. Reductions are always evaluated over fixed
//! chunks and combined in chunk order, so results are bit-identical between
//! the two strategies and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items folded into one partial sum.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

/// Parallel when the rayon pool has more than one thread.
impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            if rayon::current_num_threads() > 1 {
                Exec::Parallel
            } else {
                Exec::Sequential
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// All strategies compiled into this build.
    pub fn available() -> Vec<Exec> {
        #[cfg(feature = "parallel")]
        {
            vec![Exec::Sequential, Exec::Parallel]
        }
        #[cfg(not(feature = "parallel"))]
        {
            vec![Exec::Sequential]
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Exec::Sequential => "sequential",
            #[cfg(feature = "parallel")]
            Exec::Parallel => "parallel",
        }
    }

    /// `(0..len).map(f).collect()`.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..len).into_par_iter().with_min_len(CHUNK / 4).map(f).collect(),
        }
    }

    /// Calls `f(i, &mut out[i * width..(i + 1) * width])` for every row.
    pub fn fill_rows<F>(self, out: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        match self {
            Exec::Sequential => out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row)),
            #[cfg(feature = "parallel")]
            Exec::Parallel => out
                .par_chunks_mut(width)
                .with_min_len(CHUNK / 16)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }

    /// Deterministic sum of `f(i)` for `i in 0..len`.
    pub fn sum<F>(self, len: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = len.div_ceil(CHUNK);
        let partial = |c: usize| {
            let end = ((c + 1) * CHUNK).min(len);
            (c * CHUNK..end).map(&f).sum::<f64>()
        };
        let partials: Vec<f64> = match self {
            Exec::Sequential => (0..chunks).map(partial).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..chunks).into_par_iter().map(partial).collect(),
        };
        partials.into_iter().sum()
    }
}
