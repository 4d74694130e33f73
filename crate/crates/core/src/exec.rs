//! Execution policy and deterministic seed derivation.
//!
//! Every parallel loop in the crate goes through [`Execution`]. Results are
//! always collected in index order and reductions are performed over fixed
//! size chunks summed left to right, so a parallel run is bit-identical to a
//! sequential one. Without the `parallel` feature, [`Execution::Parallel`]
//! silently runs sequentially.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Block length for deterministic chunked reductions.
pub const REDUCTION_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Number of workers a [`Execution::map`] call can keep busy.
    pub fn width(self) -> usize {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return rayon::current_num_threads();
        }
        1
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Sums `f(0..n)` over fixed chunks of [`REDUCTION_CHUNK`] indices; the
    /// chunk partials are then added in order.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        self.sum_chunks(n, |range| range.map(&f).sum::<f64>())
    }

    /// Like [`Execution::sum`], but hands each chunk's index range to `f`,
    /// which must add its terms left to right.
    pub fn sum_chunks<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(Range<usize>) -> f64 + Sync + Send,
    {
        self.map(n.div_ceil(REDUCTION_CHUNK), |c| {
            let lo = c * REDUCTION_CHUNK;
            f(lo..(lo + REDUCTION_CHUNK).min(n))
        })
        .into_iter()
        .sum()
    }
}

/// Sizes the global worker pool. Call once, before any parallel work; has no
/// effect without the `parallel` feature.
pub fn set_worker_threads(n: usize) -> crate::error::Result<()> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::error::Error::InvalidParameter(format!("cannot size the worker pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed splitting: stream `k` of `master` is
/// `splitmix64(master + (k + 1) * GOLDEN_GAMMA)`.
///
/// Streams never depend on how many other streams were drawn, so chains,
/// replicates and cells can be scheduled in any order.
pub fn split_seed(master: u64, k: u64) -> u64 {
    splitmix64(master.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Applies [`split_seed`] along a path of counters.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &k| split_seed(s, k))
}
