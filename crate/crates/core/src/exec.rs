//! Sequential / parallel execution of independent work items.
//!
//! Reductions use a fixed chunking that does not depend on the thread pool,
//! so floating-point results are identical in both modes.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Rows per chunk in [`Execution::sum_rows`].
pub const CHUNK_ROWS: usize = 1024;

/// Below this many rows, row reductions stay on the calling thread.
pub const PAR_ROW_THRESHOLD: usize = 4 * CHUNK_ROWS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Worker count available to this mode.
    pub fn threads(self) -> usize {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return rayon::current_num_threads();
        }
        1
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_mut<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter_mut().map(f).collect();
        }
        items.iter_mut().map(f).collect()
    }

    /// `f(0), ..., f(n-1)` collected in order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Σ f(i) for i in 0..n. Each chunk of [`CHUNK_ROWS`] rows is summed in
    /// order and the chunk totals are then added in order, whatever the mode.
    pub fn sum_rows<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK_ROWS);
        let chunk_sum = |c: usize| {
            let end = ((c + 1) * CHUNK_ROWS).min(n);
            (c * CHUNK_ROWS..end).map(&f).sum::<f64>()
        };
        let mode = if n >= PAR_ROW_THRESHOLD { self } else { Execution::Sequential };
        mode.map_range(chunks, chunk_sum).into_iter().sum()
    }
}

/// How much work a restart-based search may do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// A fixed number of restarts; results are reproducible.
    Runs(usize),
    /// Restarts until the wall clock runs out. At least one restart always
    /// starts, and restarts in flight are cut short at the deadline.
    Time(Duration),
}

impl Budget {
    pub(crate) fn deadline(self, start: Instant) -> Option<Instant> {
        match self {
            Budget::Runs(_) => None,
            Budget::Time(d) => Some(start + d),
        }
    }

    /// Whether restart number `started` (0-based) may begin.
    pub(crate) fn allows(self, started: usize, start: Instant) -> bool {
        match self {
            Budget::Runs(n) => started < n.max(1),
            Budget::Time(d) => started == 0 || start.elapsed() < d,
        }
    }
}
