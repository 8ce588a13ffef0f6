//! Replica fan-out.
//!
//! With the `parallel` feature, replicas run on the rayon pool; without it
//! they run in a plain loop. Either way results come back in replica-index
//! order so downstream aggregation is bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of replicas is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_replicas<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    map_replicas_with(Execution::default(), n, f)
}

pub fn map_replicas_with<T, F>(exec: Execution, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// True when replicas can actually run concurrently in this build.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
