//! Data-parallel helpers with a sequential fallback.
//!
//! Independent days and independent solver instances are the only
//! parallelism in this crate; everything below maps a function over a batch.
//! With the `parallel` feature (default) the work fans out over rayon,
//! without it the same call runs on one thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of worker threads the batch helpers will use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Sequential reference path for [`par_map`]; the bench suite compares the
/// two on the same inputs.
pub fn seq_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = par_map(items.clone(), |x| x * 3);
        let expect = seq_map(items, |x| x * 3);
        assert_eq!(out, expect);
    }
}
