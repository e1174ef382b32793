//! Data-parallel helpers.
//!
//! Every per-frequency, per-channel, or per-pair loop in the crate goes
//! through these functions. With the `parallel` feature (on by default) they
//! fan out on the current rayon pool; without it they run sequentially.
//! Results are always collected in index order, so output does not depend on
//! the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map_indices`]. Returns the error with the lowest
/// index if any call fails.
pub fn try_map_indices<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indices(n, f).into_iter().collect()
}

/// Runs `f` on every element of `items` in place.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_come_back_in_order() {
        let v = map_indices(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>> = try_map_indices(100, |i| {
            if i % 10 == 7 {
                Err(crate::Error::numerical(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r.unwrap_err().to_string(), "numerical failure: bad 7");
    }
}
