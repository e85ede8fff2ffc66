//! Data-parallel execution with a sequential fallback.
//!
//! The `parallel` feature backs [`Exec::Parallel`] with rayon. Results are
//! always returned in input order and reductions are performed by the caller
//! in that order, so both executors produce bitwise-identical output.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
        }
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    pub fn try_map<T, R, F>(self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}

/// Sum equally sized gradient buffers in order.
pub fn sum_in_order<'a>(len: usize, parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for part in parts {
        debug_assert_eq!(part.len(), len);
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}
