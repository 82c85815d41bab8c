//! Execution mode switch for the data-parallel inner loops (per-source wave
//! solves, importance-sampling weights, independent chains).
//!
//! With the `parallel` feature the [`Exec::Parallel`] mode runs on rayon's
//! global pool; without it every mode runs sequentially. Results are always
//! collected in input order, so reductions over them are bit-identical in
//! both modes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `true` when this mode will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Ordered map over `0..n`.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
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

    /// Ordered map over a slice.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let seq = Exec::Sequential.map_range(100, |i| (i as f64).sqrt());
        let par = Exec::Parallel.map_range(100, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        let xs: Vec<u32> = (0..50).collect();
        assert_eq!(Exec::Parallel.map_slice(&xs, |x| x * 2)[49], 98);
    }
}
