//! Index sets and deterministic reductions over them.
//!
//! Every sum over samples is split into fixed-size chunks of consecutive
//! positions. Each chunk is summed left to right, then the chunk partials are
//! combined by a pairwise tree whose shape depends only on the number of
//! chunks. The parallel and sequential paths share this shape, so they agree
//! bit for bit.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of consecutive positions summed sequentially before the tree.
pub const CHUNK: usize = 256;

/// Execution policy for sample-level loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to [`Exec::Sequential`] when built without `parallel`.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// A set of sample indices in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IndexSet {
    /// All samples `0..n`.
    Full(usize),
    /// Sorted, duplicate-free subset.
    Subset(Vec<usize>),
}

impl IndexSet {
    pub fn full(n: usize) -> Self {
        IndexSet::Full(n)
    }

    /// Builds a subset, sorting and validating the indices against `n`.
    pub fn subset(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange { index: last, n });
            }
        }
        Ok(IndexSet::Subset(indices))
    }

    pub fn len(&self) -> usize {
        match self {
            IndexSet::Full(n) => *n,
            IndexSet::Subset(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample index at `pos`.
    #[inline]
    pub fn get(&self, pos: usize) -> usize {
        match self {
            IndexSet::Full(_) => pos,
            IndexSet::Subset(v) => v[pos],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(move |p| self.get(p))
    }

    /// Checks the set is nonempty and fits a dataset of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyIndexSet);
        }
        match self {
            IndexSet::Full(m) if *m != n => Err(Error::DimensionMismatch {
                expected: n,
                got: *m,
            }),
            IndexSet::Subset(v) => match v.last() {
                Some(&last) if last >= n => Err(Error::IndexOutOfRange { index: last, n }),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

fn chunk_ranges(len: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(len))
        .collect()
}

fn tree_combine<T>(mut level: Vec<T>, combine: impl Fn(T, T) -> T) -> Option<T> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop()
}

/// Reduces `leaf(range)` over chunks of `0..len` with a fixed pairwise tree.
///
/// Returns `None` when `len == 0`.
pub fn chunked_reduce<T, L, C>(exec: Exec, len: usize, leaf: L, combine: C) -> Option<T>
where
    T: Send,
    L: Fn(Range<usize>) -> T + Sync,
    C: Fn(T, T) -> T,
{
    let ranges = chunk_ranges(len);
    let partials: Vec<T> = if exec.is_parallel() && ranges.len() > 1 {
        #[cfg(feature = "parallel")]
        {
            ranges.into_par_iter().map(&leaf).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ranges.into_iter().map(&leaf).collect()
        }
    } else {
        ranges.into_iter().map(&leaf).collect()
    };
    tree_combine(partials, combine)
}

/// Maps `f` over `0..len`, in parallel when allowed. Output order is preserved.
pub fn map_indices<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}
