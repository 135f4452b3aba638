//! Exact brute-force k-nearest-neighbour search.
//!
//! Distances are Euclidean; equal distances order by lower pool index.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Borrowed row-major point set.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    flat: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(flat: &'a [f64], dim: usize) -> Self {
        assert!(
            dim > 0 && flat.len().is_multiple_of(dim),
            "flat length must be a multiple of dim"
        );
        Points { flat, dim }
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Indices of the `k` pool rows nearest to `query`, nearest first.
pub fn knn(query: &[f64], pool: Points<'_>, k: usize) -> Result<Vec<usize>> {
    knn_excluding(query, pool, k, None)
}

/// As [`knn`], but never returns `exclude` (typically the query's own index).
pub fn knn_excluding(query: &[f64], pool: Points<'_>, k: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
    let available = pool.len() - usize::from(exclude.is_some_and(|e| e < pool.len()));
    if k > available {
        return Err(Error::TooMany {
            requested: k,
            available,
        });
    }
    if query.len() != pool.dim() {
        return Err(Error::shape(format!(
            "query has {} dimensions, pool has {}",
            query.len(),
            pool.dim()
        )));
    }
    // Sorted ascending by (distance, index); at most k entries.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return Ok(Vec::new());
    }
    for i in 0..pool.len() {
        if Some(i) == exclude {
            continue;
        }
        let d = squared_distance(query, pool.row(i));
        if best.len() == k {
            let (worst_d, _) = best[k - 1];
            // Later indices lose ties, so only a strictly smaller distance enters.
            if d >= worst_d {
                continue;
            }
        }
        let pos = best.partition_point(|&(bd, bi)| bd < d || (bd == d && bi < i));
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    Ok(best.into_iter().map(|(_, i)| i).collect())
}

/// For every row of `pool`, its `k` nearest other rows.
pub fn knn_self(pool: Points<'_>, k: usize) -> Result<Vec<Vec<usize>>> {
    (0..pool.len())
        .into_par_iter()
        .map(|i| knn_excluding(pool.row(i), pool, k, Some(i)))
        .collect()
}

/// For every query row, its `k` nearest pool rows. `exclude(q)` names a pool
/// index to skip for query `q`.
pub fn knn_batch<F>(queries: Points<'_>, pool: Points<'_>, k: usize, exclude: F) -> Result<Vec<Vec<usize>>>
where
    F: Fn(usize) -> Option<usize> + Sync,
{
    (0..queries.len())
        .into_par_iter()
        .map(|q| knn_excluding(queries.row(q), pool, k, exclude(q)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_at_pool_point() {
        let flat = [0.0, 0.0, 5.0, 5.0, 1.0, 1.0];
        let pool = Points::new(&flat, 2);
        assert_eq!(knn(&[5.0, 5.0], pool, 1).unwrap(), vec![1]);
    }

    #[test]
    fn collinear_ordering() {
        let flat = [2.0, 0.0, 1.0];
        let pool = Points::new(&flat, 1);
        assert_eq!(knn(&[0.0], pool, 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(knn_excluding(&[0.0], pool, 2, Some(1)).unwrap(), vec![2, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let flat = [1.0, -1.0, 1.0, -1.0];
        let pool = Points::new(&flat, 1);
        assert_eq!(knn(&[0.0], pool, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(knn(&[0.0], pool, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn k_too_large() {
        let flat = [1.0, 2.0];
        let pool = Points::new(&flat, 1);
        assert!(matches!(knn(&[0.0], pool, 3), Err(Error::TooMany { .. })));
        assert!(knn_excluding(&[0.0], pool, 2, Some(0)).is_err());
    }
}
