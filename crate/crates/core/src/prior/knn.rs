use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Exact K-nearest-neighbor lists. Each list starts with the item itself,
/// followed by the others in ascending squared Euclidean distance (ties to
/// the lower index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    k: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn of(&self, item: usize) -> &[usize] {
        &self.lists[item]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.lists.iter().map(Vec::as_slice)
    }
}

/// Default neighborhood size `floor(sqrt(N))`, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

pub(crate) fn sq_dist<A, B>(a: A, b: B) -> f64
where
    A: IntoIterator,
    B: IntoIterator,
    A::Item: Into<f64>,
    B::Item: Into<f64>,
{
    a.into_iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum()
}

/// Brute-force KNN over the rows of `x`. `k` is clamped to `N`.
pub fn build_knn(x: ArrayView2<'_, f64>, k: usize) -> Result<NeighborLists> {
    if k < 1 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let n = x.nrows();
    let k = k.min(n);
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(xi.iter().copied(), x.row(j).iter().copied()), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let m = k - 1;
            if m < cand.len() && m > 0 {
                cand.select_nth_unstable_by(m - 1, cmp);
                cand.truncate(m);
            } else {
                cand.truncate(m);
            }
            cand.sort_unstable_by(cmp);
            let mut out = Vec::with_capacity(k);
            out.push(i);
            out.extend(cand.into_iter().map(|(_, j)| j));
            out
        })
        .collect();
    Ok(NeighborLists { k, lists })
}
