//! Reference implementations used as test oracles. They favor obviousness
//! over speed and share no code with the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale))
}

/// Random points where some rows are exact copies of earlier rows.
pub fn matrix_with_duplicates(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    let mut x = uniform_matrix(rng, n, d, 1.0);
    for i in 1..n {
        if rng.random_bool(0.2) {
            let j = rng.random_range(0..i);
            let row = x.row(j).to_owned();
            x.row_mut(i).assign(&row);
        }
    }
    x
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Self first, then every other item by (distance, index), cut to `k`.
pub fn knn_oracle(x: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (sq(&rows[i], &rows[j]), j)).collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut out = vec![i];
            out.extend(others.into_iter().map(|(_, j)| j));
            out.truncate(k.min(n));
            out
        })
        .collect()
}

pub fn to_na(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

/// `1 / (mean squared deviation per coordinate)`.
pub fn global_lambda_oracle(x: ArrayView2<'_, f64>) -> f64 {
    let m = to_na(x);
    let mean = m.row_mean();
    let mut ss = 0.0;
    for r in m.row_iter() {
        ss += (r - &mean).norm_squared();
    }
    (m.nrows() * m.ncols()) as f64 / ss
}

/// Biased neighborhood covariance plus `eps * tr/d * I`, via nalgebra.
pub fn shrunk_cov_oracle(x: ArrayView2<'_, f64>, nb: &[usize], eps: f64) -> DMatrix<f64> {
    let d = x.ncols();
    let pts = DMatrix::from_fn(nb.len(), d, |r, c| x[[nb[r], c]]);
    let mean = pts.row_mean();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in pts.row_iter() {
        let c = (r - &mean).transpose();
        cov += &c * c.transpose();
    }
    cov /= nb.len() as f64;
    let tr = cov.trace();
    let ridge = if tr > 0.0 { eps * tr / d as f64 } else { eps };
    cov + DMatrix::identity(d, d) * ridge
}

/// `exp(-1/2 (a-b)^T S^{-1} (a-b))` with an LU-based inverse.
pub fn mahalanobis_weight(s: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let v = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
    let inv = s.clone().try_inverse().expect("invertible");
    (-0.5 * (v.transpose() * inv * &v)[(0, 0)]).exp()
}

/// Rank of `target` after sorting all items by score, descending, ties by
/// index.
pub fn sorted_position(scores: &[f64], target: usize, skip: &[usize]) -> usize {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|i| *i == target || !skip.contains(i))
        .collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&i| i == target).unwrap() + 1
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let keep = x[i];
        x[i] = keep + h;
        let up = f(x);
        x[i] = keep - h;
        let down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// A Haar-ish random rotation from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Array2<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let q = g.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

pub fn vec1(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
