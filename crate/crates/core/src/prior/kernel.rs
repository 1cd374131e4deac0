//! Similarity kernels over item embeddings.
//!
//! The global kernel is an RBF whose precision is the inverse of the average
//! per-dimension variance of all embeddings. The local kernel replaces the
//! isotropic precision with the inverse of the empirical covariance of the
//! item's K-neighborhood, shrunk toward a scaled identity so it stays
//! invertible when `K <= d'`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Smallest weight a kernel returns; the smallest positive normal `f32`, so
/// weights survive the single-precision graph file.
pub const MIN_WEIGHT: f64 = f32::MIN_POSITIVE as f64;

/// `1 / sigma^2` where `sigma^2` is the mean squared deviation from the
/// centroid divided by the embedding dimension.
pub fn global_bandwidth(x: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Parameter("global bandwidth needs at least 2 items".into()));
    }
    if d == 0 {
        return Err(Error::DegeneratePrior("zero-dimensional embeddings".into()));
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let ss: f64 = x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(mean.iter()).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum();
    let var = ss / (n as f64 * d as f64);
    if var == 0.0 || !var.is_finite() {
        return Err(Error::DegeneratePrior(
            "all embeddings identical (zero variance)".into(),
        ));
    }
    Ok(1.0 / var)
}

/// `exp(-lambda/2 * |a - b|^2)`, floored at [`MIN_WEIGHT`].
pub fn global_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * lambda * d2).exp().max(MIN_WEIGHT)
}

/// Mean and biased (divide by K) covariance of a neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGaussian {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

pub fn local_moments(x: ArrayView2<'_, f64>, neighbors: &[usize]) -> LocalGaussian {
    assert!(!neighbors.is_empty(), "neighborhood must not be empty");
    let d = x.ncols();
    let k = neighbors.len() as f64;
    let mut mean = Array1::<f64>::zeros(d);
    for &l in neighbors {
        mean += &x.row(l);
    }
    mean /= k;
    let mut cov = Array2::<f64>::zeros((d, d));
    let mut c = vec![0.0; d];
    for &l in neighbors {
        for (cj, (xv, m)) in c.iter_mut().zip(x.row(l).iter().zip(mean.iter())) {
            *cj = xv - m;
        }
        for a in 0..d {
            let ca = c[a];
            if ca == 0.0 {
                continue;
            }
            let mut row = cov.row_mut(a);
            for b in a..d {
                row[b] += ca * c[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[[a, b]] / k;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    LocalGaussian { mean, cov }
}

/// `cov + eps * trace(cov)/d * I`, or `eps * I` when the trace is zero.
pub fn shrink(cov: &Array2<f64>, eps: f64) -> Array2<f64> {
    let d = cov.nrows();
    let tr: f64 = cov.diag().sum();
    let mut out = cov.clone();
    let ridge = if tr > 0.0 { eps * tr / d as f64 } else { eps };
    for a in 0..d {
        out[[a, a]] += ridge;
    }
    out
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Parameter("Cholesky needs a square matrix".into()));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for p in 0..j {
                diag -= l[[j, p]] * l[[j, p]];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::SingularCovariance {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for p in 0..j {
                    s -= l[[i, p]] * l[[j, p]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &Array2<f64> {
        &self.l
    }

    /// `v^T A^{-1} v` via one forward substitution: `|L^{-1} v|^2`.
    pub fn inv_quad(&self, v: &[f64]) -> f64 {
        let n = self.l.nrows();
        debug_assert_eq!(v.len(), n);
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = v[i];
            for p in 0..i {
                s -= row[p] * y[p];
            }
            y[i] = s / row[i];
            acc += y[i] * y[i];
        }
        acc
    }
}

/// Mahalanobis kernel for one item, holding the factorized shrunk covariance.
#[derive(Debug, Clone)]
pub struct LocalKernel {
    chol: Cholesky,
}

impl LocalKernel {
    pub fn new(shrunk_cov: &Array2<f64>) -> Result<Self> {
        Ok(Self {
            chol: Cholesky::factor(shrunk_cov)?,
        })
    }

    /// `exp(-1/2 (a-b)^T Sigma^{-1} (a-b))`, floored at [`MIN_WEIGHT`].
    pub fn similarity(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        (-0.5 * self.chol.inv_quad(&diff)).exp().max(MIN_WEIGHT)
    }
}

/// One-shot local similarity under a shrunk covariance.
pub fn local_similarity(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    shrunk_cov: &Array2<f64>,
) -> Result<f64> {
    Ok(LocalKernel::new(shrunk_cov)?.similarity(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bandwidth_two_points() {
        let x = array![[0.0], [2.0]];
        assert_eq!(global_bandwidth(x.view()).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_degenerate() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(global_bandwidth(x.view()), Err(Error::DegeneratePrior(_))));
        assert!(matches!(global_bandwidth(array![[1.0]].view()), Err(Error::Parameter(_))));
    }

    #[test]
    fn bandwidth_homogeneous() {
        let x = array![[0.0, 1.0], [2.0, -1.0], [3.0, 5.0]];
        let l = global_bandwidth(x.view()).unwrap();
        let l3 = global_bandwidth((&x * 3.0).view()).unwrap();
        assert!((l3 - l / 9.0).abs() < 1e-15 * l);
    }

    #[test]
    fn global_similarity_values() {
        let a = array![1.0, 1.0];
        let b = array![0.0, 0.0];
        assert_eq!(global_similarity(a.view(), a.view(), 3.0), 1.0);
        let s = global_similarity(a.view(), b.view(), 1.0);
        assert!((s - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(s, global_similarity(b.view(), a.view(), 1.0));
        let far = array![1e10, 0.0];
        assert_eq!(global_similarity(far.view(), b.view(), 1.0), MIN_WEIGHT);
    }

    #[test]
    fn moments_two_points() {
        let x = array![[0.0, 0.0], [2.0, 0.0]];
        let g = local_moments(x.view(), &[0, 1]);
        assert_eq!(g.mean, array![1.0, 0.0]);
        assert_eq!(g.cov, array![[1.0, 0.0], [0.0, 0.0]]);
        let g1 = local_moments(x.view(), &[1]);
        assert_eq!(g1.cov, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn shrink_cases() {
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(shrink(&z, 1e-3), Array2::<f64>::eye(3) * 1e-3);
        let i = Array2::<f64>::eye(3);
        assert_eq!(shrink(&i, 1e-3), Array2::<f64>::eye(3) * (1.0 + 1e-3));
    }

    #[test]
    fn local_identity_cov_matches_rbf() {
        let a = array![1.0, 1.0];
        let b = array![0.0, 0.0];
        let s = local_similarity(a.view(), b.view(), &Array2::eye(2)).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(local_similarity(a.view(), a.view(), &Array2::eye(2)).unwrap(), 1.0);
    }

    #[test]
    fn singular_covariance_detected() {
        let c = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(Cholesky::factor(&c), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 3.0, 0.1], [0.4, 0.1, 2.0]];
        let l = Cholesky::factor(&a).unwrap();
        let back = l.factor_matrix().dot(&l.factor_matrix().t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
