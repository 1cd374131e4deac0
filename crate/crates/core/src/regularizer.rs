//! Prior penalties on item embeddings and their exact gradients.
//!
//! Two priors are provided: the isotropic L2 penalty `sum_i |Z_i|^2`, and the
//! similarity-weighted graph penalty `sum_{i,k} s_ik |Z_i - Z_k|^2`, which is
//! the negative log-density (up to constants) of a Gaussian whose precision
//! is the block Laplacian built from the similarity graph. The regularization
//! weight is applied by the caller.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::prior::SimilarityGraph;

/// Which prior penalty a trainer adds to its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    None,
    L2,
    Graph,
}

impl FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PriorKind::None),
            "l2" => Ok(PriorKind::L2),
            "graph" => Ok(PriorKind::Graph),
            _ => Err(Error::Parameter(format!("unknown prior {s:?}"))),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::None => "none",
            PriorKind::L2 => "l2",
            PriorKind::Graph => "graph",
        })
    }
}

/// Adds `rho * grad` of the selected prior over `items` into `grad` and
/// returns the unscaled penalty. A zero `rho` or [`PriorKind::None`] skips
/// the computation entirely.
pub fn accumulate_prior(
    kind: PriorKind,
    rho: f64,
    z: ArrayView2<'_, f64>,
    graph: Option<&SimilarityGraph>,
    items: &[usize],
    grad: ArrayViewMut2<'_, f64>,
) -> Result<f64> {
    if rho == 0.0 {
        return Ok(0.0);
    }
    match kind {
        PriorKind::None => Ok(0.0),
        PriorKind::L2 => Ok(accumulate_l2(z, items, rho, grad)),
        PriorKind::Graph => {
            let g = graph.ok_or_else(|| Error::Parameter("graph prior needs a graph".into()))?;
            accumulate_graph(z, g, items, rho, grad)
        }
    }
}

/// Penalty value and its gradient on the touched rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyResult {
    pub value: f64,
    pub gradient: BTreeMap<usize, Array1<f64>>,
}

impl PenaltyResult {
    fn from_dense(value: f64, grad: Array2<f64>, touched: impl IntoIterator<Item = usize>) -> Self {
        let gradient = touched
            .into_iter()
            .map(|i| (i, grad.row(i).to_owned()))
            .collect();
        Self { value, gradient }
    }

    /// Gradient row for `item`, zero when untouched.
    pub fn grad_of(&self, item: usize, dim: usize) -> Array1<f64> {
        self.gradient
            .get(&item)
            .cloned()
            .unwrap_or_else(|| Array1::zeros(dim))
    }
}

/// `sum_i |Z_i|^2` over all rows.
pub fn l2_penalty(z: ArrayView2<'_, f64>) -> PenaltyResult {
    let mut grad = Array2::zeros(z.dim());
    let items: Vec<usize> = (0..z.nrows()).collect();
    let value = accumulate_l2(z, &items, 1.0, grad.view_mut());
    PenaltyResult::from_dense(value, grad, items)
}

/// Adds `scale * grad(sum_{i in items} |Z_i|^2)` into `grad` and returns the
/// unscaled value.
pub fn accumulate_l2(
    z: ArrayView2<'_, f64>,
    items: &[usize],
    scale: f64,
    mut grad: ArrayViewMut2<'_, f64>,
) -> f64 {
    let mut value = 0.0;
    for &i in items {
        let zi = z.row(i);
        value += zi.dot(&zi);
        grad.row_mut(i).scaled_add(2.0 * scale, &zi);
    }
    value
}

fn unique_batch(batch: &[usize], n: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::Index { index: bad, len: n });
    }
    let mut b = batch.to_vec();
    b.sort_unstable();
    b.dedup();
    Ok(b)
}

/// Neighbor-truncated graph penalty over a batch:
/// `sum_{i in batch} sum_{k ~ i} s_ik |Z_i - Z_k|^2`.
///
/// A pair with both endpoints in the batch is counted once from each side,
/// so a full batch reproduces the ordered double sum. Gradients reach
/// neighbors outside the batch.
pub fn graph_penalty(
    z: ArrayView2<'_, f64>,
    graph: &SimilarityGraph,
    batch: &[usize],
) -> Result<PenaltyResult> {
    let mut grad = Array2::zeros(z.dim());
    let value = accumulate_graph(z, graph, batch, 1.0, grad.view_mut())?;
    let batch = unique_batch(batch, graph.num_items())?;
    let mut touched: Vec<usize> = batch.clone();
    for &i in &batch {
        touched.extend(graph.neighbors(i).iter().map(|&(k, _)| k as usize));
    }
    touched.sort_unstable();
    touched.dedup();
    Ok(PenaltyResult::from_dense(value, grad, touched))
}

/// Adds `scale * grad` of [`graph_penalty`] into `grad`; returns the
/// unscaled value.
pub fn accumulate_graph(
    z: ArrayView2<'_, f64>,
    graph: &SimilarityGraph,
    batch: &[usize],
    scale: f64,
    mut grad: ArrayViewMut2<'_, f64>,
) -> Result<f64> {
    if z.nrows() != graph.num_items() {
        return Err(Error::Parameter(format!(
            "embedding has {} rows, graph has {} items",
            z.nrows(),
            graph.num_items()
        )));
    }
    let batch = unique_batch(batch, graph.num_items())?;
    let d = z.ncols();
    let zc = z.as_standard_layout();
    let zs = zc.as_slice().expect("standard layout");
    let mut value = 0.0;
    let mut run = |gs: &mut [f64]| {
        let mut diff = vec![0.0; d];
        for &i in &batch {
            let zi = &zs[i * d..(i + 1) * d];
            for &(k, s) in graph.neighbors(i) {
                let k = k as usize;
                let s = s as f64;
                let zk = &zs[k * d..(k + 1) * d];
                let mut d2 = 0.0;
                for ((df, a), b) in diff.iter_mut().zip(zi).zip(zk) {
                    *df = a - b;
                    d2 += *df * *df;
                }
                value += s * d2;
                let c = 2.0 * s * scale;
                for (g, df) in gs[i * d..(i + 1) * d].iter_mut().zip(&diff) {
                    *g += c * df;
                }
                for (g, df) in gs[k * d..(k + 1) * d].iter_mut().zip(&diff) {
                    *g -= c * df;
                }
            }
        }
    };
    match grad.as_slice_mut() {
        Some(gs) => run(gs),
        None => {
            let mut tmp = Array2::<f64>::zeros(grad.raw_dim());
            run(tmp.as_slice_mut().expect("fresh array"));
            grad += &tmp;
        }
    }
    Ok(value)
}

/// Scalar description of the block precision matrix: block `(i, k)` is
/// `off[i][k] * I_d` for `i != k` and `diag[i] * I_d` on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionBlocks {
    /// `-2 s_ik` off the diagonal, zero on it.
    pub off: Array2<f64>,
    /// `2 sum_{k != i} s_ik`.
    pub diag: Array1<f64>,
}

impl PrecisionBlocks {
    pub fn from_similarity(s: ArrayView2<'_, f64>) -> Result<Self> {
        let n = s.nrows();
        if s.ncols() != n {
            return Err(Error::Parameter("similarity matrix must be square".into()));
        }
        for i in 0..n {
            if s[[i, i]] != 0.0 {
                return Err(Error::Parameter("similarity diagonal must be zero".into()));
            }
            for k in 0..n {
                let v = s[[i, k]];
                if v != s[[k, i]] {
                    return Err(Error::Parameter(format!(
                        "similarity not symmetric at ({i}, {k})"
                    )));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parameter(format!("similarity {v} outside [0, 1]")));
                }
            }
        }
        let off = s.mapv(|v| -2.0 * v);
        let diag = s.sum_axis(ndarray::Axis(1)).mapv(|v| 2.0 * v);
        Ok(Self { off, diag })
    }

    pub fn num_items(&self) -> usize {
        self.diag.len()
    }

    /// `Z^T Lambda Z` for the stacked embedding `Z`.
    pub fn quadratic_form(&self, z: ArrayView2<'_, f64>) -> f64 {
        let n = self.num_items();
        let mut q = 0.0;
        for i in 0..n {
            let zi = z.row(i);
            q += self.diag[i] * zi.dot(&zi);
            for k in 0..n {
                if k != i && self.off[[i, k]] != 0.0 {
                    q += self.off[[i, k]] * zi.dot(&z.row(k));
                }
            }
        }
        q
    }

    /// The full `(N d) x (N d)` matrix.
    pub fn dense(&self, d: usize) -> Array2<f64> {
        let n = self.num_items();
        let mut m = Array2::zeros((n * d, n * d));
        for i in 0..n {
            for k in 0..n {
                let v = if i == k { self.diag[i] } else { self.off[[i, k]] };
                for a in 0..d {
                    m[[i * d + a, k * d + a]] = v;
                }
            }
        }
        m
    }
}

/// `Z^T Lambda Z` with `Lambda` assembled from a dense similarity matrix.
pub fn laplacian_form(z: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>) -> Result<f64> {
    if z.nrows() != s.nrows() {
        return Err(Error::Parameter("Z and s disagree on the item count".into()));
    }
    Ok(PrecisionBlocks::from_similarity(s)?.quadratic_form(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{Edge, KernelKind};
    use ndarray::array;

    fn graph(n: usize, edges: &[(u32, u32, f32)]) -> SimilarityGraph {
        let edges = edges.iter().map(|&(i, k, s)| Edge { i, k, s }).collect();
        SimilarityGraph::from_edges(n, edges, KernelKind::Local, 2, 1e-3).unwrap()
    }

    #[test]
    fn l2_zero_and_single() {
        let z = Array2::<f64>::zeros((3, 2));
        let r = l2_penalty(z.view());
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.values().all(|g| g.iter().all(|&v| v == 0.0)));

        let z = array![[3.0, 4.0]];
        let r = l2_penalty(z.view());
        assert_eq!(r.value, 25.0);
        assert_eq!(r.gradient[&0], array![6.0, 8.0]);
    }

    #[test]
    fn graph_penalty_equal_embeddings() {
        let g = graph(3, &[(0, 1, 0.5), (1, 2, 0.9)]);
        let z = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let r = graph_penalty(z.view(), &g, &[0, 1, 2]).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.values().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn graph_penalty_double_counts_batch_pairs() {
        let g = graph(3, &[(1, 2, 0.5)]);
        let z = array![[0.0, 0.0], [2.0, 0.0], [0.0, 0.0]];
        let r = graph_penalty(z.view(), &g, &[1, 2]).unwrap();
        assert_eq!(r.value, 4.0);
        // only one side in the batch: counted once
        let r1 = graph_penalty(z.view(), &g, &[1]).unwrap();
        assert_eq!(r1.value, 2.0);
        // neighbor outside the batch still receives gradient
        assert_eq!(r1.gradient[&2], array![-2.0, 0.0]);
    }

    #[test]
    fn graph_penalty_rejects_bad_index() {
        let g = graph(2, &[(0, 1, 0.5)]);
        let z = Array2::<f64>::zeros((2, 1));
        assert!(matches!(
            graph_penalty(z.view(), &g, &[2]),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn laplacian_two_items() {
        let s = array![[0.0, 1.0], [1.0, 0.0]];
        let z = array![[1.0, 0.0], [0.0, 0.0]];
        assert_eq!(laplacian_form(z.view(), s.view()).unwrap(), 2.0);
        let s0 = Array2::<f64>::zeros((2, 2));
        assert_eq!(laplacian_form(z.view(), s0.view()).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let s = array![[0.0, 1.0], [0.5, 0.0]];
        let z = Array2::<f64>::zeros((2, 1));
        assert!(matches!(laplacian_form(z.view(), s.view()), Err(Error::Parameter(_))));
    }

    #[test]
    fn precision_rows_sum_to_zero() {
        let s = array![[0.0, 0.3, 0.1], [0.3, 0.0, 0.7], [0.1, 0.7, 0.0]];
        let p = PrecisionBlocks::from_similarity(s.view()).unwrap();
        for i in 0..3 {
            let row: f64 = p.off.row(i).sum() + p.diag[i];
            assert!(row.abs() < 1e-15);
        }
    }
}
