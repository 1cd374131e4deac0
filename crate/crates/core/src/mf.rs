//! BPR matrix factorization with optional prior penalties on the item
//! factors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, KIND_MF};
use crate::corpus::InteractionLog;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::prior::SimilarityGraph;
use crate::regularizer::{accumulate_prior, PriorKind};

/// User factors `U` (M x d) and item factors `Z` (N x d).
#[derive(Debug, Clone, PartialEq)]
pub struct MfParams {
    pub user: Array2<f64>,
    pub item: Array2<f64>,
}

impl MfParams {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            user: Array2::zeros((num_users, dim)),
            item: Array2::zeros((num_items, dim)),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item.nrows()
    }

    pub fn dim(&self) -> usize {
        self.item.ncols()
    }

    /// `<U_j, Z_i>`.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users() {
            return Err(Error::Index {
                index: user,
                len: self.num_users(),
            });
        }
        if item >= self.num_items() {
            return Err(Error::Index {
                index: item,
                len: self.num_items(),
            });
        }
        Ok(self.user.row(user).dot(&self.item.row(item)))
    }

    /// Scores of every item for `user`.
    pub fn scores_for_user(&self, user: usize) -> Vec<f64> {
        self.item.dot(&self.user.row(user)).to_vec()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        checkpoint::write_header(&mut w, KIND_MF)?;
        checkpoint::write_u32(&mut w, self.num_users() as u32)?;
        checkpoint::write_u32(&mut w, self.num_items() as u32)?;
        checkpoint::write_u32(&mut w, self.dim() as u32)?;
        checkpoint::write_tensor(&mut w, self.user.iter())?;
        checkpoint::write_tensor(&mut w, self.item.iter())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let kind = checkpoint::read_kind(&mut r)?;
        if kind != KIND_MF {
            return Err(Error::Format(format!("expected an MF checkpoint, found kind {kind}")));
        }
        Self::read_body(&mut r)
    }

    pub(crate) fn read_body(r: &mut impl Read) -> Result<Self> {
        let m = checkpoint::read_u32(r)? as usize;
        let n = checkpoint::read_u32(r)? as usize;
        let d = checkpoint::read_u32(r)? as usize;
        let user = checkpoint::read_matrix(r, m, d)?;
        let item = checkpoint::read_matrix(r, n, d)?;
        Ok(Self { user, item })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Value and gradients of one BPR term.
#[derive(Debug, Clone, PartialEq)]
pub struct BprTerm {
    pub value: f64,
    pub grad_user: Array1<f64>,
    pub grad_pos: Array1<f64>,
    pub grad_neg: Array1<f64>,
}

/// `-ln(sigmoid(x))`, stable for large `|x|`.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(x)` on `x = <u, zp> - <u, zn>`; returns `(value, dvalue/dx)`.
fn bpr_core(u: ArrayView1<'_, f64>, zp: ArrayView1<'_, f64>, zn: ArrayView1<'_, f64>) -> (f64, f64) {
    let x = u.dot(&zp) - u.dot(&zn);
    (neg_log_sigmoid(x), -sigmoid(-x))
}

/// Pairwise logistic loss `-ln sigmoid(score(j, i) - score(j, k))`.
pub fn bpr_loss(params: &MfParams, user: usize, pos: usize, neg: usize) -> Result<BprTerm> {
    params.score(user, pos)?;
    params.score(user, neg)?;
    if pos == neg {
        return Err(Error::Parameter("positive and negative item coincide".into()));
    }
    let u = params.user.row(user);
    let zp = params.item.row(pos);
    let zn = params.item.row(neg);
    let (value, dx) = bpr_core(u, zp, zn);
    Ok(BprTerm {
        value,
        grad_user: (&zp - &zn) * dx,
        grad_pos: &u * dx,
        grad_neg: &u * -dx,
    })
}

/// One positive and its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BprStep {
    pub user: usize,
    pub pos: usize,
    pub negs: Vec<usize>,
}

/// Minibatch objective: the mean over steps of
/// `sum_neg bpr(user, pos, neg) + rho * penalty({pos} + negs)`.
///
/// Gradients are written into `grad` (overwritten). Returns the objective.
pub fn batch_objective(
    params: &MfParams,
    steps: &[BprStep],
    prior: PriorKind,
    rho: f64,
    graph: Option<&SimilarityGraph>,
    grad: &mut MfParams,
) -> Result<f64> {
    grad.user.fill(0.0);
    grad.item.fill(0.0);
    if steps.is_empty() {
        return Ok(0.0);
    }
    let w = 1.0 / steps.len() as f64;
    let mut total = 0.0;
    let mut items = Vec::new();
    for st in steps {
        let u = params.user.row(st.user);
        let zp = params.item.row(st.pos);
        for &k in &st.negs {
            let zn = params.item.row(k);
            let (v, dx) = bpr_core(u, zp, zn);
            total += w * v;
            let c = w * dx;
            grad.user.row_mut(st.user).scaled_add(c, &(&zp - &zn));
            grad.item.row_mut(st.pos).scaled_add(c, &u);
            grad.item.row_mut(k).scaled_add(-c, &u);
        }
        items.clear();
        items.push(st.pos);
        items.extend_from_slice(&st.negs);
        let pen = accumulate_prior(
            prior,
            rho * w,
            params.item.view(),
            graph,
            &items,
            grad.item.view_mut(),
        )?;
        total += rho * w * pen;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub rho: f64,
    pub prior: PriorKind,
    pub negatives: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            lr: 1e-3,
            epochs: 50,
            batch: 128,
            rho: 1.0,
            prior: PriorKind::Graph,
            negatives: 1,
            seed: 42,
            clip_norm: None,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct MfTrained {
    pub params: MfParams,
    /// Mean minibatch objective per epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn train_mf(
    train: &InteractionLog,
    graph: Option<&SimilarityGraph>,
    cfg: &MfConfig,
) -> Result<MfParams> {
    Ok(train_mf_traced(train, graph, cfg)?.params)
}

pub fn train_mf_traced(
    train: &InteractionLog,
    graph: Option<&SimilarityGraph>,
    cfg: &MfConfig,
) -> Result<MfTrained> {
    let (m, n, d) = (train.num_users(), train.num_items(), cfg.dim);
    if train.num_interactions() == 0 {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if d == 0 || cfg.batch == 0 {
        return Err(Error::Parameter("dimension and batch size must be positive".into()));
    }
    if cfg.prior == PriorKind::Graph {
        match graph {
            None => return Err(Error::Parameter("graph prior needs a graph".into())),
            Some(g) if g.num_items() != n => {
                return Err(Error::Parameter(format!(
                    "graph covers {} items, log has {n}",
                    g.num_items()
                )))
            }
            _ => {}
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = 0.1 / (d as f64).sqrt();
    let mut params = MfParams::zeros(m, n, d);
    params.user.mapv_inplace(|_| rng.random_range(-a..a));
    params.item.mapv_inplace(|_| rng.random_range(-a..a));

    let seen: Vec<Vec<usize>> = train
        .timelines()
        .iter()
        .map(|t| {
            let mut s = t.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut positives: Vec<(usize, usize)> = train.interactions().map(|x| (x.user, x.item)).collect();

    let mut opt = OptimizerState::new(
        OptimizerConfig {
            clip_norm: cfg.clip_norm,
            ..OptimizerConfig::adam(cfg.lr)
        },
        &[m * d, n * d],
    );
    let mut grad = MfParams::zeros(m, n, d);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut steps: Vec<BprStep> = Vec::with_capacity(cfg.batch);

    for _ in 0..cfg.epochs {
        positives.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in positives.chunks(cfg.batch) {
            steps.clear();
            for &(j, i) in chunk {
                let mut negs = Vec::with_capacity(cfg.negatives);
                if seen[j].len() < n {
                    for _ in 0..cfg.negatives {
                        let k = loop {
                            let k = rng.random_range(0..n);
                            if seen[j].binary_search(&k).is_err() {
                                break k;
                            }
                        };
                        negs.push(k);
                    }
                }
                steps.push(BprStep {
                    user: j,
                    pos: i,
                    negs,
                });
            }
            let loss = batch_objective(&params, &steps, cfg.prior, cfg.rho, graph, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Numeric("training loss is not finite".into()));
            }
            sum += loss;
            batches += 1;
            opt.step(
                &mut [
                    params.user.as_slice_mut().expect("standard layout"),
                    params.item.as_slice_mut().expect("standard layout"),
                ],
                &[
                    grad.user.as_slice().expect("standard layout"),
                    grad.item.as_slice().expect("standard layout"),
                ],
            )?;
        }
        epoch_loss.push(sum / batches as f64);
    }
    Ok(MfTrained { params, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(u: Array2<f64>, z: Array2<f64>) -> MfParams {
        MfParams { user: u, item: z }
    }

    #[test]
    fn score_values() {
        let p = MfParams::zeros(2, 3, 4);
        assert_eq!(p.score(1, 2).unwrap(), 0.0);
        let p = params(array![[1.0, 2.0]], array![[3.0, -1.0]]);
        assert_eq!(p.score(0, 0).unwrap(), 1.0);
        assert!(matches!(p.score(1, 0), Err(Error::Index { .. })));
        assert!(matches!(p.score(0, 1), Err(Error::Index { .. })));
        // add something orthogonal to U_j
        let p2 = params(array![[1.0, 2.0]], array![[3.0 - 2.0, -1.0 + 1.0]]);
        assert_eq!(p2.score(0, 0).unwrap(), 1.0);
    }

    #[test]
    fn bpr_equal_scores_is_ln2() {
        let p = params(array![[1.0, 1.0]], array![[1.0, 0.0], [0.0, 1.0]]);
        let t = bpr_loss(&p, 0, 0, 1).unwrap();
        assert!((t.value - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bpr_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let p = params(array![[1.0]], array![[m], [0.0]]);
            let v = bpr_loss(&p, 0, 0, 1).unwrap().value;
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-300);
        // large negative margin stays finite
        let p = params(array![[1.0]], array![[-800.0], [0.0]]);
        assert!((bpr_loss(&p, 0, 0, 1).unwrap().value - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bpr_rejects_same_item() {
        let p = MfParams::zeros(1, 2, 1);
        assert!(bpr_loss(&p, 0, 1, 1).is_err());
    }

    #[test]
    fn checkpoint_layout() {
        let p = params(array![[1.0, 2.0]], array![[3.0, 4.0], [5.0, 6.0]]);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"LMPM0001");
        assert_eq!(&buf[8..12], &0u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &2u32.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 6 * 4);
        assert_eq!(MfParams::read_from(&buf[..]).unwrap(), p);
    }

    #[test]
    fn positive_wins_after_training() {
        let log = InteractionLog::from_timelines(
            vec!["u".into()],
            vec!["a".into(), "b".into()],
            vec![vec![0]],
        )
        .unwrap();
        let cfg = MfConfig {
            dim: 4,
            lr: 0.05,
            epochs: 50,
            prior: PriorKind::None,
            ..MfConfig::default()
        };
        let p = train_mf(&log, None, &cfg).unwrap();
        assert!(p.score(0, 0).unwrap() > p.score(0, 1).unwrap());
    }

    #[test]
    fn graph_prior_requires_graph() {
        let log = InteractionLog::from_timelines(vec!["u".into()], vec!["a".into()], vec![vec![0]])
            .unwrap();
        let cfg = MfConfig::default();
        assert!(matches!(train_mf(&log, None, &cfg), Err(Error::Parameter(_))));
    }
}
