//! Single-block attentive next-item model with tied item embeddings.
//!
//! For a history `h_1..h_m` (the most recent `L` items) the model forms
//! `e_t = Z[h_t] + P[t]`, a query `q = e_m W_q`, attention scores
//! `a_t = <e_t W_k, q> / sqrt(d)`, the readout `u = (sum_t softmax(a)_t e_t) W_v`
//! and logits `Z u` over all items. Item embeddings come either from a free
//! table or from a one-hidden-layer tanh MLP applied to text embeddings.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, KIND_SEQ};
use crate::corpus::InteractionLog;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::prior::SimilarityGraph;
use crate::regularizer::{accumulate_prior, PriorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Table,
    Mlp,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(EncoderKind::Table),
            "mlp" => Ok(EncoderKind::Mlp),
            _ => Err(Error::Parameter(format!("unknown encoder {s:?}"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Table => "table",
            EncoderKind::Mlp => "mlp",
        })
    }
}

/// `tanh(X W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Array2::zeros((input, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, output)),
            b2: Array1::zeros(output),
        }
    }

    fn hidden(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1);
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemEncoder {
    Table(Array2<f64>),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqParams {
    pub encoder: ItemEncoder,
    /// `L x d`; row `t` is added to the `t`-th history position.
    pub pos: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    /// Item count; fixed for the MLP encoder by the rows of `X`.
    num_items: usize,
}

impl SeqParams {
    /// All-zero parameters. `hidden` and `input` are ignored for the table
    /// encoder.
    pub fn zeros(
        kind: EncoderKind,
        num_items: usize,
        dim: usize,
        input: usize,
        hidden: usize,
        max_len: usize,
    ) -> Self {
        let encoder = match kind {
            EncoderKind::Table => ItemEncoder::Table(Array2::zeros((num_items, dim))),
            EncoderKind::Mlp => ItemEncoder::Mlp(Mlp::zeros(input, hidden, dim)),
        };
        Self {
            encoder,
            pos: Array2::zeros((max_len, dim)),
            wq: Array2::zeros((dim, dim)),
            wk: Array2::zeros((dim, dim)),
            wv: Array2::zeros((dim, dim)),
            num_items,
        }
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        match self.encoder {
            ItemEncoder::Table(_) => EncoderKind::Table,
            ItemEncoder::Mlp(_) => EncoderKind::Mlp,
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.pos.nrows()
    }

    /// `(d', d_h)`, zero for the table encoder.
    pub fn mlp_shape(&self) -> (usize, usize) {
        match &self.encoder {
            ItemEncoder::Table(_) => (0, 0),
            ItemEncoder::Mlp(m) => (m.w1.nrows(), m.w1.ncols()),
        }
    }

    /// Item embeddings `Z` (N x d).
    pub fn encode_items(&self, x: Option<ArrayView2<'_, f64>>) -> Result<Array2<f64>> {
        Ok(self.encode_with_hidden(x)?.0)
    }

    fn encode_with_hidden(
        &self,
        x: Option<ArrayView2<'_, f64>>,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        match &self.encoder {
            ItemEncoder::Table(z) => Ok((z.clone(), None)),
            ItemEncoder::Mlp(m) => {
                let x = x.ok_or_else(|| {
                    Error::Parameter("the MLP encoder needs item embeddings".into())
                })?;
                if x.ncols() != m.w1.nrows() || x.nrows() != self.num_items {
                    return Err(Error::Parameter(format!(
                        "embeddings are {}x{}, encoder expects {}x{}",
                        x.nrows(),
                        x.ncols(),
                        self.num_items,
                        m.w1.nrows()
                    )));
                }
                let h = m.hidden(x);
                let mut z = h.dot(&m.w2);
                z += &m.b2;
                Ok((z, Some(h)))
            }
        }
    }

    /// Parameter tensors in checkpoint order: encoder tensors (`Z`, or
    /// `W1, b1, W2, b2`), then `P, W_q, W_k, W_v`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = match &self.encoder {
            ItemEncoder::Table(z) => vec![z.as_slice().unwrap()],
            ItemEncoder::Mlp(m) => vec![
                m.w1.as_slice().unwrap(),
                m.b1.as_slice().unwrap(),
                m.w2.as_slice().unwrap(),
                m.b2.as_slice().unwrap(),
            ],
        };
        out.extend([
            self.pos.as_slice().unwrap(),
            self.wq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = match &mut self.encoder {
            ItemEncoder::Table(z) => vec![z.as_slice_mut().unwrap()],
            ItemEncoder::Mlp(m) => vec![
                m.w1.as_slice_mut().unwrap(),
                m.b1.as_slice_mut().unwrap(),
                m.w2.as_slice_mut().unwrap(),
                m.b2.as_slice_mut().unwrap(),
            ],
        };
        out.extend([
            self.pos.as_slice_mut().unwrap(),
            self.wq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        g
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (dp, dh) = self.mlp_shape();
        checkpoint::write_header(&mut w, KIND_SEQ)?;
        for v in [self.num_items, self.dim(), dp, dh, self.max_len()] {
            checkpoint::write_u32(&mut w, v as u32)?;
        }
        let kind: u8 = match self.encoder_kind() {
            EncoderKind::Table => 0,
            EncoderKind::Mlp => 1,
        };
        w.write_all(&[kind])?;
        for t in self.tensors() {
            checkpoint::write_tensor(&mut w, t)?;
        }
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
        if kind != KIND_SEQ {
            return Err(Error::Format(format!("expected a sequential checkpoint, found kind {kind}")));
        }
        Self::read_body(&mut r)
    }

    pub(crate) fn read_body(r: &mut impl Read) -> Result<Self> {
        let n = checkpoint::read_u32(r)? as usize;
        let d = checkpoint::read_u32(r)? as usize;
        let dp = checkpoint::read_u32(r)? as usize;
        let dh = checkpoint::read_u32(r)? as usize;
        let l = checkpoint::read_u32(r)? as usize;
        let encoder = match checkpoint::read_u8(r)? {
            0 => ItemEncoder::Table(checkpoint::read_matrix(r, n, d)?),
            1 => ItemEncoder::Mlp(Mlp {
                w1: checkpoint::read_matrix(r, dp, dh)?,
                b1: checkpoint::read_vector(r, dh)?,
                w2: checkpoint::read_matrix(r, dh, d)?,
                b2: checkpoint::read_vector(r, d)?,
            }),
            k => return Err(Error::Format(format!("unknown encoder kind {k}"))),
        };
        Ok(Self {
            encoder,
            pos: checkpoint::read_matrix(r, l, d)?,
            wq: checkpoint::read_matrix(r, d, d)?,
            wk: checkpoint::read_matrix(r, d, d)?,
            wv: checkpoint::read_matrix(r, d, d)?,
            num_items: n,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Numerically stable softmax.
pub fn softmax(a: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = a.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let mut e = a.mapv(|x| (x - m).exp());
    let s = e.sum();
    e /= s;
    e
}

/// `-ln softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn ce_loss(logits: ArrayView1<'_, f64>, target: usize) -> Result<(f64, Array1<f64>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    let m = logits.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let mut p = logits.mapv(|x| (x - m).exp());
    let s = p.sum();
    let value = s.ln() - (logits[target] - m);
    p /= s;
    p[target] -= 1.0;
    Ok((value, p))
}

/// Intermediate values of the attention block for one history.
#[derive(Debug, Clone)]
pub struct Attention {
    /// `m x d` position-augmented history embeddings.
    pub e: Array2<f64>,
    pub q: Array1<f64>,
    /// `W_k q`, so that score `t` is `<e_t, r> / sqrt(d)`.
    pub r: Array1<f64>,
    pub alpha: Array1<f64>,
    pub ebar: Array1<f64>,
    /// User vector.
    pub u: Array1<f64>,
}

fn window(history: &[usize], max_len: usize) -> &[usize] {
    &history[history.len().saturating_sub(max_len)..]
}

/// Attention over the last `L` entries of `history` given item embeddings `z`.
pub fn attend(params: &SeqParams, z: ArrayView2<'_, f64>, history: &[usize]) -> Result<Attention> {
    if history.is_empty() {
        return Err(Error::Parameter("history must not be empty".into()));
    }
    let h = window(history, params.max_len());
    let d = params.dim();
    let mut e = Array2::<f64>::zeros((h.len(), d));
    for (t, &item) in h.iter().enumerate() {
        if item >= z.nrows() {
            return Err(Error::Index {
                index: item,
                len: z.nrows(),
            });
        }
        let mut row = e.row_mut(t);
        row.assign(&z.row(item));
        row += &params.pos.row(t);
    }
    let q = e.row(h.len() - 1).dot(&params.wq);
    let r = params.wk.dot(&q);
    let scale = 1.0 / (d as f64).sqrt();
    let a = e.dot(&r) * scale;
    let alpha = softmax(a.view());
    let ebar = alpha.dot(&e);
    let u = ebar.dot(&params.wv);
    Ok(Attention {
        e,
        q,
        r,
        alpha,
        ebar,
        u,
    })
}

/// Logits over all items.
pub fn forward(
    params: &SeqParams,
    x: Option<ArrayView2<'_, f64>>,
    history: &[usize],
) -> Result<Array1<f64>> {
    let z = params.encode_items(x)?;
    Ok(z.dot(&attend(params, z.view(), history)?.u))
}

/// Backpropagates `du` through the attention block; adds into `grad`
/// (attention weights and positions) and `dz`.
fn attention_backward(
    params: &SeqParams,
    att: &Attention,
    history: &[usize],
    du: ArrayView1<'_, f64>,
    grad: &mut SeqParams,
    dz: &mut Array2<f64>,
) {
    let h = window(history, params.max_len());
    let m = h.len();
    let scale = 1.0 / (params.dim() as f64).sqrt();

    // u = ebar W_v
    grad.wv += &outer(att.ebar.view(), du);
    let debar = params.wv.dot(&du);

    // ebar = sum_t alpha_t e_t
    let mut de = Array2::<f64>::zeros(att.e.raw_dim());
    for t in 0..m {
        de.row_mut(t).scaled_add(att.alpha[t], &debar);
    }
    let dalpha = att.e.dot(&debar);
    let mean = att.alpha.dot(&dalpha);
    let da = &att.alpha * &(dalpha - mean);

    // a_t = <e_t, r> * scale
    for t in 0..m {
        de.row_mut(t).scaled_add(da[t] * scale, &att.r);
    }
    let dr = da.dot(&att.e) * scale;

    // r = W_k q
    grad.wk += &outer(dr.view(), att.q.view());
    let dq = params.wk.t().dot(&dr);

    // q = e_m W_q
    grad.wq += &outer(att.e.row(m - 1), dq.view());
    de.row_mut(m - 1).scaled_add(1.0, &params.wq.dot(&dq));

    for (t, &item) in h.iter().enumerate() {
        let row = de.row(t);
        dz.row_mut(item).scaled_add(1.0, &row);
        grad.pos.row_mut(t).scaled_add(1.0, &row);
    }
}

fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// One training example: predict `target` from `history`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqExample {
    pub history: Vec<usize>,
    pub target: usize,
}

/// Every `(history window, target)` pair with at least one history item.
pub fn examples(train: &InteractionLog, max_len: usize) -> Vec<SeqExample> {
    let mut out = Vec::new();
    for t in train.timelines() {
        for p in 1..t.len() {
            out.push(SeqExample {
                history: window(&t[..p], max_len).to_vec(),
                target: t[p],
            });
        }
    }
    out
}

/// Minibatch objective `mean ce + rho * penalty(items in the batch)` and its
/// gradient with respect to every parameter (written into `grad`).
pub fn batch_objective(
    params: &SeqParams,
    x: Option<ArrayView2<'_, f64>>,
    batch: &[SeqExample],
    prior: PriorKind,
    rho: f64,
    graph: Option<&SimilarityGraph>,
    grad: &mut SeqParams,
) -> Result<f64> {
    for t in grad.tensors_mut() {
        t.fill(0.0);
    }
    if batch.is_empty() {
        return Ok(0.0);
    }
    let (z, hidden) = params.encode_with_hidden(x)?;
    let n = z.nrows();
    let d = params.dim();
    let b = batch.len();
    let w = 1.0 / b as f64;

    let mut atts = Vec::with_capacity(b);
    let mut users = Array2::<f64>::zeros((b, d));
    for (row, ex) in batch.iter().enumerate() {
        let att = attend(params, z.view(), &ex.history)?;
        users.row_mut(row).assign(&att.u);
        atts.push(att);
    }
    let logits = users.dot(&z.t());
    let mut dlogits = Array2::<f64>::zeros((b, n));
    let mut total = 0.0;
    for (row, ex) in batch.iter().enumerate() {
        let (v, g) = ce_loss(logits.row(row), ex.target)?;
        total += w * v;
        dlogits.row_mut(row).scaled_add(w, &g);
    }

    let mut dz = dlogits.t().dot(&users);
    let du = dlogits.dot(&z);
    for (row, ex) in batch.iter().enumerate() {
        attention_backward(params, &atts[row], &ex.history, du.row(row), grad, &mut dz);
    }

    let mut items: Vec<usize> = batch
        .iter()
        .flat_map(|ex| ex.history.iter().copied().chain(std::iter::once(ex.target)))
        .collect();
    items.sort_unstable();
    items.dedup();
    let pen = accumulate_prior(prior, rho, z.view(), graph, &items, dz.view_mut())?;
    total += rho * pen;

    match (&params.encoder, &mut grad.encoder) {
        (ItemEncoder::Table(_), ItemEncoder::Table(gz)) => *gz += &dz,
        (ItemEncoder::Mlp(m), ItemEncoder::Mlp(gm)) => {
            let h = hidden.expect("MLP encoding keeps its hidden layer");
            let x = x.expect("checked by encode");
            gm.w2 += &h.t().dot(&dz);
            gm.b2 += &dz.sum_axis(Axis(0));
            let mut dpre = dz.dot(&m.w2.t());
            dpre.zip_mut_with(&h, |g, &hv| *g *= 1.0 - hv * hv);
            gm.w1 += &x.t().dot(&dpre);
            gm.b1 += &dpre.sum_axis(Axis(0));
        }
        _ => return Err(Error::Parameter("gradient buffer has a different encoder".into())),
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqConfig {
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub rho: f64,
    pub prior: PriorKind,
    pub encoder: EncoderKind,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            hidden: 128,
            max_len: 50,
            lr: 1e-3,
            epochs: 50,
            batch: 128,
            rho: 1.0,
            prior: PriorKind::Graph,
            encoder: EncoderKind::Table,
            seed: 42,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeqTrained {
    pub params: SeqParams,
    pub epoch_loss: Vec<f64>,
}

/// Random initialization: small uniform item table and positions, uniform
/// `+-1/sqrt(fan_in)` projections and MLP weights, zero biases, identity `W_v`.
pub fn init_params(
    cfg: &SeqConfig,
    num_items: usize,
    input_dim: usize,
    rng: &mut impl Rng,
) -> SeqParams {
    let d = cfg.dim;
    let mut p = SeqParams::zeros(cfg.encoder, num_items, d, input_dim, cfg.hidden, cfg.max_len);
    let small = 0.1 / (d as f64).sqrt();
    let proj = 1.0 / (d as f64).sqrt();
    match &mut p.encoder {
        ItemEncoder::Table(z) => z.mapv_inplace(|_| rng.random_range(-small..small)),
        ItemEncoder::Mlp(m) => {
            let a1 = 1.0 / (input_dim.max(1) as f64).sqrt();
            let a2 = 1.0 / (cfg.hidden.max(1) as f64).sqrt();
            m.w1.mapv_inplace(|_| rng.random_range(-a1..a1));
            m.w2.mapv_inplace(|_| rng.random_range(-a2..a2));
        }
    }
    p.pos.mapv_inplace(|_| rng.random_range(-small..small));
    p.wq.mapv_inplace(|_| rng.random_range(-proj..proj));
    p.wk.mapv_inplace(|_| rng.random_range(-proj..proj));
    p.wv.assign(&Array2::eye(d));
    p
}

pub fn train_seq(
    train: &InteractionLog,
    x: Option<ArrayView2<'_, f64>>,
    graph: Option<&SimilarityGraph>,
    cfg: &SeqConfig,
) -> Result<SeqParams> {
    Ok(train_seq_traced(train, x, graph, cfg)?.params)
}

pub fn train_seq_traced(
    train: &InteractionLog,
    x: Option<ArrayView2<'_, f64>>,
    graph: Option<&SimilarityGraph>,
    cfg: &SeqConfig,
) -> Result<SeqTrained> {
    let n = train.num_items();
    if cfg.dim == 0 || cfg.batch == 0 || cfg.max_len == 0 {
        return Err(Error::Parameter(
            "dimension, batch size and history length must be positive".into(),
        ));
    }
    if cfg.encoder == EncoderKind::Mlp {
        match x {
            None => return Err(Error::Parameter("the MLP encoder needs item embeddings".into())),
            Some(x) if x.nrows() != n => {
                return Err(Error::Parameter(format!(
                    "embeddings cover {} items, log has {n}",
                    x.nrows()
                )))
            }
            _ => {}
        }
        if cfg.hidden == 0 {
            return Err(Error::Parameter("hidden width must be positive".into()));
        }
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
    let mut all = examples(train, cfg.max_len);
    if all.is_empty() {
        return Err(Error::EmptyInput(
            "no user has two training interactions".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let input_dim = x.map_or(0, |x| x.ncols());
    let mut params = init_params(cfg, n, input_dim, &mut rng);
    let mut grad = params.zeros_like();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut opt = OptimizerState::new(
        OptimizerConfig {
            clip_norm: cfg.clip_norm,
            ..OptimizerConfig::adam(cfg.lr)
        },
        &sizes,
    );

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        all.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in all.chunks(cfg.batch) {
            let loss = batch_objective(&params, x, chunk, cfg.prior, cfg.rho, graph, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Numeric("training loss is not finite".into()));
            }
            sum += loss;
            batches += 1;
            opt.step(&mut params.tensors_mut(), &grad.tensors())?;
        }
        epoch_loss.push(sum / batches as f64);
    }
    Ok(SeqTrained { params, epoch_loss })
}

/// Scores from a trained model; item embeddings are encoded once.
#[derive(Debug, Clone)]
pub struct SeqScorer<'a> {
    params: &'a SeqParams,
    z: Array2<f64>,
}

impl<'a> SeqScorer<'a> {
    pub fn new(params: &'a SeqParams, x: Option<ArrayView2<'_, f64>>) -> Result<Self> {
        Ok(Self {
            params,
            z: params.encode_items(x)?,
        })
    }

    pub fn item_embeddings(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn logits(&self, history: &[usize]) -> Result<Array1<f64>> {
        Ok(self.z.dot(&attend(self.params, self.z.view(), history)?.u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(kind: EncoderKind) -> (SeqParams, Array2<f64>) {
        let cfg = SeqConfig {
            dim: 3,
            hidden: 4,
            max_len: 3,
            encoder: kind,
            ..SeqConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let mut p = init_params(&cfg, 5, 2, &mut rng);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        (p, x)
    }

    #[test]
    fn zero_mlp_gives_zero_embeddings() {
        let p = SeqParams::zeros(EncoderKind::Mlp, 4, 3, 2, 5, 2);
        let x = Array2::from_elem((4, 2), 0.7);
        assert_eq!(p.encode_items(Some(x.view())).unwrap(), Array2::<f64>::zeros((4, 3)));
        assert!(p.encode_items(None).is_err());
    }

    #[test]
    fn table_encoder_is_identity() {
        let (p, _) = tiny(EncoderKind::Table);
        let ItemEncoder::Table(z) = &p.encoder else { unreachable!() };
        assert_eq!(&p.encode_items(None).unwrap(), z);
    }

    #[test]
    fn single_item_history() {
        let (p, _) = tiny(EncoderKind::Table);
        let z = p.encode_items(None).unwrap();
        let att = attend(&p, z.view(), &[2]).unwrap();
        assert_eq!(att.alpha, array![1.0]);
        let e = &z.row(2) + &p.pos.row(0);
        let u = p.wv.t().dot(&e);
        for (a, b) in att.u.iter().zip(u.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(forward(&p, None, &[2]).unwrap().len(), 5);
        assert!(forward(&p, None, &[]).is_err());
    }

    #[test]
    fn ce_uniform_and_limit() {
        let (v, g) = ce_loss(Array1::zeros(7).view(), 3).unwrap();
        assert!((v - 7f64.ln()).abs() < 1e-15);
        assert!((g.sum()).abs() < 1e-15);
        let mut l = Array1::zeros(4);
        l[1] = 1e4;
        assert_eq!(ce_loss(l.view(), 1).unwrap().0, 0.0);
        assert!(ce_loss(l.view(), 4).is_err());
    }

    #[test]
    fn long_history_uses_last_window() {
        let (p, _) = tiny(EncoderKind::Table);
        let a = forward(&p, None, &[0, 1, 2, 3, 4]).unwrap();
        let b = forward(&p, None, &[2, 3, 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn examples_cover_every_later_position() {
        let log = InteractionLog::from_timelines(
            vec!["a".into(), "b".into()],
            (0..4).map(|i| i.to_string()).collect(),
            vec![vec![0, 1, 2, 3], vec![1]],
        )
        .unwrap();
        let ex = examples(&log, 2);
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[2].history, vec![1, 2]);
        assert_eq!(ex[2].target, 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in [EncoderKind::Table, EncoderKind::Mlp] {
            let (p, _) = tiny(kind);
            let mut buf = Vec::new();
            p.write_to(&mut buf).unwrap();
            assert_eq!(&buf[8..12], &1u32.to_le_bytes());
            let q = SeqParams::read_from(&buf[..]).unwrap();
            let mut buf2 = Vec::new();
            q.write_to(&mut buf2).unwrap();
            assert_eq!(buf, buf2);
            assert_eq!(q.encoder_kind(), kind);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for kind in [EncoderKind::Table, EncoderKind::Mlp] {
            let (p, x) = tiny(kind);
            let batch = vec![
                SeqExample {
                    history: vec![0, 3, 1],
                    target: 2,
                },
                SeqExample {
                    history: vec![4],
                    target: 0,
                },
            ];
            let mut grad = p.zeros_like();
            batch_objective(&p, Some(x.view()), &batch, PriorKind::L2, 0.3, None, &mut grad)
                .unwrap();
            let h = 1e-5;
            let mut scratch = p.zeros_like();
            let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
            for (ti, ga) in analytic.iter().enumerate() {
                for k in 0..ga.len() {
                    let mut f = |delta: f64| {
                        let mut q = p.clone();
                        q.tensors_mut()[ti][k] += delta;
                        batch_objective(&q, Some(x.view()), &batch, PriorKind::L2, 0.3, None, &mut scratch)
                            .unwrap()
                    };
                    let num = (f(h) - f(-h)) / (2.0 * h);
                    let err = (num - ga[k]).abs() / num.abs().max(ga[k].abs()).max(1e-6);
                    assert!(err < 1e-5, "{kind} tensor {ti} entry {k}: {num} vs {}", ga[k]);
                }
            }
        }
    }
}
