//! End-to-end glue: datasets, model training by kind, evaluation and rho
//! sweeps. The CLI and the benchmarks are thin layers over this module.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, KIND_MF, KIND_SEQ};
use crate::corpus::{split_leave_last_out, tag_cold_start, ColdStartTags, InteractionLog, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport, Metric, Slice};
use crate::mf::{train_mf, MfConfig, MfParams};
use crate::prior::SimilarityGraph;
use crate::regularizer::PriorKind;
use crate::seq::{train_seq, EncoderKind, SeqConfig, SeqParams, SeqScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mf,
    Seq,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(ModelKind::Mf),
            "seq" => Ok(ModelKind::Seq),
            _ => Err(Error::Parameter(format!("unknown model {s:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mf => "mf",
            ModelKind::Seq => "seq",
        })
    }
}

/// A log with its split, cold-start tags and (optionally) item embeddings in
/// internal item order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub split: Split,
    pub tags: ColdStartTags,
    pub embeddings: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(
        log: InteractionLog,
        embeddings: Option<Array2<f64>>,
        cold_threshold: usize,
    ) -> Result<Self> {
        if let Some(x) = &embeddings {
            if x.nrows() != log.num_items() {
                return Err(Error::Parameter(format!(
                    "embeddings cover {} items, log has {}",
                    x.nrows(),
                    log.num_items()
                )));
            }
        }
        let split = split_leave_last_out(&log);
        let tags = tag_cold_start(&log, cold_threshold);
        Ok(Self {
            log,
            split,
            tags,
            embeddings,
        })
    }

    pub fn embeddings_view(&self) -> Option<ArrayView2<'_, f64>> {
        self.embeddings.as_ref().map(|x| x.view())
    }
}

/// What to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum TrainSpec {
    Mf(MfConfig),
    Seq(SeqConfig),
}

impl TrainSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainSpec::Mf(_) => ModelKind::Mf,
            TrainSpec::Seq(_) => ModelKind::Seq,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            TrainSpec::Mf(c) => c.rho,
            TrainSpec::Seq(c) => c.rho,
        }
    }

    pub fn prior(&self) -> PriorKind {
        match self {
            TrainSpec::Mf(c) => c.prior,
            TrainSpec::Seq(c) => c.prior,
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            TrainSpec::Mf(c) => c.rho = rho,
            TrainSpec::Seq(c) => c.rho = rho,
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mf(MfParams),
    Seq(SeqParams),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mf(_) => ModelKind::Mf,
            Model::Seq(_) => ModelKind::Seq,
        }
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        match self {
            Model::Mf(p) => p.write_to(w),
            Model::Seq(p) => p.write_to(w),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint of either kind.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        match checkpoint::read_kind(&mut r)? {
            KIND_MF => Ok(Model::Mf(MfParams::read_body(&mut r)?)),
            KIND_SEQ => Ok(Model::Seq(SeqParams::read_body(&mut r)?)),
            k => Err(Error::Format(format!("unknown model kind {k}"))),
        }
    }
}

pub fn fit(data: &Dataset, graph: Option<&SimilarityGraph>, spec: &TrainSpec) -> Result<Model> {
    match spec {
        TrainSpec::Mf(cfg) => Ok(Model::Mf(train_mf(&data.split.train, graph, cfg)?)),
        TrainSpec::Seq(cfg) => {
            if cfg.encoder == EncoderKind::Mlp && data.embeddings.is_none() {
                return Err(Error::Parameter(
                    "the MLP encoder needs --embeddings".into(),
                ));
            }
            Ok(Model::Seq(train_seq(
                &data.split.train,
                data.embeddings_view(),
                graph,
                cfg,
            )?))
        }
    }
}

pub fn evaluate_model(
    name: &str,
    model: &Model,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    match model {
        Model::Mf(p) => {
            if p.num_users() != data.log.num_users() || p.num_items() != data.log.num_items() {
                return Err(Error::Parameter(format!(
                    "checkpoint is {}x{}, log is {}x{}",
                    p.num_users(),
                    p.num_items(),
                    data.log.num_users(),
                    data.log.num_items()
                )));
            }
            evaluate(name, p, &data.log, &data.split, &data.tags, opts)
        }
        Model::Seq(p) => {
            if p.encoder_kind() == EncoderKind::Mlp && data.embeddings.is_none() {
                return Err(Error::Parameter(
                    "the MLP encoder needs --embeddings".into(),
                ));
            }
            let scorer = SeqScorer::new(p, data.embeddings_view())?;
            evaluate(name, &scorer, &data.log, &data.split, &data.tags, opts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    /// `value / value(rho = 0)`; NaN when the baseline is zero.
    pub relative: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
}

impl Sweep {
    pub fn relative(&self, rho: f64, slice: Slice, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rho == rho && r.slice == slice && r.metric == metric && r.k == k)
            .map(|r| r.relative)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "rho,slice,metric,k,value,relative")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6}",
                r.rho,
                r.slice,
                r.metric.name(),
                r.k,
                r.value,
                r.relative
            )?;
        }
        Ok(())
    }
}

/// Trains once per `rho` (same seed) and reports every metric relative to
/// the `rho = 0` run.
pub fn sweep_rho(
    data: &Dataset,
    graph: Option<&SimilarityGraph>,
    spec: &TrainSpec,
    rhos: &[f64],
    opts: &EvalOptions,
) -> Result<Sweep> {
    if !rhos.contains(&0.0) {
        return Err(Error::Parameter("the rho grid must include 0".into()));
    }
    if let Some(r) = rhos.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::Parameter(format!("rho {r} is not a nonnegative number")));
    }
    let mut reports = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let model = fit(data, graph, &spec.with_rho(rho))?;
        let name = format!("{}", spec.kind());
        reports.push((rho, evaluate_model(&name, &model, data, opts)?));
    }
    let base = &reports
        .iter()
        .find(|(r, _)| *r == 0.0)
        .expect("grid contains zero")
        .1;
    let mut rows = Vec::new();
    for (rho, rep) in &reports {
        for row in &rep.rows {
            let b = base.get(row.slice, row.metric, row.k).unwrap_or(0.0);
            let relative = if b == 0.0 { f64::NAN } else { row.value / b };
            rows.push(SweepRow {
                rho: *rho,
                slice: row.slice,
                metric: row.metric,
                k: row.k,
                value: row.value,
                relative,
            });
        }
    }
    Ok(Sweep { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::COLD_THRESHOLD;
    use crate::prior::{build_graph, GraphParams, KernelKind};
    use crate::synth::{generate, SynthConfig};

    fn small() -> (Dataset, SimilarityGraph) {
        let cfg = SynthConfig {
            users: 120,
            items: 60,
            clusters: 3,
            dim: 6,
            family_size: 5,
            style_dims: 2,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let x = s.embeddings.mapv(f64::from);
        let g = build_graph(x.view(), GraphParams::new(7, KernelKind::Global)).unwrap();
        (Dataset::new(s.log, Some(x), COLD_THRESHOLD).unwrap(), g)
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("seq".parse::<ModelKind>().unwrap(), ModelKind::Seq);
        assert!("gru".parse::<ModelKind>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_by_kind() {
        let (data, g) = small();
        let spec = TrainSpec::Seq(SeqConfig {
            dim: 4,
            epochs: 1,
            ..SeqConfig::default()
        });
        let m = fit(&data, Some(&g), &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lmpm");
        m.save(&p).unwrap();
        let back = Model::load(&p).unwrap();
        assert_eq!(back.kind(), ModelKind::Seq);
        let mut a = Vec::new();
        let mut b = Vec::new();
        m.write_to(&mut a).unwrap();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_needs_zero_and_has_unit_baseline() {
        let (data, g) = small();
        let spec = TrainSpec::Mf(MfConfig {
            dim: 4,
            epochs: 2,
            lr: 0.01,
            ..MfConfig::default()
        });
        let opts = EvalOptions::default();
        assert!(matches!(
            sweep_rho(&data, Some(&g), &spec, &[0.1, 1.0], &opts),
            Err(Error::Parameter(_))
        ));
        let sw = sweep_rho(&data, Some(&g), &spec, &[0.0, 1.0], &opts).unwrap();
        for r in sw.rows.iter().filter(|r| r.rho == 0.0) {
            assert!(r.relative == 1.0 || (r.value == 0.0 && r.relative.is_nan()));
        }
        let per_rho = sw.rows.iter().filter(|r| r.rho == 1.0).count();
        assert_eq!(sw.rows.len(), 2 * per_rho);
    }
}
