//! Command-line driver: `ingest`, `build-prior`, `train`, `eval`,
//! `sweep-rho` and `synth`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::corpus::{load_embeddings, load_interactions, InteractionLog, LoadOptions, COLD_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, DEFAULT_KS};
use crate::mf::MfConfig;
use crate::pipeline::{evaluate_model, fit, sweep_rho, Dataset, Model, ModelKind, TrainSpec};
use crate::prior::{build_graph, default_k, GraphParams, KernelKind, SimilarityGraph, Symmetrize};
use crate::regularizer::PriorKind;
use crate::seq::{EncoderKind, SeqConfig};
use crate::synth::{generate, SynthConfig};

pub const OUT_ENV: &str = "LMPRIOR_OUT";

#[derive(Debug, Parser)]
#[command(name = "lmprior", version, about = "Text-embedding prior graphs for cold-start recommendation")]
pub struct Cli {
    /// Output directory (overridden by LMPRIOR_OUT).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for prior construction and evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an interactions file and write log.json.
    Ingest(IngestArgs),
    /// Build the item similarity graph from embeddings.
    BuildPrior(BuildPriorArgs),
    /// Train a model and write model.lmpm.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write report.csv.
    Eval(EvalArgs),
    /// Train across a rho grid and write sweep.csv.
    SweepRho(SweepArgs),
    /// Generate a synthetic clustered benchmark.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Interactions file (user, item, timestamp) or a log.json from ingest.
    #[arg(long)]
    pub data: PathBuf,
    /// Skip the first line of the interactions file.
    #[arg(long)]
    pub header: bool,
    /// LMPE0001 embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Item tokens for the embedding rows (default: items.tsv next to the
    /// embeddings).
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, default_value_t = COLD_THRESHOLD)]
    pub cold_threshold: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildPriorArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Neighbors per item including itself (default: floor(sqrt(N))).
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value = "local")]
    pub kernel: KernelKind,
    /// Covariance shrinkage for the local kernel.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value = "mean")]
    pub symmetrize: Symmetrize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "mf")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Hidden width of the MLP item encoder.
    #[arg(long, default_value_t = 128)]
    pub dh: usize,
    /// History window of the sequential model.
    #[arg(long, default_value_t = 50)]
    pub maxlen: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "graph")]
    pub prior: PriorKind,
    #[arg(long, default_value = "table")]
    pub encoder: EncoderKind,
    /// Negatives per positive for MF.
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    /// Clip the global gradient norm.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Graph file from build-prior; required with --prior graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

impl ModelArgs {
    pub fn spec(&self) -> TrainSpec {
        match self.model {
            ModelKind::Mf => TrainSpec::Mf(MfConfig {
                dim: self.d,
                lr: self.lr,
                epochs: self.epochs,
                batch: self.batch,
                rho: self.rho,
                prior: self.prior,
                negatives: self.negatives,
                seed: self.seed,
                clip_norm: self.clip_norm,
            }),
            ModelKind::Seq => TrainSpec::Seq(SeqConfig {
                dim: self.d,
                hidden: self.dh,
                max_len: self.maxlen,
                lr: self.lr,
                epochs: self.epochs,
                batch: self.batch,
                rho: self.rho,
                prior: self.prior,
                encoder: self.encoder,
                seed: self.seed,
                clip_norm: self.clip_norm,
            }),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalFlags {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
    /// Exclude previously seen items from the ranking.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub mask_seen: bool,
}

impl EvalFlags {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.ks.clone(),
            mask_seen: self.mask_seen,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by train.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model name in the report (default: the checkpoint's kind).
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 1.0, 10.0, 100.0])]
    pub rhos: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub num_users: usize,
    #[arg(long, default_value_t = 1000)]
    pub num_items: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub cold_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            users: self.num_users,
            items: self.num_items,
            clusters: self.clusters,
            dim: self.dim,
            cold_fraction: self.cold_fraction,
            noise: self.noise,
            seed: self.seed,
            min_len: self.min_len,
            max_len: self.max_len,
            ..SynthConfig::default()
        }
    }
}

/// The output directory after applying the environment override.
pub fn resolve_out(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Parameter("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, which then stays in use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = resolve_out(&cli.out);
    fs::create_dir_all(&out)?;
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &out, threads),
        Command::BuildPrior(a) => cmd_build_prior(a, &out, threads),
        Command::Train(a) => cmd_train(a, &out, threads),
        Command::Eval(a) => cmd_eval(a, &out, threads),
        Command::SweepRho(a) => cmd_sweep_rho(a, &out, threads),
        Command::Synth(a) => cmd_synth(a, &out, threads),
    }
}

fn echo_config(out: &Path, name: &str, config: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&config).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(out.join(format!("{name}.config.json")), format!("{text}\n"))?;
    log::info!("{name} config: {text}");
    Ok(())
}

fn load_log(a: &DataArgs) -> Result<InteractionLog> {
    if a.data.extension().is_some_and(|e| e == "json") {
        InteractionLog::load(&a.data)
    } else {
        load_interactions(&a.data, LoadOptions { header: a.header })
    }
}

fn items_path(a: &DataArgs) -> Option<PathBuf> {
    match (&a.items, &a.embeddings) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(e)) => Some(e.with_file_name("items.tsv")),
        (None, None) => None,
    }
}

fn load_dataset(a: &DataArgs) -> Result<Dataset> {
    let log = load_log(a)?;
    let x = match (&a.embeddings, items_path(a)) {
        (Some(e), Some(items)) => Some(load_embeddings(e, items, &log)?.to_f64()),
        _ => None,
    };
    Dataset::new(log, x, a.cold_threshold)
}

fn data_json(a: &DataArgs) -> serde_json::Value {
    json!({
        "data": a.data,
        "header": a.header,
        "embeddings": a.embeddings,
        "items": items_path(a),
        "cold_threshold": a.cold_threshold,
    })
}

fn load_graph(a: &ModelArgs) -> Result<Option<SimilarityGraph>> {
    match (a.prior, &a.graph) {
        (PriorKind::Graph, None) => Err(Error::Parameter("--prior graph needs --graph".into())),
        (PriorKind::Graph, Some(p)) => Ok(Some(SimilarityGraph::load(p)?)),
        _ => Ok(None),
    }
}

pub fn cmd_ingest(a: &IngestArgs, out: &Path, threads: usize) -> Result<()> {
    let data = load_dataset(&a.data)?;
    echo_config(out, "ingest", json!({ "out": out, "threads": threads, "data": data_json(&a.data) }))?;
    data.log.save(out.join("log.json"))?;
    println!(
        "users {} items {} interactions {} cold items {} cold users {}",
        data.log.num_users(),
        data.log.num_items(),
        data.log.num_interactions(),
        data.tags.cs_items.len(),
        data.tags.cs_users.len()
    );
    Ok(())
}

pub fn cmd_build_prior(a: &BuildPriorArgs, out: &Path, threads: usize) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let x = data
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::Parameter("build-prior needs --embeddings".into()))?;
    let k = a.k.unwrap_or_else(|| default_k(x.nrows()));
    let params = GraphParams {
        eps: a.eps,
        symmetrize: a.symmetrize,
        ..GraphParams::new(k, a.kernel)
    };
    echo_config(
        out,
        "build-prior",
        json!({
            "out": out,
            "threads": threads,
            "data": data_json(&a.data),
            "K": k,
            "kernel": a.kernel,
            "eps": a.eps,
            "symmetrize": a.symmetrize,
        }),
    )?;
    let g = build_graph(x.view(), params)?;
    g.save(out.join("graph.lmpg"))?;
    println!("edges {}", g.num_edges());
    let h = g.weight_histogram();
    for (b, c) in h.iter().enumerate() {
        println!("({:.1}, {:.1}] {c}", b as f64 / 10.0, (b + 1) as f64 / 10.0);
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, out: &Path, threads: usize) -> Result<()> {
    let graph = load_graph(&a.model)?;
    let data = load_dataset(&a.data)?;
    let spec = a.model.spec();
    echo_config(
        out,
        "train",
        json!({ "out": out, "threads": threads, "data": data_json(&a.data), "graph": a.model.graph, "train": spec }),
    )?;
    let model = fit(&data, graph.as_ref(), &spec)?;
    model.save(out.join("model.lmpm"))?;
    println!("wrote {}", out.join("model.lmpm").display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &Path, threads: usize) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let model = Model::load(&a.checkpoint)?;
    let name = a.name.clone().unwrap_or_else(|| model.kind().to_string());
    echo_config(
        out,
        "eval",
        json!({
            "out": out,
            "threads": threads,
            "data": data_json(&a.data),
            "checkpoint": a.checkpoint,
            "name": name,
            "ks": a.eval.ks,
            "mask_seen": a.eval.mask_seen,
        }),
    )?;
    let report = evaluate_model(&name, &model, &data, &a.eval.options())?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(out.join("report.csv"), &buf)?;
    std::io::stdout().write_all(&buf)?;
    Ok(())
}

pub fn cmd_sweep_rho(a: &SweepArgs, out: &Path, threads: usize) -> Result<()> {
    if !a.rhos.contains(&0.0) {
        return Err(Error::Parameter("the rho grid must include 0".into()));
    }
    let graph = load_graph(&a.model)?;
    let data = load_dataset(&a.data)?;
    let spec = a.model.spec();
    echo_config(
        out,
        "sweep-rho",
        json!({
            "out": out,
            "threads": threads,
            "data": data_json(&a.data),
            "graph": a.model.graph,
            "train": spec,
            "rhos": a.rhos,
            "ks": a.eval.ks,
            "mask_seen": a.eval.mask_seen,
        }),
    )?;
    let sweep = sweep_rho(&data, graph.as_ref(), &spec, &a.rhos, &a.eval.options())?;
    let mut w = BufWriter::new(File::create(out.join("sweep.csv"))?);
    sweep.write_csv(&mut w)?;
    w.flush()?;
    sweep.write_csv(std::io::stdout().lock())?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &Path, threads: usize) -> Result<()> {
    let cfg = a.config();
    echo_config(out, "synth", json!({ "out": out, "threads": threads, "synth": cfg }))?;
    let data = generate(&cfg)?;
    data.write_dir(out)?;
    println!(
        "users {} items {} interactions {} cold items {}",
        data.log.num_users(),
        data.log.num_items(),
        data.log.num_interactions(),
        data.cold_items.len()
    );
    Ok(())
}
