//! C interface to the lmprior toolkit.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_load`/`*_build`/`*_train` function and released by the matching
//! `*_free`. Fallible calls return an [`LmpStatus`]; the message for the most
//! recent failure on the calling thread is available from
//! [`lmp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use lmprior::corpus::{load_embeddings, load_interactions, InteractionLog, LoadOptions, COLD_THRESHOLD};
use lmprior::eval::EvalOptions;
use lmprior::mf::MfConfig;
use lmprior::pipeline::{evaluate_model, fit, Dataset, Model, TrainSpec};
use lmprior::prior::{build_graph, default_k, GraphParams, KernelKind, SimilarityGraph, Symmetrize};
use lmprior::regularizer::PriorKind;
use lmprior::Error;

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidString = 2,
    /// A parameter was out of its domain.
    InvalidParameter = 3,
    /// Input data could not be read or did not validate.
    InvalidData = 4,
    /// The computation failed (degenerate prior, non-finite values).
    Numeric = 5,
    /// An internal error; the library state is unaffected.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmpKernel {
    Global = 0,
    Local = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmpPrior {
    None = 0,
    L2 = 1,
    Graph = 2,
}

/// Training settings for the matrix factorization model.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LmpMfConfig {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub rho: f64,
    pub prior: LmpPrior,
    pub negatives: usize,
    pub seed: u64,
    /// Gradient clipping norm; zero or negative disables clipping.
    pub clip_norm: f64,
}

/// An interaction log with its split, cold-start tags and optional item
/// embeddings.
pub struct LmpDataset(Dataset);

/// A sparse item similarity graph.
pub struct LmpGraph(SimilarityGraph);

/// A trained model.
pub struct LmpModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn status_of(f: Failure) -> LmpStatus {
    match f {
        Failure::Null(what) => {
            set_error(format!("{what} is null"));
            LmpStatus::NullArgument
        }
        Failure::Utf8(what) => {
            set_error(format!("{what} is not valid UTF-8"));
            LmpStatus::InvalidString
        }
        Failure::Lib(e) => {
            set_error(e.to_string());
            match e.exit_code() {
                2 => LmpStatus::InvalidParameter,
                3 => LmpStatus::InvalidData,
                _ => LmpStatus::Numeric,
            }
        }
    }
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> LmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmpStatus::Ok,
        Ok(Err(e)) => status_of(e),
        Err(_) => {
            set_error("internal panic".into());
            LmpStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Outcome<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))?;
    Ok(PathBuf::from(s))
}

unsafe fn opt_path_arg(p: *const c_char, what: &'static str) -> Outcome<Option<PathBuf>> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Outcome<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lmp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Cold-start threshold used when callers have no preference.
#[no_mangle]
pub extern "C" fn lmp_default_cold_threshold() -> usize {
    COLD_THRESHOLD
}

/// Loads a dataset.
///
/// `data` is a `user item timestamp` text file or a `log.json`. `embeddings`
/// may be null. A null `items` means `items.tsv` next to the embeddings.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_dataset_load(
    data: *const c_char,
    embeddings: *const c_char,
    items: *const c_char,
    header: bool,
    cold_threshold: usize,
    out: *mut *mut LmpDataset,
) -> LmpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let data = path_arg(data, "data")?;
        let emb = opt_path_arg(embeddings, "embeddings")?;
        let items = opt_path_arg(items, "items")?;
        let log = if data.extension().is_some_and(|e| e == "json") {
            InteractionLog::load(&data)?
        } else {
            load_interactions(&data, LoadOptions { header })?
        };
        let x = match emb {
            Some(e) => {
                let items = items.unwrap_or_else(|| e.with_file_name("items.tsv"));
                Some(load_embeddings(&e, items, &log)?.to_f64())
            }
            None => None,
        };
        put(out, LmpDataset(Dataset::new(log, x, cold_threshold)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a pointer from [`lmp_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn lmp_dataset_num_users(ds: *const LmpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.log.num_users())
}

/// # Safety
/// `ds` must be null or a pointer from [`lmp_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn lmp_dataset_num_items(ds: *const LmpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.log.num_items())
}

/// # Safety
/// `ds` must be null or a pointer from [`lmp_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmp_dataset_free(ds: *mut LmpDataset) {
    free(ds)
}

/// Builds the prior graph from the dataset's embeddings. `k == 0` selects
/// `floor(sqrt(N))`.
///
/// # Safety
/// `ds` must come from [`lmp_dataset_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_build(
    ds: *const LmpDataset,
    k: usize,
    kernel: LmpKernel,
    eps: f64,
    out: *mut *mut LmpGraph,
) -> LmpStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let x = ds
            .0
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::Parameter("dataset has no embeddings".into()))?;
        let k = if k == 0 { default_k(x.nrows()) } else { k };
        let kernel = match kernel {
            LmpKernel::Global => KernelKind::Global,
            LmpKernel::Local => KernelKind::Local,
        };
        let params = GraphParams { eps, symmetrize: Symmetrize::Mean, ..GraphParams::new(k, kernel) };
        put(out, LmpGraph(build_graph(x.view(), params)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_load(path: *const c_char, out: *mut *mut LmpGraph) -> LmpStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, LmpGraph(SimilarityGraph::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_save(g: *const LmpGraph, path: *const c_char) -> LmpStatus {
    guard(|| {
        let g = deref(g, "graph")?;
        g.0.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of stored undirected edges.
///
/// # Safety
/// `g` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_num_edges(g: *const LmpGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_edges())
}

/// Symmetric similarity between two items; zero for non-neighbors.
///
/// # Safety
/// `g` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_weight(g: *const LmpGraph, i: usize, k: usize, out: *mut f64) -> LmpStatus {
    guard(|| {
        let g = deref(g, "graph")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let n = g.0.num_items();
        for idx in [i, k] {
            if idx >= n {
                return Err(Error::Index { index: idx, len: n }.into());
            }
        }
        *out = g.0.weight(i, k);
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmp_graph_free(g: *mut LmpGraph) {
    free(g)
}

/// Default matrix factorization settings.
#[no_mangle]
pub extern "C" fn lmp_mf_config_default() -> LmpMfConfig {
    let c = MfConfig::default();
    LmpMfConfig {
        dim: c.dim,
        lr: c.lr,
        epochs: c.epochs,
        batch: c.batch,
        rho: c.rho,
        prior: LmpPrior::Graph,
        negatives: c.negatives,
        seed: c.seed,
        clip_norm: 0.0,
    }
}

/// Trains a matrix factorization model on the dataset's training split.
/// `graph` may be null unless `cfg->prior` is `Graph`.
///
/// # Safety
/// Pointers must come from this library (or be a valid config); `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_mf_train(
    ds: *const LmpDataset,
    graph: *const LmpGraph,
    cfg: *const LmpMfConfig,
    out: *mut *mut LmpModel,
) -> LmpStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let c = *deref(cfg, "config")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let prior = match c.prior {
            LmpPrior::None => PriorKind::None,
            LmpPrior::L2 => PriorKind::L2,
            LmpPrior::Graph => PriorKind::Graph,
        };
        let spec = TrainSpec::Mf(MfConfig {
            dim: c.dim,
            lr: c.lr,
            epochs: c.epochs,
            batch: c.batch,
            rho: c.rho,
            prior,
            negatives: c.negatives,
            seed: c.seed,
            clip_norm: (c.clip_norm > 0.0).then_some(c.clip_norm),
        });
        let g = graph.as_ref().map(|g| &g.0);
        put(out, LmpModel(fit(&ds.0, g, &spec)?));
        Ok(())
    })
}

/// Loads a checkpoint of either model kind.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_model_load(path: *const c_char, out: *mut *mut LmpModel) -> LmpStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, LmpModel(Model::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lmp_model_save(m: *const LmpModel, path: *const c_char) -> LmpStatus {
    guard(|| {
        let m = deref(m, "model")?;
        m.0.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Preference score of `user` for `item` under a matrix factorization
/// model.
///
/// # Safety
/// `m` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmp_model_score(m: *const LmpModel, user: usize, item: usize, out: *mut f64) -> LmpStatus {
    guard(|| {
        let m = deref(m, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        match &m.0 {
            Model::Mf(p) => *out = p.score(user, item)?,
            Model::Seq(_) => {
                return Err(Error::Parameter("per-pair scores need a matrix factorization model".into()).into())
            }
        }
        Ok(())
    })
}

/// Evaluates a model on the dataset's test split and writes the report as
/// CSV to `csv_path`.
///
/// # Safety
/// `ks` must point to `num_ks` values; other pointers as above.
#[no_mangle]
pub unsafe extern "C" fn lmp_evaluate(
    m: *const LmpModel,
    ds: *const LmpDataset,
    ks: *const usize,
    num_ks: usize,
    mask_seen: bool,
    csv_path: *const c_char,
) -> LmpStatus {
    guard(|| {
        let m = deref(m, "model")?;
        let ds = deref(ds, "dataset")?;
        if ks.is_null() && num_ks > 0 {
            return Err(Failure::Null("ks"));
        }
        let path = path_arg(csv_path, "csv_path")?;
        let ks = if num_ks == 0 { Vec::new() } else { std::slice::from_raw_parts(ks, num_ks).to_vec() };
        let opts = if ks.is_empty() { EvalOptions { mask_seen, ..EvalOptions::default() } } else { EvalOptions { ks, mask_seen } };
        let report = evaluate_model(&m.0.kind().to_string(), &m.0, &ds.0, &opts)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        fs::write(Path::new(&path), buf).map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmp_model_free(m: *mut LmpModel) {
    free(m)
}
