use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{global_bandwidth, global_similarity, local_moments, shrink, LocalKernel};
use super::knn::build_knn;
use crate::error::{Error, Result};

pub const GRAPH_MAGIC: &[u8; 8] = b"LMPG0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Global,
    Local,
}

impl KernelKind {
    fn code(self) -> u32 {
        match self {
            KernelKind::Global => 0,
            KernelKind::Local => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(KernelKind::Global),
            1 => Ok(KernelKind::Local),
            _ => Err(Error::Format(format!("unknown kernel kind {c}"))),
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(KernelKind::Global),
            "local" => Ok(KernelKind::Local),
            _ => Err(Error::Parameter(format!("unknown kernel {s:?}"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Global => "global",
            KernelKind::Local => "local",
        })
    }
}

/// How two directional local-kernel values for the same pair are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrize {
    #[default]
    Mean,
    Max,
    Min,
}

impl Symmetrize {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Symmetrize::Mean => 0.5 * (a + b),
            Symmetrize::Max => a.max(b),
            Symmetrize::Min => a.min(b),
        }
    }
}

impl FromStr for Symmetrize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Symmetrize::Mean),
            "max" => Ok(Symmetrize::Max),
            "min" => Ok(Symmetrize::Min),
            _ => Err(Error::Parameter(format!("unknown symmetrization {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub k: usize,
    pub kernel: KernelKind,
    /// Shrinkage strength for the local kernel.
    pub eps: f64,
    pub symmetrize: Symmetrize,
    /// Fixed global-kernel precision; `None` derives it from the data.
    pub lambda: Option<f64>,
}

impl GraphParams {
    pub fn new(k: usize, kernel: KernelKind) -> Self {
        Self {
            k,
            kernel,
            eps: 1e-3,
            symmetrize: Symmetrize::Mean,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: u32,
    pub k: u32,
    pub s: f32,
}

/// Sparse symmetric item graph, one record per unordered pair (`i < k`).
/// Self-similarity is implicitly 1 and never stored.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    n: usize,
    edges: Vec<Edge>,
    kernel: KernelKind,
    k: u32,
    /// lambda for the global kernel, eps for the local one.
    param: f32,
    offsets: Vec<usize>,
    adj: Vec<(u32, f32)>,
}

impl PartialEq for SimilarityGraph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.edges == other.edges
            && self.kernel == other.kernel
            && self.k == other.k
            && self.param.to_bits() == other.param.to_bits()
    }
}

impl SimilarityGraph {
    /// Validates and indexes an edge list. Edges must satisfy `i < k < n`,
    /// `0 < s <= 1`, and be sorted by `(i, k)` without duplicates.
    pub fn from_edges(
        n: usize,
        edges: Vec<Edge>,
        kernel: KernelKind,
        k: u32,
        param: f32,
    ) -> Result<Self> {
        for (p, e) in edges.iter().enumerate() {
            if e.i >= e.k || e.k as usize >= n {
                return Err(Error::Format(format!("bad edge ({}, {})", e.i, e.k)));
            }
            if !(e.s > 0.0 && e.s <= 1.0) {
                return Err(Error::Format(format!("edge weight {} outside (0, 1]", e.s)));
            }
            if p > 0 && (edges[p - 1].i, edges[p - 1].k) >= (e.i, e.k) {
                return Err(Error::Format("edges not sorted or duplicated".into()));
            }
        }
        let mut deg = vec![0usize; n + 1];
        for e in &edges {
            deg[e.i as usize + 1] += 1;
            deg[e.k as usize + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let offsets = deg;
        let mut fill = offsets.clone();
        let mut adj = vec![(0u32, 0f32); edges.len() * 2];
        for e in &edges {
            adj[fill[e.i as usize]] = (e.k, e.s);
            fill[e.i as usize] += 1;
            adj[fill[e.k as usize]] = (e.i, e.s);
            fill[e.k as usize] += 1;
        }
        for i in 0..n {
            adj[offsets[i]..offsets[i + 1]].sort_unstable_by_key(|&(j, _)| j);
        }
        Ok(Self {
            n,
            edges,
            kernel,
            k,
            param,
            offsets,
            adj,
        })
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn param(&self) -> f32 {
        self.param
    }

    /// Graph neighbors of `i` with weights, ascending by index.
    pub fn neighbors(&self, i: usize) -> &[(u32, f32)] {
        &self.adj[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Weight of `{i, k}`: 1 on the diagonal, 0 for pairs without an edge.
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        if i == k {
            return 1.0;
        }
        let nb = self.neighbors(i);
        match nb.binary_search_by_key(&(k as u32), |&(j, _)| j) {
            Ok(p) => nb[p].1 as f64,
            Err(_) => 0.0,
        }
    }

    /// Counts of edge weights in ten equal-width bins over (0, 1].
    pub fn weight_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for e in &self.edges {
            let b = ((e.s * 10.0).ceil() as usize).clamp(1, 10) - 1;
            h[b] += 1;
        }
        h
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(GRAPH_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.edges.len() as u64).to_le_bytes())?;
        for e in &self.edges {
            w.write_all(&e.i.to_le_bytes())?;
            w.write_all(&e.k.to_le_bytes())?;
            w.write_all(&e.s.to_le_bytes())?;
        }
        w.write_all(&self.kernel.code().to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&self.param.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let short = |_| Error::Format("graph file truncated".into());
        let mut head = [0u8; 20];
        r.read_exact(&mut head).map_err(short)?;
        if &head[..8] != GRAPH_MAGIC {
            return Err(Error::Format("bad graph magic".into()));
        }
        let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let e = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
        let mut body = vec![0u8; e * 12];
        r.read_exact(&mut body).map_err(short)?;
        let edges = body
            .chunks_exact(12)
            .map(|c| Edge {
                i: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                k: u32::from_le_bytes(c[4..8].try_into().unwrap()),
                s: f32::from_le_bytes(c[8..12].try_into().unwrap()),
            })
            .collect();
        let mut foot = [0u8; 16];
        r.read_exact(&mut foot).map_err(short)?;
        let kind = KernelKind::from_code(u32::from_le_bytes(foot[0..4].try_into().unwrap()))?;
        let k = u32::from_le_bytes(foot[4..8].try_into().unwrap());
        let param = f32::from_le_bytes(foot[8..12].try_into().unwrap());
        Self::from_edges(n, edges, kind, k, param)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Builds the sparse prior graph over the K-nearest-neighbor pairs.
pub fn build_graph(x: ArrayView2<'_, f64>, params: GraphParams) -> Result<SimilarityGraph> {
    let n = x.nrows();
    if params.k < 1 || params.k > n {
        return Err(Error::Parameter(format!(
            "K must lie in 1..={n}, got {}",
            params.k
        )));
    }
    let knn = build_knn(x, params.k)?;

    // directional weights: (i, k) -> s computed from i's kernel
    let (directional, param): (Vec<Vec<(usize, f64)>>, f64) = match params.kernel {
        KernelKind::Global => {
            let lambda = match params.lambda {
                Some(l) if l > 0.0 && l.is_finite() => l,
                Some(l) => return Err(Error::Parameter(format!("lambda must be positive, got {l}"))),
                None => global_bandwidth(x)?,
            };
            let d = (0..n)
                .into_par_iter()
                .map(|i| {
                    knn.of(i)[1..]
                        .iter()
                        .map(|&k| (k, global_similarity(x.row(i), x.row(k), lambda)))
                        .collect()
                })
                .collect();
            (d, lambda)
        }
        KernelKind::Local => {
            if !(params.eps > 0.0) {
                return Err(Error::Parameter("shrinkage eps must be positive".into()));
            }
            let d = (0..n)
                .into_par_iter()
                .map(|i| {
                    let nb = knn.of(i);
                    let g = local_moments(x, nb);
                    let kern = LocalKernel::new(&shrink(&g.cov, params.eps))?;
                    Ok(nb[1..]
                        .iter()
                        .map(|&k| (k, kern.similarity(x.row(i), x.row(k))))
                        .collect())
                })
                .collect::<Result<_>>()?;
            (d, params.eps)
        }
    };

    let mut pairs: BTreeMap<(u32, u32), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (i, row) in directional.iter().enumerate() {
        for &(k, s) in row {
            let key = (i.min(k) as u32, i.max(k) as u32);
            let slot = pairs.entry(key).or_default();
            if i < k {
                slot.0 = Some(s);
            } else {
                slot.1 = Some(s);
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|((i, k), vals)| {
            let s = match (params.kernel, vals) {
                (KernelKind::Global, (Some(a), _)) | (KernelKind::Global, (None, Some(a))) => a,
                (KernelKind::Local, (Some(a), Some(b))) => params.symmetrize.combine(a, b),
                (KernelKind::Local, (Some(a), None)) | (KernelKind::Local, (None, Some(a))) => a,
                (_, (None, None)) => unreachable!(),
            };
            Edge {
                i,
                k,
                s: (s as f32).max(f32::MIN_POSITIVE),
            }
        })
        .collect();
    SimilarityGraph::from_edges(n, edges, params.kernel, knn.k() as u32, param as f32)
}
