//! Clustered synthetic benchmark with planted cold-start items.
//!
//! Every cluster has a center, a random rotation and its own spread. Inside
//! a cluster items come in small families sharing a "style" point that users
//! care about; style spans the dominant directions of the cluster, and the
//! remaining directions carry small preference-irrelevant variation. Users prefer one
//! or two clusters and a style point; their timelines stick to a cluster for
//! a while before switching. Cold items get at most `cold_threshold`
//! interactions, mostly as the final item of a user's timeline.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_embedding_file, write_item_tokens, InteractionLog, COLD_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    pub cold_fraction: f64,
    /// Standard deviation of isotropic jitter added to every embedding.
    pub noise: f64,
    pub seed: u64,
    pub cold_threshold: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Preference-relevant coordinates per item.
    pub style_dims: usize,
    /// Standard deviation of the other within-cluster directions relative to
    /// the style directions.
    pub residual_scale: f64,
    /// Width of a user's taste around their style point.
    pub taste_width: f64,
    /// Items per family within a cluster.
    pub family_size: usize,
    /// Standard deviation of item style around its family's style.
    pub family_spread: f64,
    /// Standard deviation of the cluster centers.
    pub center_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 1000,
            clusters: 10,
            dim: 32,
            cold_fraction: 0.05,
            noise: 0.05,
            seed: 42,
            cold_threshold: COLD_THRESHOLD,
            min_len: 3,
            max_len: 8,
            style_dims: 4,
            residual_scale: 0.15,
            taste_width: 0.5,
            family_size: 10,
            family_spread: 0.25,
            center_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub log: InteractionLog,
    /// Row `i` embeds item `i` of `log`.
    pub embeddings: Array2<f32>,
    /// Planted cold items, ascending.
    pub cold_items: Vec<usize>,
    pub item_cluster: Vec<usize>,
    /// Global family id of each item.
    pub item_family: Vec<usize>,
}

impl SynthData {
    /// Writes `interactions.tsv`, `embeddings.bin`, `items.tsv` and
    /// `truth.tsv` (`item cluster family cold`) into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("interactions.tsv"))?);
        self.log.write_interactions(&mut w)?;
        w.flush()?;
        write_embedding_file(dir.join("embeddings.bin"), &self.embeddings)?;
        write_item_tokens(dir.join("items.tsv"), self.log.item_tokens())?;
        let mut w = BufWriter::new(File::create(dir.join("truth.tsv"))?);
        for (i, c) in self.item_cluster.iter().enumerate() {
            let cold = self.cold_items.binary_search(&i).is_ok();
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                self.log.item_token(i),
                c,
                self.item_family[i],
                u8::from(cold)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
fn random_rotation(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((d, d));
    let mut c = 0;
    while c < d {
        let mut v = Array1::from_shape_fn(d, |_| gaussian(rng));
        for p in 0..c {
            let proj = q.column(p).dot(&v);
            v.scaled_add(-proj, &q.column(p));
        }
        let n = v.dot(&v).sqrt();
        if n < 1e-8 {
            continue;
        }
        q.column_mut(c).assign(&(v / n));
        c += 1;
    }
    q
}

fn validate(cfg: &SynthConfig) -> Result<usize> {
    if cfg.clusters < 2 {
        return Err(Error::Parameter("need at least 2 clusters".into()));
    }
    if cfg.items < 2 * cfg.clusters || cfg.users == 0 || cfg.dim == 0 {
        return Err(Error::Parameter("too few items, users or dimensions".into()));
    }
    if cfg.style_dims == 0 || cfg.style_dims > cfg.dim {
        return Err(Error::Parameter(
            "style directions must lie in 1..=dim".into(),
        ));
    }
    if cfg.family_size == 0 {
        return Err(Error::Parameter("family size must be positive".into()));
    }
    if !(cfg.taste_width > 0.0) {
        return Err(Error::Parameter("taste width must be positive".into()));
    }
    if cfg.min_len < 2 || cfg.max_len < cfg.min_len {
        return Err(Error::Parameter("bad timeline length range".into()));
    }
    if cfg.cold_threshold < 2 {
        return Err(Error::Parameter("cold threshold must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.cold_fraction) {
        return Err(Error::Parameter("cold fraction must lie in [0, 1)".into()));
    }
    let n_cold = (cfg.cold_fraction * cfg.items as f64).round() as usize;
    let warm = cfg.items - n_cold;
    if warm < cfg.clusters {
        return Err(Error::Parameter(format!(
            "cold fraction {} leaves {warm} warm items for {} clusters",
            cfg.cold_fraction, cfg.clusters
        )));
    }
    // Warm items need more than `cold_threshold` interactions each.
    let capacity = cfg.users * cfg.min_len;
    if warm * (cfg.cold_threshold + 1) > capacity {
        return Err(Error::Parameter(format!(
            "{} users cannot give {warm} warm items more than {} interactions each",
            cfg.users, cfg.cold_threshold
        )));
    }
    if n_cold > 0 && cfg.users < cfg.cold_threshold {
        return Err(Error::Parameter("too few users to place cold items".into()));
    }
    Ok(n_cold)
}

struct User {
    clusters: Vec<usize>,
    mix: Vec<f64>,
    taste: Array1<f64>,
}

const STAY: f64 = 0.7;
const APPEND_COLD: f64 = 0.8;

fn affinity(style: &Array2<f64>, item: usize, taste: &Array1<f64>, width: f64) -> f64 {
    let d2: f64 = style
        .row(item)
        .iter()
        .zip(taste.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (-d2 / (2.0 * width * width)).exp()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let n_cold = validate(cfg)?;
    let (n, m, c, d) = (cfg.items, cfg.users, cfg.clusters, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Items: clusters assigned round-robin over a shuffled order.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut item_cluster = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        item_cluster[i] = r % c;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..n {
        members[item_cluster[i]].push(i);
    }
    // Cold items: a spread of clusters, chosen from the shuffled order.
    let mut cold_items: Vec<usize> = order[..n_cold].to_vec();
    cold_items.sort_unstable();
    let is_cold = {
        let mut v = vec![false; n];
        for &i in &cold_items {
            v[i] = true;
        }
        v
    };

    let p = cfg.style_dims;
    let centers = Array2::from_shape_fn((c, d), |_| cfg.center_scale * gaussian(&mut rng));
    let rotations: Vec<Array2<f64>> = (0..c).map(|_| random_rotation(d, &mut rng)).collect();
    let spread: Vec<f64> = (0..c).map(|_| 2f64.powf(rng.random_range(-1.0..1.0))).collect();
    let mut style = Array2::<f64>::zeros((n, p));
    let mut item_family = vec![0; n];
    let mut families = 0;
    for list in &members {
        for fam in list.chunks(cfg.family_size) {
            for &i in fam {
                item_family[i] = families;
            }
            families += 1;
            let center: Vec<f64> = (0..p).map(|_| gaussian(&mut rng)).collect();
            for &i in fam {
                for a in 0..p {
                    style[[i, a]] = center[a] + cfg.family_spread * gaussian(&mut rng);
                }
            }
        }
    }
    let popularity: Vec<f64> = (0..n).map(|_| (0.5 * gaussian(&mut rng)).exp()).collect();

    let mut x = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let k = item_cluster[i];
        let mut local = Array1::<f64>::zeros(d);
        for a in 0..d {
            local[a] = if a < p {
                style[[i, a]]
            } else {
                cfg.residual_scale * gaussian(&mut rng)
            };
        }
        let mut row = centers.row(k).to_owned();
        row.scaled_add(spread[k], &rotations[k].dot(&local));
        for v in row.iter_mut() {
            *v += cfg.noise * gaussian(&mut rng);
        }
        x.row_mut(i).assign(&row);
    }

    let users: Vec<User> = (0..m)
        .map(|_| {
            let first = rng.random_range(0..c);
            let (clusters, mix) = if rng.random_bool(0.5) {
                let mut second = rng.random_range(0..c - 1);
                if second >= first {
                    second += 1;
                }
                (vec![first, second], vec![0.7, 0.3])
            } else {
                (vec![first], vec![1.0])
            };
            let taste = Array1::from_shape_fn(p, |_| gaussian(&mut rng));
            User {
                clusters,
                mix,
                taste,
            }
        })
        .collect();

    let mut timelines: Vec<Vec<usize>> = Vec::with_capacity(m);
    for u in &users {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let pickers: Vec<(Vec<usize>, WeightedIndex<f64>)> = u
            .clusters
            .iter()
            .map(|&k| {
                let cand: Vec<usize> = members[k].iter().copied().filter(|&i| !is_cold[i]).collect();
                let w: Vec<f64> = cand
                    .iter()
                    .map(|&i| popularity[i] * affinity(&style, i, &u.taste, cfg.taste_width) + 1e-6)
                    .collect();
                (cand, WeightedIndex::new(w).expect("positive weights"))
            })
            .collect();
        let mix = WeightedIndex::new(&u.mix).expect("positive mix");
        let mut cur = mix.sample(&mut rng);
        let mut t: Vec<usize> = Vec::with_capacity(len);
        let mut tries = 0;
        while t.len() < len && tries < 50 * len {
            tries += 1;
            if !rng.random_bool(STAY) {
                cur = mix.sample(&mut rng);
            }
            let (cand, w) = &pickers[cur];
            let item = cand[w.sample(&mut rng)];
            if !t.contains(&item) {
                t.push(item);
            }
        }
        timelines.push(t);
    }

    // Planted cold interactions.
    for &i in &cold_items {
        let k = item_cluster[i];
        let cand: Vec<usize> = (0..m).filter(|&j| users[j].clusters.contains(&k)).collect();
        let cand = if cand.len() >= cfg.cold_threshold {
            cand
        } else {
            (0..m).collect()
        };
        let w: Vec<f64> = cand
            .iter()
            .map(|&j| affinity(&style, i, &users[j].taste, cfg.taste_width) + 1e-6)
            .collect();
        let pick = WeightedIndex::new(w).expect("positive weights");
        let count = rng.random_range(2..=cfg.cold_threshold);
        let mut chosen: Vec<usize> = Vec::with_capacity(count);
        for _ in 0..1000 * count {
            if chosen.len() == count {
                break;
            }
            let j = cand[pick.sample(&mut rng)];
            if !chosen.contains(&j) && !timelines[j].contains(&i) {
                chosen.push(j);
            }
        }
        if chosen.len() < 2 {
            return Err(Error::Parameter(format!("cannot place cold item {i}")));
        }
        for j in chosen {
            let t = &mut timelines[j];
            if rng.random_bool(APPEND_COLD) {
                t.push(i);
            } else {
                let at = rng.random_range(0..t.len());
                t.insert(at, i);
            }
        }
    }

    // Warm items must clear the threshold; top them up at non-final positions.
    let mut counts = vec![0usize; n];
    for t in &timelines {
        for &i in t {
            counts[i] += 1;
        }
    }
    for i in 0..n {
        if is_cold[i] || counts[i] > cfg.cold_threshold {
            continue;
        }
        let k = item_cluster[i];
        let mut cand: Vec<usize> = (0..m)
            .filter(|&j| users[j].clusters.contains(&k) && !timelines[j].contains(&i))
            .collect();
        if cand.len() < cfg.cold_threshold + 1 - counts[i] {
            cand = (0..m).filter(|&j| !timelines[j].contains(&i)).collect();
        }
        cand.shuffle(&mut rng);
        for &j in cand.iter().take(cfg.cold_threshold + 1 - counts[i]) {
            let t = &mut timelines[j];
            let at = rng.random_range(0..t.len());
            t.insert(at, i);
        }
    }

    let user_tokens = (0..m).map(|j| format!("u{j:05}")).collect();
    let item_tokens = (0..n).map(|i| format!("i{i:05}")).collect();
    let log = InteractionLog::from_timelines(user_tokens, item_tokens, timelines)?;
    Ok(SynthData {
        log,
        embeddings: x.mapv(|v| v as f32),
        cold_items,
        item_cluster,
        item_family,
    })
}
