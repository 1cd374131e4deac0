//! Full-catalog ranking metrics with cold-start slices.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{ColdStartTags, InteractionLog, Split};
use crate::error::{Error, Result};
use crate::mf::MfParams;
use crate::seq::SeqScorer;

pub const DEFAULT_KS: [usize; 3] = [10, 20, 40];

/// 1-based rank of `target`: one plus the number of items scoring strictly
/// higher plus the number of equal-scoring items with a smaller index.
pub fn rank_target(scores: &[f64], target: usize) -> Result<usize> {
    rank_target_masked(scores, target, &BTreeSet::new())
}

/// As [`rank_target`], ignoring the items in `mask` (the target itself is
/// never masked).
pub fn rank_target_masked(scores: &[f64], target: usize, mask: &BTreeSet<usize>) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::Index {
            index: target,
            len: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score of item {i} is not finite")));
    }
    let st = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if i == target || mask.contains(&i) {
            continue;
        }
        if s > st || (s == st && i < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// `1 / log2(rank + 1)` inside the cutoff, else 0.
pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hr_at(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Anything that can score the whole catalog for a user.
pub trait Scorer: Sync {
    /// `history` is everything the user did before the target.
    fn scores(&self, user: usize, history: &[usize]) -> Result<Vec<f64>>;
}

impl Scorer for MfParams {
    fn scores(&self, user: usize, _history: &[usize]) -> Result<Vec<f64>> {
        if user >= self.num_users() {
            return Err(Error::Index {
                index: user,
                len: self.num_users(),
            });
        }
        Ok(self.scores_for_user(user))
    }
}

impl Scorer for SeqScorer<'_> {
    fn scores(&self, _user: usize, history: &[usize]) -> Result<Vec<f64>> {
        Ok(self.logits(history)?.to_vec())
    }
}

/// A dot-product scorer over fixed user and item matrices.
pub struct DotScorer<'a> {
    pub users: ArrayView2<'a, f64>,
    pub items: ArrayView2<'a, f64>,
}

impl Scorer for DotScorer<'_> {
    fn scores(&self, user: usize, _history: &[usize]) -> Result<Vec<f64>> {
        Ok(self.items.dot(&self.users.row(user)).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankOutcome {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Slice {
    All,
    CsUsers,
    CsItems,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::All, Slice::CsUsers, Slice::CsItems];

    pub fn name(self) -> &'static str {
        match self {
            Slice::All => "all",
            Slice::CsUsers => "cs-users",
            Slice::CsItems => "cs-items",
        }
    }

    pub fn contains(self, outcome: &RankOutcome, tags: &ColdStartTags) -> bool {
        match self {
            Slice::All => true,
            Slice::CsUsers => tags.is_cold_user(outcome.user),
            Slice::CsItems => tags.is_cold_item(outcome.target),
        }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Metric {
    Ndcg,
    Hr,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Hr => "hr",
        }
    }

    pub fn at(self, rank: usize, k: usize) -> f64 {
        match self {
            Metric::Ndcg => ndcg_at(rank, k),
            Metric::Hr => hr_at(rank, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    /// Number of test cases in the slice.
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub outcomes: Vec<RankOutcome>,
}

impl EvalReport {
    /// Aggregates `outcomes` into rows; empty slices produce no rows.
    pub fn from_outcomes(
        model: &str,
        outcomes: Vec<RankOutcome>,
        tags: &ColdStartTags,
        ks: &[usize],
    ) -> Self {
        let mut rows = Vec::new();
        for slice in Slice::ALL {
            let ranks: Vec<usize> = outcomes
                .iter()
                .filter(|o| slice.contains(o, tags))
                .map(|o| o.rank)
                .collect();
            if ranks.is_empty() {
                log::warn!("slice {slice} of {model} is empty");
                continue;
            }
            for metric in [Metric::Ndcg, Metric::Hr] {
                for &k in ks {
                    let value = ranks.iter().map(|&r| metric.at(r, k)).sum::<f64>()
                        / ranks.len() as f64;
                    rows.push(ReportRow {
                        model: model.to_string(),
                        slice,
                        metric,
                        k,
                        value,
                        count: ranks.len(),
                    });
                }
            }
        }
        Self { rows, outcomes }
    }

    pub fn get(&self, slice: Slice, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.slice == slice && r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "model,slice,metric,k,value")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.6}",
                r.model,
                r.slice,
                r.metric.name(),
                r.k,
                r.value
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Exclude the user's earlier items (other than the target) from ranking.
    pub mask_seen: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            mask_seen: false,
        }
    }
}

/// Ranks every test target against the full catalog. The model sees the
/// user's training and validation items as history.
pub fn evaluate(
    model: &str,
    scorer: &dyn Scorer,
    full: &InteractionLog,
    split: &Split,
    tags: &ColdStartTags,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(Error::Parameter("cutoffs must be positive".into()));
    }
    if split.test.is_empty() {
        log::warn!("no test cases; the report is empty");
        return Ok(EvalReport::default());
    }
    let outcomes = split
        .test
        .par_iter()
        .map(|&(user, target)| {
            let history = split.test_history(full, user);
            let scores = scorer.scores(user, &history)?;
            if scores.len() != full.num_items() {
                return Err(Error::Parameter(format!(
                    "model scores {} items, log has {}",
                    scores.len(),
                    full.num_items()
                )));
            }
            let mask: BTreeSet<usize> = if opts.mask_seen {
                history.into_iter().filter(|&i| i != target).collect()
            } else {
                BTreeSet::new()
            };
            Ok(RankOutcome {
                user,
                target,
                rank: rank_target_masked(&scores, target, &mask)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(model, outcomes, tags, &opts.ks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_target(&[0.1, 0.9, 0.3], 1).unwrap(), 1);
        let flat = [0.5; 6];
        assert_eq!(rank_target(&flat, 0).unwrap(), 1);
        assert_eq!(rank_target(&flat, 4).unwrap(), 5);
        assert!(matches!(rank_target(&[f64::NAN, 1.0], 1), Err(Error::Numeric(_))));
        assert!(rank_target(&[1.0], 1).is_err());
    }

    #[test]
    fn masked_items_do_not_count() {
        let s = [3.0, 2.0, 1.0];
        let mask: BTreeSet<usize> = [0, 2].into();
        assert_eq!(rank_target_masked(&s, 1, &mask).unwrap(), 1);
        assert_eq!(rank_target_masked(&s, 2, &mask).unwrap(), 2);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(ndcg_at(1, 10), 1.0);
        assert_eq!(ndcg_at(3, 10), 0.5);
        assert_eq!(ndcg_at(11, 10), 0.0);
        assert_eq!(hr_at(1, 10), 1.0);
        assert_eq!(hr_at(40, 40), 1.0);
        assert_eq!(hr_at(41, 40), 0.0);
    }

    #[test]
    fn hr_is_mean_over_users() {
        let tags = ColdStartTags {
            threshold: 5,
            cs_items: BTreeSet::new(),
            cs_users: BTreeSet::new(),
        };
        let outcomes = vec![
            RankOutcome {
                user: 0,
                target: 0,
                rank: 1,
            },
            RankOutcome {
                user: 1,
                target: 0,
                rank: 15,
            },
        ];
        let rep = EvalReport::from_outcomes("m", outcomes, &tags, &[10]);
        assert_eq!(rep.get(Slice::All, Metric::Hr, 10), Some(0.5));
        assert_eq!(rep.get(Slice::CsUsers, Metric::Hr, 10), None);
    }

    #[test]
    fn csv_format() {
        let tags = ColdStartTags {
            threshold: 5,
            cs_items: BTreeSet::new(),
            cs_users: [0].into(),
        };
        let outcomes = vec![RankOutcome {
            user: 0,
            target: 1,
            rank: 3,
        }];
        let rep = EvalReport::from_outcomes("mf", outcomes, &tags, &[10]);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "model,slice,metric,k,value\n\
             mf,all,ndcg,10,0.500000\nmf,all,hr,10,1.000000\n\
             mf,cs-users,ndcg,10,0.500000\nmf,cs-users,hr,10,1.000000\n"
        );
    }
}
