//! All-rank top-K evaluation and the robustness sweep.
//!
//! Every user with at least one held-out item ranks the full catalogue minus
//! their training items. Ties are broken by ascending item index so reports
//! are deterministic.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{DatasetSplit, Edge};
use crate::model::predict;
use crate::rng::{derive_seed, Stream};
use crate::tensor::Tensor;
use crate::trainer::Trainer;

pub const DEFAULT_KS: [usize; 3] = [10, 20, 40];

/// Indices of the `k` largest finite-or-positive-infinite scores, best first.
/// `-∞` entries are never returned.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&j| scores[j] != f64::NEG_INFINITY)
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() {
        if k > 0 {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// `|top-K ∩ relevant| / |relevant|`, or `None` without relevant items.
pub fn recall_at_k(ranked: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|j| relevant.contains(j)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG, or `None` without relevant items.
pub fn ndcg_at_k(ranked: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, j)| relevant.contains(j))
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(gain).sum();
    Some(dcg / idcg)
}

/// Mean Recall@K and NDCG@K over evaluated users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["label".to_string(), "users".to_string()];
        cols.extend(self.ks.iter().map(|k| format!("recall@{k}")));
        cols.extend(self.ks.iter().map(|k| format!("ndcg@{k}")));
        cols.join(",")
    }

    pub fn csv_row(&self, label: &str) -> String {
        let mut cols = vec![label.to_string(), self.users.to_string()];
        cols.extend(self.recall.iter().map(f64::to_string));
        cols.extend(self.ndcg.iter().map(f64::to_string));
        cols.join(",")
    }
}

fn items_by_user(num_users: usize, edges: &[Edge]) -> Vec<BTreeSet<usize>> {
    let mut out = vec![BTreeSet::new(); num_users];
    for e in edges {
        out[e.user].insert(e.item);
    }
    out
}

/// Evaluates raw per-user item scores from `score`. Training items are
/// masked before ranking.
pub fn evaluate_with<F>(
    num_users: usize,
    train: &[Edge],
    targets: &[Edge],
    ks: &[usize],
    mut score: F,
) -> Result<EvalReport>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if targets.is_empty() {
        return Err(Error::Contract("evaluation needs at least one held-out edge".into()));
    }
    if ks.is_empty() {
        return Err(Error::Config("no cutoffs to evaluate".into()));
    }
    let seen = items_by_user(num_users, train);
    let relevant = items_by_user(num_users, targets);
    let kmax = *ks.iter().max().expect("nonempty");
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let mut users = 0usize;
    for u in 0..num_users {
        if relevant[u].is_empty() {
            continue;
        }
        let mut s = score(u)?;
        for &j in &seen[u] {
            s[j] = f64::NEG_INFINITY;
        }
        let ranked = top_k(&s, kmax);
        for (i, &k) in ks.iter().enumerate() {
            recall[i] += recall_at_k(&ranked, &relevant[u], k).expect("nonempty");
            ndcg[i] += ndcg_at_k(&ranked, &relevant[u], k).expect("nonempty");
        }
        users += 1;
    }
    recall.iter_mut().for_each(|r| *r /= users as f64);
    ndcg.iter_mut().for_each(|n| *n /= users as f64);
    Ok(EvalReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        users,
    })
}

/// Ranks by `s_u·s_j` from a final embedding table.
pub fn evaluate_embeddings(
    s: &Tensor,
    num_users: usize,
    train: &[Edge],
    targets: &[Edge],
    ks: &[usize],
) -> Result<EvalReport> {
    evaluate_with(num_users, train, targets, ks, |u| predict(s, num_users, u, &[]))
}

/// Training-set degree of every item.
pub fn popularity_scores(num_items: usize, train: &[Edge]) -> Vec<f64> {
    let mut deg = vec![0.0; num_items];
    for e in train {
        deg[e.item] += 1.0;
    }
    deg
}

/// Recommends the most popular unseen items to everyone.
pub fn evaluate_popularity(split: &DatasetSplit, targets: &[Edge], ks: &[usize]) -> Result<EvalReport> {
    let pop = popularity_scores(split.num_items, &split.train);
    evaluate_with(split.num_users, &split.train, targets, ks, |_| Ok(pop.clone()))
}

/// How the training graph is degraded in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perturbation {
    /// Add `level·|E_train|` random non-edges.
    Noise,
    /// Drop a `level` fraction of training edges.
    Sparsify,
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Perturbation::Noise),
            "sparsify" => Ok(Perturbation::Sparsify),
            _ => Err(Error::Config(format!(
                "unknown perturbation `{s}` (expected noise|sparsify)"
            ))),
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Perturbation::Noise => "noise",
            Perturbation::Sparsify => "sparsify",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub recall20: f64,
    pub ndcg20: f64,
    /// `(baseline − recall)/baseline` against the unperturbed run.
    pub relative_degradation: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "level,recall@20,ndcg@20,relative_degradation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.level, self.recall20, self.ndcg20, self.relative_degradation
        )
    }
}

/// Perturbed copy of `split` at `level`; level 0 returns it unchanged.
pub fn perturb(split: &DatasetSplit, kind: Perturbation, level: f64, seed: u64) -> Result<DatasetSplit> {
    if level == 0.0 {
        return Ok(split.clone());
    }
    let seed = derive_seed(seed, Stream::Perturb, level.to_bits());
    match kind {
        Perturbation::Noise => split.perturb_noise(level, seed),
        Perturbation::Sparsify => split.perturb_sparsify(level, seed),
    }
}

/// Trains and tests once per level. The unperturbed run is the baseline
/// and is reused when `0` is among the levels.
pub fn robustness_sweep(
    config: &TrainConfig,
    split: &DatasetSplit,
    kind: Perturbation,
    levels: &[f64],
) -> Result<Vec<SweepRow>> {
    let run = |level: f64| -> Result<(f64, f64)> {
        let data = perturb(split, kind, level, config.seed)?;
        let mut t = Trainer::new(config.clone(), data)?;
        t.fit(|_| {})?;
        let r = t.test_report(&[20])?;
        Ok((r.recall[0], r.ndcg[0]))
    };
    let baseline = run(0.0)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let (recall20, ndcg20) = if level == 0.0 { baseline } else { run(level)? };
        let relative_degradation = if baseline.0 > 0.0 {
            (baseline.0 - recall20) / baseline.0
        } else {
            0.0
        };
        rows.push(SweepRow {
            level,
            recall20,
            ndcg20,
            relative_degradation,
        });
    }
    Ok(rows)
}
