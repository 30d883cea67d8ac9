//! Loss terms and their weighted combination.
//!
//! ```text
//! L = L_Rec + L_MAE + λ1·L_RD + λ2·L_CIR + λ3·‖Θ‖²
//! ```
//!
//! The reconstruction term of the combined objective is the masked
//! autoencoder loss `L_MAE`, which is unbounded below and held in check by
//! the regularizer and gradient clipping.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::graph::{Edge, InteractionGraph};
use crate::model::{lgcn, pair_scores};
use crate::tensor::{SparseMatrix, Tensor};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_LAMBDA1: f64 = 1.0;
pub const DEFAULT_LAMBDA2: f64 = 1e-2;
pub const DEFAULT_LAMBDA3: f64 = 1e-5;
/// Above this many items the recommendation loss samples negatives.
pub const FULL_SOFTMAX_MAX_ITEMS: usize = 50_000;
pub const SAMPLED_NEGATIVES: usize = 256;

/// `(user, positive item, negative item)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Checks that every positive is a training edge and every negative is not.
pub fn validate_triplets(train: &InteractionGraph, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        if !train.contains(Edge::new(t.user, t.pos)) {
            return Err(Error::Contract(format!(
                "triplet positive ({}, {}) is not a training edge",
                t.user, t.pos
            )));
        }
        if t.neg >= train.num_items() || train.contains(Edge::new(t.user, t.neg)) {
            return Err(Error::Contract(format!(
                "triplet negative ({}, {}) is a training edge",
                t.user, t.neg
            )));
        }
    }
    Ok(())
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

/// `Σ softplus(ȳ⁻ − ȳ⁺) = Σ −log σ(ȳ⁺ − ȳ⁻)` over the triplets.
pub fn loss_rd(g: &mut Graph, z: Var, triplets: &[Triplet], num_users: usize) -> Result<Var> {
    if triplets.is_empty() {
        return Ok(zero(g));
    }
    let pos: Vec<Edge> = triplets.iter().map(|t| Edge::new(t.user, t.pos)).collect();
    let neg: Vec<Edge> = triplets.iter().map(|t| Edge::new(t.user, t.neg)).collect();
    let yp = pair_scores(g, z, &pos, num_users)?;
    let yn = pair_scores(g, z, &neg, num_users)?;
    let diff = g.sub(yn, yp)?;
    let l = g.softplus(diff)?;
    g.sum(l)
}

/// `−Σ s_u·s_i` over the masked-out edges. Zero when nothing was masked.
pub fn loss_mae(g: &mut Graph, s: Var, masked: &[Edge], num_users: usize) -> Result<Var> {
    if masked.is_empty() {
        return Ok(zero(g));
    }
    let dots = pair_scores(g, s, masked, num_users)?;
    let total = g.sum(dots)?;
    g.scale(total, -1.0)
}

/// `log Σ_k exp(cos(e_k^R, e_k^C)/τ)` with both views propagated from `h`.
pub fn loss_cir(
    g: &mut Graph,
    h: Var,
    rationale_adj: &Arc<SparseMatrix>,
    complement_adj: &Arc<SparseMatrix>,
    layers: usize,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let er = lgcn(g, h, rationale_adj, layers)?;
    let ec = lgcn(g, h, complement_adj, layers)?;
    let cos = g.cosine_rows(er, ec)?;
    let logits = g.scale(cos, 1.0 / tau)?;
    let row = g.transpose(logits)?;
    g.logsumexp_rows(row)
}

/// Candidate set for the softmax recommendation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecMode {
    /// Every item is a candidate.
    Full,
    /// The positive plus `negatives` uniformly drawn items.
    Sampled { negatives: usize },
}

impl RecMode {
    pub fn for_items(num_items: usize) -> Self {
        if num_items <= FULL_SOFTMAX_MAX_ITEMS {
            RecMode::Full
        } else {
            RecMode::Sampled {
                negatives: SAMPLED_NEGATIVES,
            }
        }
    }
}

/// `Σ (log Σ_{j'} exp(s_u·s_{j'}) − s_u·s_j)` over the positives.
pub fn loss_rec<R: Rng + ?Sized>(
    g: &mut Graph,
    s: Var,
    positives: &[Edge],
    num_users: usize,
    num_items: usize,
    mode: RecMode,
    rng: &mut R,
) -> Result<Var> {
    if positives.is_empty() {
        return Ok(zero(g));
    }
    let pos = pair_scores(g, s, positives, num_users)?;
    let pos = g.sum(pos)?;
    let lse = match mode {
        RecMode::Full => {
            // Each distinct user's normalizer is computed once and weighted
            // by how many positives it has in the batch.
            let mut counts = std::collections::BTreeMap::new();
            for e in positives {
                *counts.entry(e.user).or_insert(0.0) += 1.0;
            }
            let users: Vec<usize> = counts.keys().copied().collect();
            let weight = g.constant(Tensor::column(counts.into_values().collect()));
            let su = g.gather_rows(s, &users)?;
            let all: Vec<usize> = (num_users..num_users + num_items).collect();
            let items = g.gather_rows(s, &all)?;
            let it = g.transpose(items)?;
            let logits = g.matmul(su, it)?;
            let lse = g.logsumexp_rows(logits)?;
            let weighted = g.mul_column(lse, weight)?;
            g.sum(weighted)?
        }
        RecMode::Sampled { negatives } => {
            let width = negatives + 1;
            let mut cand_users = Vec::with_capacity(positives.len() * width);
            let mut cand_items = Vec::with_capacity(positives.len() * width);
            for e in positives {
                cand_users.push(e.user);
                cand_items.push(num_users + e.item);
                for _ in 0..negatives {
                    cand_users.push(e.user);
                    cand_items.push(num_users + rng.gen_range(0..num_items));
                }
            }
            let cu = g.gather_rows(s, &cand_users)?;
            let ci = g.gather_rows(s, &cand_items)?;
            let dots = g.row_dot(cu, ci)?;
            let logits = g.reshape(dots, positives.len(), width)?;
            let lse = g.logsumexp_rows(logits)?;
            g.sum(lse)?
        }
    };
    g.sub(lse, pos)
}

/// `Σ_p ‖p‖²` over the given parameters.
pub fn loss_reg(g: &mut Graph, params: &[Var]) -> Result<Var> {
    let mut total = zero(g);
    for &p in params {
        let sq = g.square(p)?;
        let s = g.sum(sq)?;
        total = g.add(total, s)?;
    }
    Ok(total)
}

/// Loss weights `λ1` (rationale discovery), `λ2` (independence), `λ3`
/// (regularization).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            lambda3: DEFAULT_LAMBDA3,
        }
    }
}

/// Tape handles for each loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub rec: Var,
    pub mae: Var,
    pub rd: Var,
    pub cir: Var,
    pub reg: Var,
}

/// Weighted sum of the terms on the tape.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut total = g.add(terms.rec, terms.mae)?;
    for (v, c) in [(terms.rd, w.lambda1), (terms.cir, w.lambda2), (terms.reg, w.lambda3)] {
        if c != 0.0 {
            let s = g.scale(v, c)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Values of every loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_mae: f64,
    pub l_rd: f64,
    pub l_cir: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(l_rec: f64, l_mae: f64, l_rd: f64, l_cir: f64, l_reg: f64, w: &LossWeights) -> Self {
        Self {
            l_rec,
            l_mae,
            l_rd,
            l_cir,
            l_reg,
            total: l_rec + l_mae + w.lambda1 * l_rd + w.lambda2 * l_cir + w.lambda3 * l_reg,
        }
    }

    pub fn read(g: &Graph, terms: &LossTerms, total: Var) -> Self {
        Self {
            l_rec: g.value(terms.rec).item(),
            l_mae: g.value(terms.mae).item(),
            l_rd: g.value(terms.rd).item(),
            l_cir: g.value(terms.cir).item(),
            l_reg: g.value(terms.reg).item(),
            total: g.value(total).item(),
        }
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.l_rec += other.l_rec;
        self.l_mae += other.l_mae;
        self.l_rd += other.l_rd;
        self.l_cir += other.l_cir;
        self.l_reg += other.l_reg;
        self.total += other.total;
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_mae, self.l_rd, self.l_cir, self.l_reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub const CSV_HEADER: &'static str = "epoch,l_rec,l_mae,l_rd,l_cir,l_reg,total";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{}",
            self.l_rec, self.l_mae, self.l_rd, self.l_cir, self.l_reg, self.total
        )
    }
}
