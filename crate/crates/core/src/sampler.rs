//! Fixed-size weighted edge sampling for the rationale, masked and
//! complement subgraphs.
//!
//! All three draws pick exactly `max(1, ⌊ρ·|E|⌋)` distinct edges. The
//! rationale graph is drawn in proportion to the edge probabilities; the
//! masked and complement graphs in proportion to reciprocal scores, so they
//! favour low-rationale edges. Sampling without replacement uses Gumbel-top-k.

use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::RationaleScores;
use crate::error::{Error, Result};
use crate::graph::Edge;

pub const DEFAULT_RHO_R: f64 = 0.7;
pub const DEFAULT_RHO_M: f64 = 0.9;
pub const DEFAULT_RHO_C: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Rationale,
    Masked,
    Complement,
}

/// One drawn subgraph, as positions into the edge list it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphSample {
    pub kind: SampleKind,
    /// Selected positions, ascending.
    pub kept: Vec<usize>,
    /// Positions not selected, ascending. For a masked draw these are the
    /// reconstruction targets.
    pub dropped: Vec<usize>,
    pub rate: f64,
    pub seed: u64,
    /// Epoch of the scores the sample was drawn from.
    pub epoch: usize,
}

impl SubgraphSample {
    pub fn edges(&self, source: &[Edge]) -> Vec<Edge> {
        self.kept.iter().map(|&k| source[k]).collect()
    }

    pub fn dropped_edges(&self, source: &[Edge]) -> Vec<Edge> {
        self.dropped.iter().map(|&k| source[k]).collect()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// `max(1, ⌊rate·total⌋)`, capped at `total`.
pub fn sample_size(rate: f64, total: usize) -> usize {
    // The tolerance keeps products such as 0.29·100 from flooring to 28.
    let n = (rate * total as f64 + 1e-9).floor() as usize;
    n.max(1).min(total)
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1], got {rate}")))
    }
}

/// Draws `count` distinct positions with probability proportional to
/// `weights`, sequentially without replacement.
pub fn sample_indices<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > weights.len() {
        return Err(Error::Contract(format!(
            "cannot draw {count} of {} edges",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Contract(format!("sampling weight {w} is not positive")));
    }
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let u: f64 = Open01.sample(rng);
            (w.ln() - (-u.ln()).ln(), k)
        })
        .collect();
    if count < keyed.len() && count > 0 {
        keyed.select_nth_unstable_by(count - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    let mut out: Vec<usize> = keyed[..count].iter().map(|&(_, k)| k).collect();
    out.sort_unstable();
    Ok(out)
}

/// Weighted draw of `count` distinct edges, deterministic in `seed`.
pub fn sample_weighted(edges: &[Edge], weights: &[f64], count: usize, seed: u64) -> Result<Vec<Edge>> {
    if edges.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} edges but {} weights",
            edges.len(),
            weights.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_indices(weights, count, &mut rng)?
        .into_iter()
        .map(|k| edges[k])
        .collect())
}

/// `1/(ᾱ+ε)`, normalized to sum to one.
pub fn reciprocal_weights(scores: &RationaleScores, eps: f64) -> Result<Vec<f64>> {
    reciprocal_of(&scores.alpha_bar, eps)
}

pub(crate) fn reciprocal_of(values: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    let raw: Vec<f64> = values.iter().map(|a| 1.0 / (a + eps)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Draws a subgraph of kind `kind` from explicit per-edge weights.
pub fn draw_from_weights(
    kind: SampleKind,
    weights: &[f64],
    rate: f64,
    seed: u64,
    epoch: usize,
) -> Result<SubgraphSample> {
    check_rate("sampling rate", rate)?;
    if weights.is_empty() {
        return Err(Error::Contract("cannot sample from an empty edge set".into()));
    }
    let count = sample_size(rate, weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = sample_indices(weights, count, &mut rng)?;
    let mut dropped = Vec::with_capacity(weights.len() - count);
    let mut next = kept.iter().peekable();
    for k in 0..weights.len() {
        if next.peek() == Some(&&k) {
            next.next();
        } else {
            dropped.push(k);
        }
    }
    Ok(SubgraphSample {
        kind,
        kept,
        dropped,
        rate,
        seed,
        epoch,
    })
}

pub fn draw_rationale(scores: &RationaleScores, rho_r: f64, seed: u64) -> Result<SubgraphSample> {
    check_rate("rho_r", rho_r)?;
    draw_from_weights(SampleKind::Rationale, &scores.prob, rho_r, seed, scores.epoch)
}

pub fn draw_masked(scores: &RationaleScores, rho_m: f64, eps: f64, seed: u64) -> Result<SubgraphSample> {
    check_rate("rho_m", rho_m)?;
    let w = reciprocal_weights(scores, eps)?;
    draw_from_weights(SampleKind::Masked, &w, rho_m, seed, scores.epoch)
}

pub fn draw_complement(scores: &RationaleScores, rho_c: f64, eps: f64, seed: u64) -> Result<SubgraphSample> {
    check_rate("rho_c", rho_c)?;
    let w = reciprocal_weights(scores, eps)?;
    draw_from_weights(SampleKind::Complement, &w, rho_c, seed, scores.epoch)
}

/// The three sampling rates and the reciprocal-weight epsilon, validated
/// together.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampler {
    pub rho_r: f64,
    pub rho_m: f64,
    pub rho_c: f64,
    pub eps: f64,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            rho_r: DEFAULT_RHO_R,
            rho_m: DEFAULT_RHO_M,
            rho_c: DEFAULT_RHO_C,
            eps: DEFAULT_EPS,
        }
    }
}

impl Sampler {
    pub fn new(rho_r: f64, rho_m: f64, rho_c: f64, eps: f64) -> Result<Self> {
        check_rate("rho_r", rho_r)?;
        check_rate("rho_m", rho_m)?;
        check_rate("rho_c", rho_c)?;
        if rho_c >= rho_m {
            return Err(Error::Config(format!(
                "rho_c ({rho_c}) must be smaller than rho_m ({rho_m})"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
        }
        Ok(Self {
            rho_r,
            rho_m,
            rho_c,
            eps,
        })
    }

    pub fn rationale(&self, scores: &RationaleScores, seed: u64) -> Result<SubgraphSample> {
        draw_rationale(scores, self.rho_r, seed)
    }

    pub fn masked(&self, scores: &RationaleScores, seed: u64) -> Result<SubgraphSample> {
        draw_masked(scores, self.rho_m, self.eps, seed)
    }

    pub fn complement(&self, scores: &RationaleScores, seed: u64) -> Result<SubgraphSample> {
        draw_complement(scores, self.rho_c, self.eps, seed)
    }
}
