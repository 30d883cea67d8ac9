//! Anchor-based global position signals injected into id embeddings.
//!
//! A handful of anchor nodes are sampled once. Every node's hop distance to
//! each anchor becomes a correlation weight `1/(d+1)` (zero beyond the hop
//! cutoff), and each encoder layer mixes a node's embedding with the anchor
//! embeddings under those weights:
//!
//! ```text
//! h̃_k^l = Σ_a W^l · ω_{k,a} · [h̃_k^{l-1} ‖ h̃_a^{l-1}] / |A|
//! H̄     = H + h̃^{L}
//! ```

use std::collections::VecDeque;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Marks an anchor that cannot be reached from a node.
pub const UNREACHABLE: u32 = u32::MAX;

/// Uniform sample of `count` distinct nodes, sorted ascending.
pub fn sample_anchors(num_nodes: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::Config("anchor count must be positive".into()));
    }
    if count > num_nodes {
        return Err(Error::Config(format!(
            "anchor count {count} exceeds {num_nodes} nodes"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Anchors, 0);
    let mut anchors = rand::seq::index::sample(&mut rng, num_nodes, count).into_vec();
    anchors.sort_unstable();
    Ok(anchors)
}

/// Hop counts from every node to every anchor, row-major `nodes × anchors`.
pub fn anchor_distances(g: &InteractionGraph, anchors: &[usize]) -> Vec<u32> {
    let n = g.num_nodes();
    let a = anchors.len();
    let mut dist = vec![UNREACHABLE; n * a];
    let mut queue = VecDeque::new();
    let mut seen = vec![UNREACHABLE; n];
    for (col, &anchor) in anchors.iter().enumerate() {
        seen.iter_mut().for_each(|d| *d = UNREACHABLE);
        seen[anchor] = 0;
        queue.push_back(anchor);
        while let Some(k) = queue.pop_front() {
            for &m in g.neighbors(k) {
                if seen[m] == UNREACHABLE {
                    seen[m] = seen[k] + 1;
                    queue.push_back(m);
                }
            }
        }
        for k in 0..n {
            dist[k * a + col] = seen[k];
        }
    }
    dist
}

/// `ω = 1/(d+1)` for `d ≤ cutoff`, else 0. A negative cutoff zeroes all
/// weights.
pub fn correlation_weight(dist: u32, cutoff: i64) -> f64 {
    if dist != UNREACHABLE && (dist as i64) <= cutoff {
        1.0 / (dist as f64 + 1.0)
    } else {
        0.0
    }
}

pub fn correlation_weights(dist: &[u32], anchors: usize, cutoff: i64) -> Tensor {
    let rows = if anchors == 0 { 0 } else { dist.len() / anchors };
    let data = dist.iter().map(|&d| correlation_weight(d, cutoff)).collect();
    Tensor::from_vec(rows, anchors, data).expect("length is rows*anchors")
}

/// Anchors, distances and weights for one training run.
#[derive(Clone, Debug)]
pub struct TopologyContext {
    pub anchors: Vec<usize>,
    /// `nodes × anchors` hop counts, [`UNREACHABLE`] when disconnected.
    pub dist: Vec<u32>,
    pub omega: Tensor,
    pub cutoff: i64,
    scaled_omega: Tensor,
    self_weight: Tensor,
}

impl TopologyContext {
    pub fn new(anchors: Vec<usize>, dist: Vec<u32>, cutoff: i64) -> Self {
        let omega = correlation_weights(&dist, anchors.len(), cutoff);
        Self::with_weights(anchors, dist, omega, cutoff)
    }

    /// Uses explicit weights instead of deriving them from `dist`.
    pub fn with_weights(anchors: Vec<usize>, dist: Vec<u32>, omega: Tensor, cutoff: i64) -> Self {
        let count = anchors.len().max(1) as f64;
        let scaled_omega = omega.map(|w| w / count);
        let self_weight = Tensor::column(
            (0..omega.rows())
                .map(|k| omega.row(k).iter().sum::<f64>() / count)
                .collect(),
        );
        Self {
            anchors,
            dist,
            omega,
            cutoff,
            scaled_omega,
            self_weight,
        }
    }

    /// Samples anchors and measures distances over `g`.
    pub fn build(g: &InteractionGraph, anchor_count: usize, cutoff: i64, seed: u64) -> Result<Self> {
        let anchors = sample_anchors(g.num_nodes(), anchor_count, seed)?;
        let dist = anchor_distances(g, &anchors);
        Ok(Self::new(anchors, dist, cutoff))
    }

    pub fn num_nodes(&self) -> usize {
        self.omega.rows()
    }
}

/// Applies the topology encoder to `h` (`nodes × d`). `layers` hold the
/// `d × 2d` transforms. With no layers the encoder is the identity.
pub fn encode(g: &mut Graph, h: Var, ctx: &TopologyContext, layers: &[Var]) -> Result<Var> {
    if layers.is_empty() {
        return Ok(h);
    }
    let (n, d) = g.shape(h);
    if n != ctx.num_nodes() {
        return Err(Error::shape("topology encode", (n, d), ctx.omega.shape()));
    }
    for &w in layers {
        if g.shape(w) != (d, 2 * d) {
            return Err(Error::shape("topology encode", g.shape(w), (d, 2 * d)));
        }
    }
    let omega = g.constant(ctx.scaled_omega.clone());
    let self_weight = g.constant(ctx.self_weight.clone());
    let mut prev = h;
    for &w in layers {
        let anchor_rows = g.gather_rows(prev, &ctx.anchors)?;
        let anchor_part = g.matmul(omega, anchor_rows)?;
        let self_part = g.mul_column(prev, self_weight)?;
        let joined = g.concat_cols(&[self_part, anchor_part])?;
        let wt = g.transpose(w)?;
        prev = g.matmul(joined, wt)?;
    }
    g.add(h, prev)
}
