//! Edge-restricted multi-head self-attention.
//!
//! Node `k` attends only to its graph neighbors. For head `h`:
//!
//! ```text
//! α̃ʰ(k,k') = (W_Qʰ h̄_k)ᵀ (W_Kʰ h̄_k') / sqrt(d/H)
//! αʰ(k,·)  = softmax over the neighbors of k
//! z_k      = ‖ₕ Σ_k' αʰ(k,k') W_Vʰ h̄_k'  +  h̄_k
//! ```
//!
//! Restricting the softmax to incident edges keeps the cost linear in the
//! number of edges. The per-edge rationale score averages the heads and both
//! directions of an undirected edge, and the selection probability of an
//! edge is its score normalized over all edges.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::model::lgcn;
use crate::tensor::{SparseMatrix, Tensor};
use crate::topology::{self, TopologyContext};

/// Directed view of an undirected edge list, grouped by source node.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    num_nodes: usize,
    offsets: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
    /// Directed positions of (user→item, item→user) for each input edge.
    pairs: Vec<(usize, usize)>,
    edges: Vec<Edge>,
}

impl EdgeIndex {
    pub fn new(num_users: usize, num_items: usize, edges: &[Edge]) -> Self {
        let n = num_users + num_items;
        let mut directed: Vec<(usize, usize, usize, bool)> = Vec::with_capacity(2 * edges.len());
        for (id, e) in edges.iter().enumerate() {
            let item = num_users + e.item;
            directed.push((e.user, item, id, true));
            directed.push((item, e.user, id, false));
        }
        directed.sort_unstable_by_key(|&(s, d, _, _)| (s, d));
        let mut offsets = vec![0usize; n + 1];
        let mut pairs = vec![(0usize, 0usize); edges.len()];
        let mut src = Vec::with_capacity(directed.len());
        let mut dst = Vec::with_capacity(directed.len());
        for (pos, &(s, d, id, forward)) in directed.iter().enumerate() {
            offsets[s + 1] += 1;
            src.push(s);
            dst.push(d);
            if forward {
                pairs[id].0 = pos;
            } else {
                pairs[id].1 = pos;
            }
        }
        for k in 0..n {
            offsets[k + 1] += offsets[k];
        }
        Self {
            num_nodes: n,
            offsets,
            src,
            dst,
            pairs,
            edges: edges.to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_directed(&self) -> usize {
        self.src.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `offsets[k]..offsets[k+1]` are the directed edges leaving node `k`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Per-head query/key/value transforms, each `(d/H) × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding size {dim} is not divisible by {heads} heads"
            )));
        }
        let dh = dim / heads;
        let heads = (0..heads)
            .map(|_| HeadParams {
                query: Tensor::glorot(dh, dim, rng),
                key: Tensor::glorot(dh, dim, rng),
                value: Tensor::glorot(dh, dim, rng),
            })
            .collect();
        Ok(Self { heads })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }
}

/// Tape handles for one head's `[query, key, value]`.
pub type HeadVars = [Var; 3];

/// Output of [`attend`].
pub struct Attention {
    /// Per head, an `E_dir × 1` column of attention weights in
    /// [`EdgeIndex`] directed order.
    pub alpha: Vec<Var>,
    pub z: Var,
}

pub fn attend(g: &mut Graph, hbar: Var, index: &EdgeIndex, heads: &[HeadVars]) -> Result<Attention> {
    if index.num_edges() == 0 {
        return Err(Error::Contract("attention over an empty edge set".into()));
    }
    let (n, d) = g.shape(hbar);
    if n != index.num_nodes() {
        return Err(Error::shape("attend", (n, d), (index.num_nodes(), d)));
    }
    if heads.is_empty() {
        return Err(Error::Contract("attention needs at least one head".into()));
    }
    let dh = d / heads.len();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut alpha = Vec::with_capacity(heads.len());
    let mut parts = Vec::with_capacity(heads.len());
    for &[wq, wk, wv] in heads {
        let (q, k, v) = (g.transpose(wq)?, g.transpose(wk)?, g.transpose(wv)?);
        let q = g.matmul(hbar, q)?;
        let k = g.matmul(hbar, k)?;
        let v = g.matmul(hbar, v)?;
        let qs = g.gather_rows(q, index.src())?;
        let ks = g.gather_rows(k, index.dst())?;
        let logits = g.row_dot(qs, ks)?;
        let logits = g.scale(logits, scale)?;
        let a = g.segment_softmax(logits, index.offsets())?;
        let vs = g.gather_rows(v, index.dst())?;
        let msg = g.mul_column(vs, a)?;
        parts.push(g.scatter_add_rows(msg, index.src(), n)?);
        alpha.push(a);
    }
    let heads_out = g.concat_cols(&parts)?;
    if g.shape(heads_out) != (n, d) {
        return Err(Error::shape("attend heads", g.shape(heads_out), (n, d)));
    }
    let z = g.add(heads_out, hbar)?;
    Ok(Attention { alpha, z })
}

/// Mean attention score and selection probability for every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct RationaleScores {
    pub alpha_bar: Vec<f64>,
    pub prob: Vec<f64>,
    pub epoch: usize,
}

impl RationaleScores {
    /// Normalizes arbitrary positive per-edge scores into probabilities.
    pub fn from_scores(alpha_bar: Vec<f64>, epoch: usize) -> Self {
        let total: f64 = alpha_bar.iter().sum();
        let prob = alpha_bar.iter().map(|a| a / total).collect();
        Self {
            alpha_bar,
            prob,
            epoch,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }
}

/// Averages per-head directed weights into one score per undirected edge.
pub fn edge_probabilities(alpha: &[&Tensor], index: &EdgeIndex, epoch: usize) -> RationaleScores {
    let heads = alpha.len() as f64;
    let alpha_bar = index
        .pairs()
        .iter()
        .map(|&(fwd, back)| {
            alpha
                .iter()
                .map(|a| 0.5 * (a.get(fwd, 0) + a.get(back, 0)))
                .sum::<f64>()
                / heads
        })
        .collect();
    RationaleScores::from_scores(alpha_bar, epoch)
}

/// `attend(TE(lgcn(base, adj, layers)))` over the edges in `index`.
#[allow(clippy::too_many_arguments)]
pub fn transformer_encode(
    g: &mut Graph,
    index: &EdgeIndex,
    adj: &Arc<SparseMatrix>,
    base: Var,
    ctx: &TopologyContext,
    te_layers: &[Var],
    heads: &[HeadVars],
    lgcn_layers: usize,
) -> Result<Var> {
    if index.num_edges() == 0 {
        return Err(Error::Contract("transformer encode over an empty edge set".into()));
    }
    let smoothed = lgcn(g, base, adj, lgcn_layers)?;
    let hbar = topology::encode(g, smoothed, ctx, te_layers)?;
    Ok(attend(g, hbar, index, heads)?.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heads_on(g: &mut Graph, p: &AttentionParams) -> Vec<HeadVars> {
        p.heads
            .iter()
            .map(|h| [g.param(h.query.clone()), g.param(h.key.clone()), g.param(h.value.clone())])
            .collect()
    }

    #[test]
    fn single_neighbor_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let index = EdgeIndex::new(1, 1, &[Edge::new(0, 0)]);
        let p = AttentionParams::init(4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let h = g.constant(Tensor::uniform(2, 4, 1.0, &mut rng));
        let heads = heads_on(&mut g, &p);
        let out = attend(&mut g, h, &index, &heads).unwrap();
        for a in &out.alpha {
            assert!(g.value(*a).data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn zero_embeddings_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let edges: Vec<Edge> = (0..3).map(|i| Edge::new(0, i)).collect();
        let index = EdgeIndex::new(1, 3, &edges);
        let p = AttentionParams::init(4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let h = g.constant(Tensor::zeros(4, 4));
        let heads = heads_on(&mut g, &p);
        let out = attend(&mut g, h, &index, &heads).unwrap();
        let a = g.value(out.alpha[0]);
        for pos in index.offsets()[0]..index.offsets()[1] {
            assert!((a.get(pos, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_keeps_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let index = EdgeIndex::new(2, 2, &[Edge::new(0, 0)]);
        let p = AttentionParams::init(4, 1, &mut rng).unwrap();
        let mut g = Graph::new();
        let hv = Tensor::uniform(4, 4, 1.0, &mut rng);
        let h = g.constant(hv.clone());
        let heads = heads_on(&mut g, &p);
        let out = attend(&mut g, h, &index, &heads).unwrap();
        assert_eq!(g.value(out.z).row(1), hv.row(1));
        assert_eq!(g.value(out.z).row(3), hv.row(3));
    }

    #[test]
    fn heads_must_divide_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AttentionParams::init(6, 4, &mut rng).is_err());
    }

    #[test]
    fn uniform_scores_give_uniform_probabilities() {
        let s = RationaleScores::from_scores(vec![0.3; 8], 0);
        assert!(s.prob.iter().all(|&p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn probabilities_are_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw: Vec<f64> = (0..10).map(|_| rng.gen_range(0.01..1.0)).collect();
        let a = RationaleScores::from_scores(raw.clone(), 0);
        let b = RationaleScores::from_scores(raw.iter().map(|x| x * 7.5).collect(), 0);
        for (p, q) in a.prob.iter().zip(&b.prob) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.prob.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
