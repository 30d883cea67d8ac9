//! Model parameters, LightGCN propagation and the two encoder branches.
//!
//! The rationale branch attends over every training edge, then propagates
//! over the sampled rationale graph; its final-layer dot products drive the
//! pairwise rationale loss. The autoencoder branch smooths the id embeddings
//! over the kept-after-masking graph and attends over the same graph; its
//! output `S` is used for reconstruction, recommendation and prediction.

use std::sync::Arc;

use rand::Rng;

use crate::attention::{
    attend, edge_probabilities, transformer_encode, AttentionParams, EdgeIndex, HeadVars,
    RationaleScores,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{SparseMatrix, Tensor};
use crate::topology::{self, TopologyContext};

/// Initial id embeddings are uniform in `[-EMBED_SCALE, EMBED_SCALE)`.
pub const EMBED_SCALE: f64 = 0.1;

/// Two-layer perceptron scoring edges for the MLP-masking ablation. Each
/// weight matrix carries its bias as the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMlp {
    pub hidden: Tensor,
    pub output: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, d) = x.shape();
    let mut out = Tensor::zeros(n, w.cols());
    for r in 0..n {
        let xr = x.row(r);
        let o = out.row_mut(r);
        o.copy_from_slice(w.row(d));
        for (k, &xv) in xr.iter().enumerate() {
            for (ov, &wv) in o.iter_mut().zip(w.row(k)) {
                *ov += xv * wv;
            }
        }
    }
    out
}

impl MaskMlp {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut hidden = Tensor::glorot(dim + 1, dim, rng);
        let mut output = Tensor::glorot(dim + 1, dim, rng);
        hidden.row_mut(dim).iter_mut().for_each(|b| *b = 0.0);
        output.row_mut(dim).iter_mut().for_each(|b| *b = 0.0);
        Self { hidden, output }
    }

    pub fn forward(&self, h: &Tensor) -> Tensor {
        let a = affine(h, &self.hidden).map(sigmoid);
        affine(&a, &self.output).map(sigmoid)
    }

    /// `MLP(h̄_u)·MLP(h̄_i)` for every edge. Sigmoid outputs keep the weights
    /// positive.
    pub fn edge_weights(&self, hbar: &Tensor, edges: &[Edge], num_users: usize) -> Vec<f64> {
        let m = self.forward(hbar);
        edges
            .iter()
            .map(|e| {
                m.row(e.user)
                    .iter()
                    .zip(m.row(num_users + e.item))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub num_users: usize,
    pub num_items: usize,
    /// `(I+J) × d` id embeddings, users first.
    pub embeddings: Tensor,
    /// One `d × 2d` transform per topology layer.
    pub topology: Vec<Tensor>,
    pub attention: AttentionParams,
    pub mask_mlp: Option<MaskMlp>,
}

/// Shapes that determine a [`ModelParams`] layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub heads: usize,
    pub topology_layers: usize,
    pub mask_mlp: bool,
}

impl ModelParams {
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.dim == 0 {
            return Err(Error::Config("embedding size must be positive".into()));
        }
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let n = shape.num_users + shape.num_items;
        let embeddings = Tensor::uniform(n, shape.dim, EMBED_SCALE, &mut rng);
        let topology = (0..shape.topology_layers)
            .map(|_| Tensor::glorot(shape.dim, 2 * shape.dim, &mut rng))
            .collect();
        let attention = AttentionParams::init(shape.dim, shape.heads, &mut rng)?;
        let mask_mlp = shape.mask_mlp.then(|| MaskMlp::init(shape.dim, &mut rng));
        Ok(Self {
            num_users: shape.num_users,
            num_items: shape.num_items,
            embeddings,
            topology,
            attention,
            mask_mlp,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            num_users: self.num_users,
            num_items: self.num_items,
            dim: self.dim(),
            heads: self.attention.num_heads(),
            topology_layers: self.topology.len(),
            mask_mlp: self.mask_mlp.is_some(),
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    /// All tensors with stable names, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (l, w) in self.topology.iter().enumerate() {
            out.push((format!("topology.{l}"), w));
        }
        for (h, p) in self.attention.heads.iter().enumerate() {
            out.push((format!("attention.{h}.query"), &p.query));
            out.push((format!("attention.{h}.key"), &p.key));
            out.push((format!("attention.{h}.value"), &p.value));
        }
        if let Some(m) = &self.mask_mlp {
            out.push(("mask_mlp.hidden".to_string(), &m.hidden));
            out.push(("mask_mlp.output".to_string(), &m.output));
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embeddings];
        out.extend(self.topology.iter_mut());
        for p in &mut self.attention.heads {
            out.push(&mut p.query);
            out.push(&mut p.key);
            out.push(&mut p.value);
        }
        if let Some(m) = &mut self.mask_mlp {
            out.push(&mut m.hidden);
            out.push(&mut m.output);
        }
        out
    }

    /// Places every tensor on the tape as a parameter. With `use_topology`
    /// off the topology layers are still bound (so gradients line up with
    /// [`ModelParams::tensors_mut`]) but the encoders skip them.
    pub fn bind(&self, g: &mut Graph, use_topology: bool) -> BoundParams {
        let all: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| g.param(t.clone()))
            .collect();
        let lt = self.topology.len();
        let heads = all[1 + lt..1 + lt + 3 * self.attention.num_heads()]
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        BoundParams {
            embeddings: all[0],
            topology: all[1..1 + lt].to_vec(),
            heads,
            use_topology,
            all,
        }
    }
}

/// Tape handles for a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embeddings: Var,
    pub topology: Vec<Var>,
    pub heads: Vec<HeadVars>,
    pub use_topology: bool,
    /// Every parameter, in [`ModelParams::tensors_mut`] order.
    pub all: Vec<Var>,
}

impl BoundParams {
    /// Topology layers the encoders should apply.
    pub fn active_topology(&self) -> &[Var] {
        if self.use_topology {
            &self.topology
        } else {
            &[]
        }
    }
}

/// `z^l = Â z^{l-1}`, returning the last layer.
pub fn lgcn(g: &mut Graph, base: Var, adj: &Arc<SparseMatrix>, layers: usize) -> Result<Var> {
    let mut z = base;
    for _ in 0..layers {
        z = g.spmm(adj, z)?;
    }
    Ok(z)
}

/// `Z^L`: attention over all training edges on `TE(H)`, then propagation over
/// the rationale graph.
pub fn rationale_branch(
    g: &mut Graph,
    p: &BoundParams,
    ctx: &TopologyContext,
    full: &EdgeIndex,
    rationale_adj: &Arc<SparseMatrix>,
    layers: usize,
) -> Result<Var> {
    let hbar = topology::encode(g, p.embeddings, ctx, p.active_topology())?;
    let z0 = attend(g, hbar, full, &p.heads)?.z;
    lgcn(g, z0, rationale_adj, layers)
}

/// `ȳ` for each pair as an `n × 1` column.
pub fn pair_scores(g: &mut Graph, z: Var, pairs: &[Edge], num_users: usize) -> Result<Var> {
    let users: Vec<usize> = pairs.iter().map(|e| e.user).collect();
    let items: Vec<usize> = pairs.iter().map(|e| num_users + e.item).collect();
    let zu = g.gather_rows(z, &users)?;
    let zi = g.gather_rows(z, &items)?;
    g.row_dot(zu, zi)
}

/// `S`: LightGCN smoothing of `H` over the kept graph, topology injection,
/// then attention over the kept graph.
pub fn autoencoder_branch(
    g: &mut Graph,
    p: &BoundParams,
    ctx: &TopologyContext,
    kept: &EdgeIndex,
    kept_adj: &Arc<SparseMatrix>,
    layers: usize,
) -> Result<Var> {
    transformer_encode(
        g,
        kept,
        kept_adj,
        p.embeddings,
        ctx,
        p.active_topology(),
        &p.heads,
        layers,
    )
}

/// Scores of every item for `user` as `s_u·s_j`. Items in `exclude` get
/// `-∞`.
pub fn predict(s: &Tensor, num_users: usize, user: usize, exclude: &[usize]) -> Result<Vec<f64>> {
    if user >= num_users {
        return Err(Error::Lookup {
            kind: "user",
            id: user.to_string(),
        });
    }
    let num_items = s.rows() - num_users;
    let su = s.row(user);
    let mut scores: Vec<f64> = (0..num_items)
        .map(|j| su.iter().zip(s.row(num_users + j)).map(|(a, b)| a * b).sum())
        .collect();
    for &j in exclude {
        scores[j] = f64::NEG_INFINITY;
    }
    Ok(scores)
}

/// `TE(H)` without recording gradients.
pub fn topology_embeddings(params: &ModelParams, ctx: &TopologyContext, use_topology: bool) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, use_topology);
    let hbar = topology::encode(&mut g, p.embeddings, ctx, p.active_topology())?;
    Ok(g.value(hbar).clone())
}

/// Current rationale scores over the edges of `full`.
pub fn rationale_scores(
    params: &ModelParams,
    ctx: &TopologyContext,
    full: &EdgeIndex,
    use_topology: bool,
    epoch: usize,
) -> Result<RationaleScores> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, use_topology);
    let hbar = topology::encode(&mut g, p.embeddings, ctx, p.active_topology())?;
    let att = attend(&mut g, hbar, full, &p.heads)?;
    let alpha: Vec<&Tensor> = att.alpha.iter().map(|&a| g.value(a)).collect();
    Ok(edge_probabilities(&alpha, full, epoch))
}

/// Test-time `S`, with the full training graph in place of the masked one.
pub fn infer_embeddings(
    params: &ModelParams,
    ctx: &TopologyContext,
    full: &EdgeIndex,
    full_adj: &Arc<SparseMatrix>,
    layers: usize,
    use_topology: bool,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, use_topology);
    let s = autoencoder_branch(&mut g, &p, ctx, full, full_adj, layers)?;
    Ok(g.value(s).clone())
}
