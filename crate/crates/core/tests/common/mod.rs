//! Independent reference implementations shared by the integration tests.
//! These use plain loops over dense arrays and none of the crate's kernels.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale_core::attention::{AttentionParams, HeadVars};
use rationale_core::autodiff::Var;
use rationale_core::graph::{normalized_adjacency, Catalog, Edge, InteractionGraph};
use rationale_core::model::{BoundParams, ModelParams, ModelShape};
use rationale_core::objectives::Triplet;
use rationale_core::tensor::{SparseMatrix, Tensor};
use rationale_core::topology::TopologyContext;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn graph(num_users: usize, num_items: usize, edges: &[Edge]) -> InteractionGraph {
    InteractionGraph::new(
        num_users,
        num_items,
        edges.to_vec(),
        Arc::new(Catalog::numbered(num_users, num_items)),
    )
    .unwrap()
}

/// `count` distinct random user-item pairs.
pub fn random_edges(num_users: usize, num_items: usize, count: usize, seed: u64) -> Vec<Edge> {
    let mut all: Vec<Edge> = (0..num_users)
        .flat_map(|u| (0..num_items).map(move |i| Edge::new(u, i)))
        .collect();
    all.shuffle(&mut rng(seed));
    all.truncate(count);
    all.sort();
    all
}

pub type Dense = Vec<Vec<f64>>;

pub fn dense(t: &Tensor) -> Dense {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn matvec(w: &Dense, x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_diff(a: &Dense, b: &Tensor) -> f64 {
    let mut m = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m = m.max((v - b.get(r, c)).abs());
        }
    }
    m
}

/// Dense `1/sqrt(d_k d_k')` adjacency over users then items.
pub fn dense_adjacency(num_users: usize, num_items: usize, edges: &[Edge]) -> Dense {
    let n = num_users + num_items;
    let mut deg = vec![0.0; n];
    for e in edges {
        deg[e.user] += 1.0;
        deg[num_users + e.item] += 1.0;
    }
    let mut a = vec![vec![0.0; n]; n];
    for e in edges {
        let (u, i) = (e.user, num_users + e.item);
        let w = 1.0 / (deg[u] * deg[i] as f64).sqrt();
        a[u][i] = w;
        a[i][u] = w;
    }
    a
}

pub fn power_apply(a: &Dense, x: &Dense, layers: usize) -> Dense {
    let mut z = x.clone();
    for _ in 0..layers {
        z = matmul(a, &z);
    }
    z
}

/// Neighbor lists in unified node indexing.
pub fn neighbor_lists(num_users: usize, num_items: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); num_users + num_items];
    for e in edges {
        nb[e.user].push(num_users + e.item);
        nb[num_users + e.item].push(e.user);
    }
    nb
}

/// Per-edge loop over the attention equations. Returns `Z` and, per head,
/// the attention weight of each `(k, k')` pair.
pub fn attention_oracle(
    hbar: &Dense,
    neighbors: &[Vec<usize>],
    params: &AttentionParams,
) -> (Dense, Vec<std::collections::HashMap<(usize, usize), f64>>) {
    let n = hbar.len();
    let d = hbar[0].len();
    let heads = params.heads.len();
    let dh = d / heads;
    let mut z = hbar.clone();
    let mut weights = vec![std::collections::HashMap::new(); heads];
    for (h, p) in params.heads.iter().enumerate() {
        let (wq, wk, wv) = (dense(&p.query), dense(&p.key), dense(&p.value));
        for k in 0..n {
            if neighbors[k].is_empty() {
                continue;
            }
            let q = matvec(&wq, &hbar[k]);
            let logits: Vec<f64> = neighbors[k]
                .iter()
                .map(|&m| dot(&q, &matvec(&wk, &hbar[m])) / (dh as f64).sqrt())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (t, &m) in neighbors[k].iter().enumerate() {
                let a = exps[t] / total;
                weights[h].insert((k, m), a);
                let v = matvec(&wv, &hbar[m]);
                for c in 0..dh {
                    z[k][h * dh + c] += a * v[c];
                }
            }
        }
    }
    (z, weights)
}

/// Literal loop over anchors for the topology encoder.
pub fn topology_oracle(h: &Dense, anchors: &[usize], omega: &Tensor, layers: &[Tensor]) -> Dense {
    if layers.is_empty() {
        return h.clone();
    }
    let n = h.len();
    let d = h[0].len();
    let count = anchors.len() as f64;
    let mut prev = h.clone();
    for w in layers {
        let w = dense(w);
        let mut next = vec![vec![0.0; d]; n];
        for k in 0..n {
            for (col, &a) in anchors.iter().enumerate() {
                let om = omega.get(k, col);
                let mut joined = prev[k].clone();
                joined.extend_from_slice(&prev[a]);
                let out = matvec(&w, &joined);
                for c in 0..d {
                    next[k][c] += om * out[c] / count;
                }
            }
        }
        prev = next;
    }
    h.iter()
        .zip(&prev)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn random_dense<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

/// Full sort and naive set operations.
pub fn brute_metrics(scores: &[f64], relevant: &BTreeSet<usize>, k: usize) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&j| scores[j].is_finite()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let top: Vec<usize> = order.into_iter().take(k).collect();
    let hits: Vec<usize> = (0..top.len()).filter(|&r| relevant.contains(&top[r])).collect();
    let recall = hits.len() as f64 / relevant.len() as f64;
    let mut dcg = 0.0;
    for &r in &hits {
        dcg += 1.0 / ((r + 2) as f64).log2();
    }
    let mut idcg = 0.0;
    for r in 0..k.min(relevant.len()) {
        idcg += 1.0 / ((r + 2) as f64).log2();
    }
    (recall, dcg / idcg)
}

/// Users and items of the gradient-check fixture (7 nodes).
pub const GRAD_USERS: usize = 3;
pub const GRAD_ITEMS: usize = 4;

/// Small graph, three subgraph views and model parameters for gradient
/// checks.
pub struct Fixture {
    pub full: Vec<Edge>,
    pub kept: Vec<Edge>,
    pub rationale: Vec<Edge>,
    pub complement: Vec<Edge>,
    pub ctx: TopologyContext,
    pub params: ModelParams,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let full = random_edges(GRAD_USERS, GRAD_ITEMS, 8, seed);
        // keep at least one edge in every view
        let kept: Vec<Edge> = full.iter().copied().step_by(2).chain([full[1]]).collect();
        let rationale: Vec<Edge> = full.iter().copied().skip(1).collect();
        let complement: Vec<Edge> = full.iter().copied().take(3).collect();
        let ctx = TopologyContext::build(&graph(GRAD_USERS, GRAD_ITEMS, &full), 3, 4, seed).unwrap();
        let params = ModelParams::init(
            ModelShape {
                num_users: GRAD_USERS,
                num_items: GRAD_ITEMS,
                dim: 4,
                heads: 2,
                topology_layers: 1,
                mask_mlp: false,
            },
            seed,
        )
        .unwrap();
        // larger embeddings than the default init so the losses are not flat
        let mut params = params;
        params.embeddings = random_dense(GRAD_USERS + GRAD_ITEMS, 4, &mut rng(seed + 100));
        let mut kept = kept;
        kept.sort();
        kept.dedup();
        Self {
            full,
            kept,
            rationale,
            complement,
            ctx,
            params,
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn adj(&self, edges: &[Edge]) -> Arc<SparseMatrix> {
        Arc::new(normalized_adjacency(GRAD_USERS, GRAD_ITEMS, edges).unwrap())
    }

    pub fn triplets(&self, seed: u64) -> Vec<Triplet> {
        let g = graph(GRAD_USERS, GRAD_ITEMS, &self.full);
        let mut r = rng(seed);
        self.full
            .iter()
            .filter(|e| g.degree(e.user) < GRAD_ITEMS)
            .map(|e| loop {
                let neg = r.gen_range(0..GRAD_ITEMS);
                if !g.contains(Edge::new(e.user, neg)) {
                    break Triplet {
                        user: e.user,
                        pos: e.item,
                        neg,
                    };
                }
            })
            .collect()
    }
}

/// Rebuilds the handle layout of [`ModelParams::bind`] from raw vars.
pub fn bound(v: &[Var], topo_layers: usize) -> BoundParams {
    let heads: Vec<HeadVars> = v[1 + topo_layers..]
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    BoundParams {
        embeddings: v[0],
        topology: v[1..1 + topo_layers].to_vec(),
        heads,
        use_topology: true,
        all: v.to_vec(),
    }
}
