//! Shared inputs for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rationale_core::graph::{self, DEFAULT_SPLIT};
use rationale_core::{BlockDataset, DatasetSplit, Edge, InteractionGraph, Tensor, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Block-structured graph with `users` users and as many items.
pub fn block_graph(users: usize, per_user: usize) -> InteractionGraph {
    BlockDataset {
        users,
        items: users,
        blocks: 8,
        per_user,
        noise: 0.05,
        seed: 1,
    }
    .generate()
    .expect("valid block dataset")
}

pub fn block_split(users: usize, per_user: usize) -> DatasetSplit {
    graph::split(&block_graph(users, per_user), DEFAULT_SPLIT, 1).expect("splittable graph")
}

pub fn embeddings(nodes: usize, dim: usize) -> Tensor {
    Tensor::glorot(nodes, dim, &mut rng(2))
}

pub fn edges(g: &InteractionGraph) -> Vec<Edge> {
    g.edges().to_vec()
}

/// A reduced configuration so one epoch takes milliseconds.
pub fn bench_config() -> TrainConfig {
    TrainConfig {
        dim: 32,
        heads: 4,
        anchor_count: 16,
        batch_size: 1024,
        max_epochs: 1,
        ..TrainConfig::default()
    }
}
