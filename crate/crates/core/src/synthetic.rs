//! Planted-community interaction data for end-to-end checks.
//!
//! Users and items are dealt round-robin into blocks. Each user interacts
//! with a fixed number of distinct items, drawn from their own block except
//! for a `noise` fraction drawn uniformly from the other blocks.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Catalog, Edge, InteractionGraph};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockDataset {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub per_user: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlockDataset {
    fn default() -> Self {
        Self {
            users: 200,
            items: 200,
            blocks: 8,
            per_user: 20,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl BlockDataset {
    pub fn user_block(&self, user: usize) -> usize {
        user % self.blocks
    }

    pub fn item_block(&self, item: usize) -> usize {
        item % self.blocks
    }

    pub fn generate(&self) -> Result<InteractionGraph> {
        if self.blocks == 0 || self.blocks > self.items {
            return Err(Error::Config(format!(
                "cannot deal {} items into {} blocks",
                self.items, self.blocks
            )));
        }
        let smallest_block = self.items / self.blocks;
        if self.per_user > smallest_block + (self.items - smallest_block) {
            return Err(Error::Config("per_user exceeds the item count".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) || (self.noise == 1.0 && self.blocks == 1) {
            return Err(Error::Config(format!("noise must lie in [0, 1], got {}", self.noise)));
        }
        let mut rng = stream_rng(self.seed, Stream::Synthetic, 0);
        let mut edges = Vec::with_capacity(self.users * self.per_user);
        let mut taken = vec![false; self.items];
        for u in 0..self.users {
            let b = self.user_block(u);
            let own: Vec<usize> = (0..self.items).filter(|&j| self.item_block(j) == b).collect();
            let other: Vec<usize> = (0..self.items).filter(|&j| self.item_block(j) != b).collect();
            taken.iter_mut().for_each(|t| *t = false);
            let mut chosen = 0;
            while chosen < self.per_user {
                let from_other = !other.is_empty() && (own.is_empty() || rng.gen_bool(self.noise));
                let pool = if from_other { &other } else { &own };
                let j = pool[rng.gen_range(0..pool.len())];
                // Fall back to the other pool once one is exhausted.
                let exhausted = pool.iter().all(|&k| taken[k]);
                if exhausted {
                    let rest = if from_other { &own } else { &other };
                    if let Some(&k) = rest.iter().find(|&&k| !taken[k]) {
                        taken[k] = true;
                        edges.push(Edge::new(u, k));
                        chosen += 1;
                    }
                    continue;
                }
                if !taken[j] {
                    taken[j] = true;
                    edges.push(Edge::new(u, j));
                    chosen += 1;
                }
            }
        }
        InteractionGraph::new(
            self.users,
            self.items,
            edges,
            Arc::new(Catalog::numbered(self.users, self.items)),
        )
    }
}
