//! Epoch loop: score edges, draw subgraphs, run both branches per minibatch,
//! step Adam, and early-stop on validation Recall@20.
//!
//! Within an epoch the rationale scores and the three subgraphs are fixed.
//! Each minibatch of training positives contributes its own recommendation
//! and pairwise terms; the graph-wide terms (reconstruction, independence,
//! regularization) are split evenly across the minibatches so an epoch sums
//! to one full copy of each.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{EdgeIndex, RationaleScores};
use crate::autodiff::Graph;
use crate::checkpoint::Archive;
use crate::config::{Ablation, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalReport};
use crate::graph::{normalized_adjacency, DatasetSplit, Edge, InteractionGraph};
use crate::model::{
    autoencoder_branch, infer_embeddings, rationale_branch, rationale_scores, topology_embeddings,
    ModelParams, ModelShape,
};
use crate::objectives::{
    loss_cir, loss_mae, loss_rd, loss_rec, loss_reg, total_loss, validate_triplets, LossBreakdown,
    LossTerms, RecMode, Triplet,
};
use crate::optim::{clip_global_norm, Adam};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sampler::{draw_from_weights, reciprocal_of, SampleKind, SubgraphSample};
use crate::tensor::{SparseMatrix, Tensor};
use crate::topology::TopologyContext;

/// Cutoff used for early stopping.
pub const STOPPING_K: usize = 20;

/// Early-stopping bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub best_recall: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
    pub stopped: bool,
}

/// Work counters, for checking that ablations skip what they should.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub batches: u64,
    pub triplets: u64,
    pub rationale_forwards: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub valid_recall: Option<f64>,
    pub max_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_recall: Option<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: String,
    epoch: usize,
    adam_step: u64,
    early: EarlyStop,
    counters: Counters,
    num_users: usize,
    num_items: usize,
    train_edges: usize,
}

/// The subgraphs drawn for one epoch, as edge lists.
#[derive(Clone, Debug)]
pub struct EpochSamples {
    pub scores: RationaleScores,
    pub rationale: SubgraphSample,
    pub masked: SubgraphSample,
    pub complement: SubgraphSample,
}

pub struct Trainer {
    config: TrainConfig,
    split: DatasetSplit,
    train_graph: InteractionGraph,
    ctx: TopologyContext,
    full_index: EdgeIndex,
    full_adj: Arc<SparseMatrix>,
    params: ModelParams,
    best: ModelParams,
    adam: Adam,
    epoch: usize,
    early: EarlyStop,
    counters: Counters,
    frozen_scores: Option<RationaleScores>,
    freeze_scores: bool,
}

fn adjacency(num_users: usize, num_items: usize, edges: &[Edge]) -> Result<Arc<SparseMatrix>> {
    Ok(Arc::new(normalized_adjacency(num_users, num_items, edges)?))
}

impl Trainer {
    pub fn new(config: TrainConfig, split: DatasetSplit) -> Result<Self> {
        config.validate()?;
        let train_graph = split.train_graph()?;
        if train_graph.num_edges() == 0 {
            return Err(Error::Contract("training split has no edges".into()));
        }
        let (nu, ni) = (split.num_users, split.num_items);
        let ctx = TopologyContext::build(&train_graph, config.anchor_count, config.q, config.seed)?;
        let full_index = EdgeIndex::new(nu, ni, &split.train);
        let full_adj = adjacency(nu, ni, &split.train)?;
        let params = ModelParams::init(
            ModelShape {
                num_users: nu,
                num_items: ni,
                dim: config.dim,
                heads: config.heads,
                topology_layers: config.topo_layers,
                mask_mlp: config.ablation == Ablation::MlpMask,
            },
            config.seed,
        )?;
        let adam = Adam::new(config.lr, params.named_tensors().into_iter().map(|(_, t)| t));
        Ok(Self {
            best: params.clone(),
            config,
            split,
            train_graph,
            ctx,
            full_index,
            full_adj,
            params,
            adam,
            epoch: 0,
            early: EarlyStop::default(),
            counters: Counters::default(),
            frozen_scores: None,
            freeze_scores: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Parameters of the best validation epoch so far.
    pub fn best_params(&self) -> &ModelParams {
        &self.best
    }

    pub fn topology(&self) -> &TopologyContext {
        &self.ctx
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn early_stop(&self) -> &EarlyStop {
        &self.early
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Keeps the first epoch's rationale scores for the rest of training.
    pub fn set_freeze_scores(&mut self, freeze: bool) {
        self.freeze_scores = freeze;
        if !freeze {
            self.frozen_scores = None;
        }
    }

    fn context_for_epoch(&self, epoch: usize) -> Result<TopologyContext> {
        if self.config.resample_anchors && epoch > 0 {
            let seed = derive_seed(self.config.seed, Stream::Anchors, epoch as u64);
            TopologyContext::build(&self.train_graph, self.config.anchor_count, self.config.q, seed)
        } else {
            Ok(self.ctx.clone())
        }
    }

    /// Rationale scores of every training edge under the current parameters.
    pub fn rationale_scores(&self) -> Result<RationaleScores> {
        self.rationale_scores_of(&self.params)
    }

    /// Rationale scores of every training edge, in `split().train` order.
    pub fn rationale_scores_of(&self, params: &ModelParams) -> Result<RationaleScores> {
        rationale_scores(
            params,
            &self.ctx,
            &self.full_index,
            self.config.use_topology(),
            self.epoch,
        )
    }

    /// Changes the epoch budget, e.g. to continue a resumed run. Clears a
    /// previous early stop when the budget grows.
    pub fn set_max_epochs(&mut self, max_epochs: usize) {
        if max_epochs > self.config.max_epochs {
            self.early.stopped = false;
            self.early.stale = 0;
        }
        self.config.max_epochs = max_epochs;
    }

    fn draw(&mut self, ctx: &TopologyContext) -> Result<EpochSamples> {
        let e = self.epoch;
        let use_te = self.config.use_topology();
        let scores = match (&self.frozen_scores, self.freeze_scores) {
            (Some(s), true) => s.clone(),
            _ => {
                let s = rationale_scores(&self.params, ctx, &self.full_index, use_te, e)?;
                if self.freeze_scores {
                    self.frozen_scores = Some(s.clone());
                }
                s
            }
        };
        let sampler = self.config.sampler()?;
        let seed = |k: u64| derive_seed(self.config.seed, Stream::Sampler, 4 * e as u64 + k);
        let rationale = sampler.rationale(&scores, seed(0))?;
        let masked = match self.config.ablation {
            Ablation::RandomMask => {
                let w = vec![1.0; scores.len()];
                draw_from_weights(SampleKind::Masked, &w, sampler.rho_m, seed(1), e)?
            }
            Ablation::MlpMask => {
                let mlp = self.params.mask_mlp.as_ref().ok_or_else(|| {
                    Error::Contract("mlp_mask ablation without mask parameters".into())
                })?;
                let hbar = topology_embeddings(&self.params, ctx, use_te)?;
                let raw = mlp.edge_weights(&hbar, &self.split.train, self.split.num_users);
                let w = reciprocal_of(&raw, sampler.eps)?;
                draw_from_weights(SampleKind::Masked, &w, sampler.rho_m, seed(1), e)?
            }
            _ => sampler.masked(&scores, seed(1))?,
        };
        let complement = sampler.complement(&scores, seed(2))?;
        Ok(EpochSamples {
            scores,
            rationale,
            masked,
            complement,
        })
    }

    fn negatives<R: Rng>(&self, positives: &[Edge], rng: &mut R) -> Vec<Triplet> {
        let ni = self.split.num_items;
        positives
            .iter()
            .filter(|e| self.train_graph.degree(e.user) < ni)
            .map(|e| loop {
                let neg = rng.gen_range(0..ni);
                if !self.train_graph.contains(Edge::new(e.user, neg)) {
                    break Triplet {
                        user: e.user,
                        pos: e.item,
                        neg,
                    };
                }
            })
            .collect()
    }

    /// One pass over the training edges. On failure the parameters and
    /// optimizer state are restored to the start of the epoch.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let saved = (self.params.clone(), self.adam.clone(), self.counters);
        match self.run_epoch() {
            Ok(r) => Ok(r),
            Err(e) => {
                (self.params, self.adam, self.counters) = saved;
                Err(e)
            }
        }
    }

    fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let (nu, ni) = (self.split.num_users, self.split.num_items);
        let ctx = self.context_for_epoch(self.epoch)?;
        let samples = self.draw(&ctx)?;
        let train = &self.split.train;
        let r_edges = samples.rationale.edges(train);
        let m_edges = samples.masked.edges(train);
        let targets = samples.masked.dropped_edges(train);
        let c_edges = samples.complement.edges(train);
        let adj_r = adjacency(nu, ni, &r_edges)?;
        let adj_m = adjacency(nu, ni, &m_edges)?;
        let adj_c = adjacency(nu, ni, &c_edges)?;
        let kept_index = EdgeIndex::new(nu, ni, &m_edges);

        let weights = self.config.loss_weights();
        let run_rd = weights.lambda1 > 0.0;
        let use_te = self.config.use_topology();
        let rec_mode = RecMode::for_items(ni);
        let mut rng = stream_rng(self.config.seed, Stream::Negatives, self.epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let batch = self.config.batch_size;
        let share = 1.0 / order.len().div_ceil(batch) as f64;

        let mut sum = LossBreakdown::default();
        let mut max_norm = 0.0f64;
        for chunk in order.chunks(batch) {
            let positives: Vec<Edge> = chunk.iter().map(|&k| train[k]).collect();
            let triplets = if run_rd {
                self.negatives(&positives, &mut rng)
            } else {
                Vec::new()
            };
            if cfg!(debug_assertions) {
                validate_triplets(&self.train_graph, &triplets)?;
            }
            self.counters.triplets += triplets.len() as u64;
            self.counters.batches += 1;

            let mut g = Graph::new();
            let p = self.params.bind(&mut g, use_te);
            let rd = if run_rd {
                self.counters.rationale_forwards += 1;
                let z = rationale_branch(
                    &mut g,
                    &p,
                    &ctx,
                    &self.full_index,
                    &adj_r,
                    self.config.rationale_layers,
                )?;
                loss_rd(&mut g, z, &triplets, nu)?
            } else {
                g.constant(Tensor::scalar(0.0))
            };
            let s = autoencoder_branch(
                &mut g,
                &p,
                &ctx,
                &kept_index,
                &adj_m,
                self.config.autoencoder_layers,
            )?;
            let mae = loss_mae(&mut g, s, &targets, nu)?;
            let mae = g.scale(mae, share)?;
            let rec = loss_rec(&mut g, s, &positives, nu, ni, rec_mode, &mut rng)?;
            let cir = loss_cir(
                &mut g,
                p.embeddings,
                &adj_r,
                &adj_c,
                self.config.cir_layers,
                self.config.tau,
            )?;
            let cir = g.scale(cir, share)?;
            let reg = loss_reg(&mut g, &p.all)?;
            let reg = g.scale(reg, share)?;
            let terms = LossTerms {
                rec,
                mae,
                rd,
                cir,
                reg,
            };
            let total = total_loss(&mut g, &terms, &weights)?;
            let part = LossBreakdown::read(&g, &terms, total);
            if !part.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {}: {part:?}",
                    self.epoch + 1
                )));
            }
            sum.accumulate(&part);
            let grads = g.backward(total)?;
            let mut grads: Vec<Tensor> = p.all.iter().map(|&v| grads.wrt(v)).collect();
            max_norm = max_norm.max(clip_global_norm(&mut grads, self.config.grad_clip));
            self.adam.update(&mut self.params.tensors_mut(), &grads)?;
        }
        self.epoch += 1;
        let valid_recall = self.validation_recall()?;
        self.track(valid_recall);
        Ok(EpochRecord {
            epoch: self.epoch,
            losses: sum,
            valid_recall,
            max_grad_norm: max_norm,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn track(&mut self, recall: Option<f64>) {
        let improved = match (recall, self.early.best_recall) {
            (Some(r), Some(b)) => r > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            self.early.best_recall = recall;
            self.early.best_epoch = self.epoch;
            self.early.stale = 0;
            self.best = self.params.clone();
        } else {
            self.early.stale += 1;
            if self.early.stale >= self.config.patience {
                self.early.stopped = true;
            }
        }
    }

    /// Trains until `max_epochs` or until validation Recall@20 has not
    /// improved for `patience` epochs. `on_epoch` sees every finished epoch.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<FitSummary> {
        while self.epoch < self.config.max_epochs && !self.early.stopped {
            let record = self.train_epoch()?;
            on_epoch(&record);
        }
        Ok(FitSummary {
            epochs: self.epoch,
            best_epoch: self.early.best_epoch,
            best_valid_recall: self.early.best_recall,
            stopped_early: self.early.stopped,
        })
    }

    /// Test-time embeddings `S` for `params`.
    pub fn embeddings_of(&self, params: &ModelParams) -> Result<Tensor> {
        infer_embeddings(
            params,
            &self.ctx,
            &self.full_index,
            &self.full_adj,
            self.config.autoencoder_layers,
            self.config.use_topology(),
        )
    }

    pub fn evaluate_params(&self, params: &ModelParams, targets: &[Edge], ks: &[usize]) -> Result<EvalReport> {
        let s = self.embeddings_of(params)?;
        evaluate_embeddings(&s, self.split.num_users, &self.split.train, targets, ks)
    }

    fn validation_recall(&self) -> Result<Option<f64>> {
        if self.split.valid.is_empty() {
            return Ok(None);
        }
        let r = self.evaluate_params(&self.params, &self.split.valid, &[STOPPING_K])?;
        Ok(r.recall_at(STOPPING_K))
    }

    /// Test metrics of the best validation parameters.
    pub fn test_report(&self, ks: &[usize]) -> Result<EvalReport> {
        self.evaluate_params(&self.best, &self.split.test, ks)
    }

    pub fn to_archive(&self) -> Archive {
        let header = Header {
            config: self.config.to_text(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            early: self.early.clone(),
            counters: self.counters,
            num_users: self.split.num_users,
            num_items: self.split.num_items,
            train_edges: self.split.train.len(),
        };
        let mut tensors = Vec::new();
        let names: Vec<String> = self.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (n, t) in self.params.named_tensors() {
            tensors.push((n, t.clone()));
        }
        for (n, t) in self.best.named_tensors() {
            tensors.push((format!("best.{n}"), t.clone()));
        }
        for (k, n) in names.iter().enumerate() {
            tensors.push((format!("adam.m.{n}"), self.adam.m[k].clone()));
            tensors.push((format!("adam.v.{n}"), self.adam.v[k].clone()));
        }
        Archive {
            header: serde_json::to_string(&header).expect("header serializes"),
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    /// Rebuilds a trainer from an archive over the same split.
    pub fn from_archive(archive: &Archive, split: DatasetSplit) -> Result<Self> {
        let header: Header = serde_json::from_str(&archive.header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if (header.num_users, header.num_items, header.train_edges)
            != (split.num_users, split.num_items, split.train.len())
        {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different dataset split".into(),
            ));
        }
        let config = TrainConfig::from_text(&header.config)?;
        let mut t = Self::new(config, split)?;
        let names: Vec<String> = t.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let load = |name: &str, into: &mut Tensor| -> Result<()> {
            let src = archive.get(name)?;
            if src.shape() != into.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    into.shape()
                )));
            }
            *into = src.clone();
            Ok(())
        };
        for (n, dst) in names.iter().zip(t.params.tensors_mut()) {
            load(n, dst)?;
        }
        for (n, dst) in names.iter().zip(t.best.tensors_mut()) {
            load(&format!("best.{n}"), dst)?;
        }
        for (k, n) in names.iter().enumerate() {
            load(&format!("adam.m.{n}"), &mut t.adam.m[k])?;
            load(&format!("adam.v.{n}"), &mut t.adam.v[k])?;
        }
        t.adam.step = header.adam_step;
        t.epoch = header.epoch;
        t.early = header.early;
        t.counters = header.counters;
        Ok(t)
    }

    pub fn load(path: &Path, split: DatasetSplit) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?, split)
    }
}
