//! Rationale-aware graph transformer for collaborative filtering.
//!
//! The model scores every user-item edge with edge-restricted attention,
//! keeps a high-scoring rationale subgraph for pairwise ranking, masks the
//! high-scoring edges for a reconstruction task, and pushes the rationale
//! and complement views apart. Everything runs on a small define-by-run
//! autodiff engine over dense `f64` tensors and CSR sparse matrices.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod tensor;
pub mod topology;
pub mod trainer;

pub use attention::{attend, edge_probabilities, AttentionParams, EdgeIndex, RationaleScores};
pub use autodiff::{Gradients, Graph, Var};
pub use config::{Ablation, TrainConfig};
pub use error::{Error, Result};
pub use eval::{EvalReport, Perturbation, SweepRow};
pub use graph::{DatasetSplit, Edge, InputFormat, InteractionGraph};
pub use model::ModelParams;
pub use objectives::{LossBreakdown, LossWeights};
pub use sampler::{Sampler, SubgraphSample};
pub use synthetic::BlockDataset;
pub use tensor::{SparseMatrix, Tensor};
pub use topology::TopologyContext;
pub use trainer::{EpochRecord, FitSummary, Trainer};
