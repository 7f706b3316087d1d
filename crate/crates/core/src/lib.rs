//! Continual self-supervised learning at desk scale.
//!
//! The crate trains a feature extractor and classifier jointly over a
//! class-incremental stream of image tasks. Three strategies are provided:
//! the full joint scheme (`kaizen`: current-task SSL + supervised head,
//! plus per-task knowledge distillation of both the feature extractor and
//! the classifier, plus memory replay), a feature-extractor-only
//! distillation baseline (`cassle`), and plain sequential fine-tuning
//! (`no_distill`). Evaluation produces a lower-triangular accuracy matrix
//! from which the continual-learning metric suite (final accuracy,
//! continual accuracy, forgetting, forward transfer) is computed.
//!
//! Module map:
//! - [`dataset`]: in-memory image datasets, loaders, and the synthetic
//!   generator used by the desk-scale presets
//! - [`stream`]: class-incremental task partitions and task streams
//! - [`replay`]: the labelled memory-replay buffer and batch mixing
//! - [`augment`]: the stochastic two-view augmentation pipeline
//! - [`ssl`]: the four self-supervised objectives (SimCLR, MoCoV2+, BYOL,
//!   VICReg) with analytic gradients, plus the MoCo embedding queue
//! - [`nn`]: the minimal CPU network substrate (conv/batch-norm/linear
//!   layers with manual backprop, backbones, SGD)
//! - [`model`]: the model zoo — current/momentum extractors, predictors,
//!   classifier, and the frozen previous-task snapshot
//! - [`trainer`]: the joint train step, per-task loops, post-hoc classifier
//!   fits, and full continual runs
//! - [`metrics`]: accuracy matrices and the metric suite

pub mod augment;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod replay;
pub mod seeding;
pub mod ssl;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
