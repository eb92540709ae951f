//! Two-stage ranking simulator and policy-gradient estimators for training an
//! early-stage ranker (ESR) behind a fixed late-stage ranker (LSR).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the common instantiations.

pub mod approx;
pub mod config;
pub mod env;
pub mod error;
pub mod lsr;
pub mod oracle;
pub mod pg;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod sweep;
pub mod table;
pub mod train;
pub mod verify;

pub use config::{Precision, TrainConfig, WorldSource};
pub use env::{load_dense_matrix, position_weights, Noise, PositionWeights, SyntheticParams, WeightScheme, World, WorldMode};
pub use error::{Error, Result};
pub use lsr::{LsrMode, LsrPolicy, PositionMarginals};
pub use pg::{adaptive_lr, estimate_batch_gradient, grpo_normalize, sgd_step, BatchSample, EstimatorKind, GradientEstimate};
pub use policy::{AssignmentScheme, CandidateDraw, MoePolicy, Params, ScoreEval, TwoTowerExpert};
pub use scalar::Scalar;
pub use table::Table;
pub use train::{evaluate_greedy, run_experiment, Termination, TrainLog};

pub type World64 = World<f64>;
pub type World32 = World<f32>;
pub type Policy64 = MoePolicy<f64>;
pub type Policy32 = MoePolicy<f32>;
pub type Lsr64 = LsrPolicy<f64>;
pub type Lsr32 = LsrPolicy<f32>;
pub type Params64 = Params<f64>;
pub type Params32 = Params<f32>;
pub type Gradient64 = GradientEstimate<f64>;
pub type Gradient32 = GradientEstimate<f32>;
