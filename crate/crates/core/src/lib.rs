//! Offline multi-agent reinforcement learning with shared individual
//! trajectories.
//!
//! The pipeline has three learned stages, each in its own module:
//!
//! 1. [`ardnem`] fits an ensemble of attention-weighted reward decomposition
//!    networks to the single team reward recorded in a joint dataset.
//! 2. [`dper`] uses the ensemble to split every joint episode into per-agent
//!    trajectories with estimated rewards, uncertainties and Monte Carlo
//!    returns, and stores them in type-partitioned sum-tree replay buffers.
//! 3. [`policy`] trains per-agent actors against graph-attention critics on
//!    priority-sampled individual trajectories, with behavior cloning and an
//!    ICQ-style learner as baselines.
//!
//! [`envkit`] provides the built-in cooperative environments (with exact
//! per-agent reward oracles) and the imbalanced dataset generator;
//! [`trajstore`] holds the data model and on-disk formats.
//!
//! The math in [`numerics`] is generic over [`numerics::Scalar`]; the learning
//! stages are instantiated at [`Real`].

pub mod ardnem;
pub mod dper;
pub mod envkit;
mod error;
pub mod numerics;
pub mod paramfile;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod textfmt;
pub mod trajstore;

pub use error::{Error, Result};

/// Scalar type used by every learned stage.
pub type Real = f64;
pub type Dense = numerics::Dense<Real>;
pub type Mlp = numerics::Mlp<Real>;
pub type MlpTape = numerics::MlpTape<Real>;
pub type RmsProp = numerics::RmsProp<Real>;
pub type SumTree = dper::SumTree<Real>;
