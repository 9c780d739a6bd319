//! Streaming mixture of student-t process experts.
//!
//! A nonparametric regression engine for data that arrives one observation
//! at a time: inputs are softly partitioned into clusters, each cluster
//! carries a heavy-tailed stochastic-process model of its outputs, and a
//! parallel population of particles tracks the joint posterior over the
//! partition and all parameters. Per-observation cost stays bounded as the
//! stream grows because every likelihood evaluation inside the sampler
//! touches at most a fixed-size subsample of a cluster.
//!
//! The main entry points are [`ParticleEnsemble::init`] to open a run on its
//! first observation, [`ParticleEnsemble::step`] to absorb each subsequent
//! one, and [`predict`] for the one-step-ahead predictive in between.
//! Everything is deterministic given the master seed, including under
//! multi-threaded execution.

pub mod error;
pub mod kernel;
pub mod mixture;
pub mod predict;
pub mod rng;
pub mod samplers;
pub mod smc;
pub mod tp;
pub mod util;

pub use error::{Error, Result};
pub use mixture::{AlphaPrior, ClusterInputStats, NIWPrior};
pub use predict::{predict, PredictiveComponent, PredictiveResult};
pub use samplers::{GammaParams, SliceConfig};
pub use smc::{ClusterState, Particle, ParticleEnsemble, PriorConfig, SmcConfig, StepSummary};
pub use tp::TPParams;
