//! Approximate spatio-temporal Gaussian process regression.
//!
//! The model tracks a set of spatial inducing points whose values evolve
//! in time according to the state-space realization of a half-integer
//! Matérn kernel. Learning is a square-root Kalman recursion, so every
//! update costs the same regardless of how much data has been absorbed.
//!
//! Modules:
//! - [`temporal_ssm`]: Matérn kernels and their linear-Gaussian SDE form.
//! - [`gp_models`]: spatial RBF kernel, the exact batch GP and the
//!   subset-of-data baseline.
//! - [`stgp`]: the recursive inducing-point model (initialize, update,
//!   evaluate).
//! - [`reference`]: dense oracles for validating the above.

pub mod error;
pub mod gp_models;
pub mod linalg;
pub mod reference;
pub mod stgp;
pub mod temporal_ssm;

pub use error::{Error, Result};
pub use gp_models::{Dataset, ExactGp, GpPosterior, SpatialKernelSpec};
pub use stgp::{InducingConfig, StgpCache, StgpModel, StgpState, TrainingBatch};
pub use temporal_ssm::{DiscreteTransition, TemporalKernelSpec, TemporalSsm};
