//! Zero-order GP-based model predictive control.
//!
//! - [`uncertainty`]: normal quantiles, covariance propagation and
//!   constraint back-offs.
//! - [`qp`]: a dense interior-point QP solver.
//! - [`ocp`]: the reduced OCP and one real-time SQP iteration.
//! - [`rk4`]: RK4 discretization with exact Jacobians.
//! - [`model`] and [`adapters`]: the residual-model interface and its
//!   GP-backed implementations.

pub mod adapters;
pub mod error;
pub mod model;
pub mod ocp;
pub mod qp;
pub mod rk4;
pub mod uncertainty;

pub use error::{Error, Result};
pub use adapters::{ExactSodResidual, SpatialIpResidual, StgpResidual};
pub use model::{FeatureMap, OnlineModel, ResidualModel, StageEval, ZeroModel};
pub use ocp::{
    sqp_rti_step, ConstraintRow, LsqCost, OcpIterate, OcpProblem, OcpSpec, RtiOptions, StepReport, StepStatus,
};
pub use qp::{InteriorPoint, QpProblem, QpSettings, QpSolution, QpSolver, QpStatus};
pub use rk4::{rk4_next, rk4_step, rk4_substeps, ContinuousDynamics, Linearization};
pub use uncertainty::{inverse_normal_cdf, propagate_covariance, tightening};
