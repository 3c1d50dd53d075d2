//! Nonlinear forecast reconciliation.
//!
//! Forecasts `z_hat` that violate known structural constraints `f(z) = 0` are
//! reconciled by (weighted) projection onto the constraint manifold. The
//! crate provides the projection solver, curvature diagnostics, sufficient
//! conditions under which projection cannot increase the error, a
//! sample-based estimate of the probability that it reduces the error, and a
//! synthetic experiment harness.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod guarantees;
pub mod manifold;
pub mod projector;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::{curvature_report, restricted_hessian, second_fundamental_form, tangent_basis};
pub use guarantees::{
    clopper_pearson, corollary1_check, halfspace_test, theorem1_check, theorem2b_check,
    theorem3_estimate, GuaranteeVerdict, ReductionEstimate, Theorem, Verdict,
};
pub use manifold::{load_manifold, registry_get, registry_names, Convexity, ManifoldSpec};
pub use projector::{batch_project, fase_reconcile, project, Metric, ProjectionResult, SolverOptions};

/// Schema version stamped on JSON documents produced by this crate.
pub const SCHEMA_VERSION: u32 = 1;
