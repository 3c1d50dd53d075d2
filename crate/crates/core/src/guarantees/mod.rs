//! Sufficient conditions under which projection cannot increase the error
//! for any coherent truth, and a sample-based reduction-probability estimate.
//!
//! All checks assume an orthogonal projection (identity metric) that has
//! converged.

mod estimate;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{restricted_hessian, tangent_basis};
use crate::manifold::{Convexity, ManifoldSpec};
use crate::projector::ProjectionResult;

pub use estimate::{clopper_pearson, theorem3_estimate, ReductionEstimate};

/// Strict margin on `sign(f(z_hat)) * lambda_min`.
pub const TOL_LAMBDA: f64 = 1e-8;
/// Strict margin on the scalar multiplier of the corollary check.
pub const TOL_MU: f64 = 1e-8;
/// `|f(z_hat)|` at or below this counts as already coherent.
pub const TOL_ON_MANIFOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    #[serde(rename = "1")]
    T1,
    #[serde(rename = "c1")]
    C1,
    #[serde(rename = "2b")]
    T2b,
}

impl Theorem {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "t1" => Some(Theorem::T1),
            "c1" => Some(Theorem::C1),
            "2b" | "t2b" => Some(Theorem::T2b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    GuaranteedReduction,
    NotApplicable,
}

/// The clause that failed when the verdict is [`Verdict::NotApplicable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clause {
    /// The forecast is already coherent, so the projection is a no-op.
    OnManifold,
    /// `sign(f(z_hat)) * lambda_min <= tol`.
    CurvatureSign,
    /// The displacement does not point from `z_hat` towards the convex side.
    Orientation,
    /// No convexity class is declared for the constraint.
    ConvexityUnknown,
    /// Some multiplier of the cone condition is negative.
    MultiplierSign,
    /// The displacement is not in the span of the constraint gradients.
    ConeResidual,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeVerdict {
    pub verdict: Verdict,
    pub theorem: Theorem,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clause: Option<Clause>,
    pub diagnostics: Diagnostics,
}

impl GuaranteeVerdict {
    pub fn is_guaranteed(&self) -> bool {
        self.verdict == Verdict::GuaranteedReduction
    }

    fn decide(theorem: Theorem, failed: Option<Clause>, diagnostics: Diagnostics) -> Self {
        Self {
            verdict: if failed.is_none() {
                Verdict::GuaranteedReduction
            } else {
                Verdict::NotApplicable
            },
            theorem,
            clause: failed,
            diagnostics,
        }
    }
}

fn common_preconditions(spec: &ManifoldSpec, z_hat: &DVector<f64>, proj: &ProjectionResult) -> Result<()> {
    if z_hat.len() != spec.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim,
            got: z_hat.len(),
        });
    }
    if proj.z_tilde.len() != spec.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim,
            got: proj.z_tilde.len(),
        });
    }
    if !proj.converged {
        return Err(Error::Applicability("projection did not converge".into()));
    }
    if !proj.identity_metric {
        return Err(Error::Applicability("guarantees require an orthogonal (identity-metric) projection".into()));
    }
    Ok(())
}

fn require_hypersurface(spec: &ManifoldSpec) -> Result<()> {
    if spec.codim() != 1 {
        return Err(Error::Applicability(format!(
            "requires a hypersurface (m = 1), got m = {}",
            spec.codim()
        )));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Curvature-sign condition `sign(f(z_hat)) * lambda_min(H_tan(z_tilde)) > 0`.
///
/// Beyond the sign condition the check requires a declared convexity class
/// and a displacement that points from `z_hat` towards `{f = 0}` along the
/// gradient (`sign(mu) = -sign(f(z_hat))`). Both hold for the global
/// projection onto a convex level set; they reject local projections that
/// land on the far side of the set.
pub fn theorem1_check(spec: &ManifoldSpec, z_hat: &DVector<f64>, proj: &ProjectionResult) -> Result<GuaranteeVerdict> {
    require_hypersurface(spec)?;
    common_preconditions(spec, z_hat, proj)?;
    let f_hat = spec.eval_f(z_hat)?[0];
    let mut diag = Diagnostics {
        f_hat: Some(f_hat),
        sign_f: Some(sign(f_hat)),
        ..Default::default()
    };
    if f_hat.abs() <= TOL_ON_MANIFOLD {
        return Ok(GuaranteeVerdict::decide(Theorem::T1, Some(Clause::OnManifold), diag));
    }
    let jac = spec.eval_jacobian(&proj.z_tilde)?;
    let basis = tangent_basis(&jac)?;
    let hess = &spec.eval_hessians(&proj.z_tilde)?[0];
    let (_, lambda_min) = restricted_hessian(hess, &basis)?;
    diag.lambda_min = Some(lambda_min);
    let grad = jac.row(0).transpose();
    let mu = proj.delta_pi.dot(&grad) / grad.norm_squared();
    diag.mu = Some(vec![mu]);

    let failed = if sign(f_hat) * lambda_min <= TOL_LAMBDA {
        Some(Clause::CurvatureSign)
    } else if spec.convexity[0] == Convexity::Unknown {
        Some(Clause::ConvexityUnknown)
    } else if sign(mu) != -sign(f_hat) {
        Some(Clause::Orientation)
    } else {
        None
    };
    Ok(GuaranteeVerdict::decide(Theorem::T1, failed, diag))
}

/// Normal-multiplier condition: with `delta_pi = mu * grad f(z_tilde)`,
/// reduction is guaranteed when `mu < 0` for a convex sublevel set or
/// `mu > 0` for a convex superlevel set.
pub fn corollary1_check(spec: &ManifoldSpec, z_hat: &DVector<f64>, proj: &ProjectionResult) -> Result<GuaranteeVerdict> {
    require_hypersurface(spec)?;
    let class = spec.convexity[0];
    if class == Convexity::Unknown {
        return Err(Error::Applicability("constraint has unknown convexity".into()));
    }
    common_preconditions(spec, z_hat, proj)?;
    let grad = spec.gradient(0, &proj.z_tilde)?;
    let gnorm2 = grad.norm_squared();
    if gnorm2 == 0.0 {
        return Err(Error::DegeneratePoint("gradient vanishes at the projection".into()));
    }
    let mu = proj.delta_pi.dot(&grad) / gnorm2;
    let off_normal = (&proj.delta_pi - &grad * mu).amax();
    let allowed = (10.0 * proj.stat_residual).max(1e-6);
    if off_normal > allowed {
        return Err(Error::SolverQuality(format!(
            "displacement is not parallel to the gradient (deviation {off_normal:.3e} > {allowed:.3e})"
        )));
    }
    let diag = Diagnostics {
        mu: Some(vec![mu]),
        residual: Some(off_normal),
        ..Default::default()
    };
    let failed = if proj.delta_pi.amax() == 0.0 {
        Some(Clause::OnManifold)
    } else {
        let holds = match class {
            Convexity::ConvexSublevel => mu < -TOL_MU,
            Convexity::ConvexSuperlevel => mu > TOL_MU,
            Convexity::Unknown => unreachable!(),
        };
        (!holds).then_some(Clause::MultiplierSign)
    };
    Ok(GuaranteeVerdict::decide(Theorem::C1, failed, diag))
}

/// Cone condition for vector-valued constraints: reduction is guaranteed when
/// `delta_pi = -sum_i mu_i grad f_i(z_tilde)` with `mu >= 0` and every
/// sublevel set convex (signs flipped for superlevel sets).
pub fn theorem2b_check(spec: &ManifoldSpec, z_hat: &DVector<f64>, proj: &ProjectionResult) -> Result<GuaranteeVerdict> {
    let class = match spec.uniform_convexity() {
        Some(c @ (Convexity::ConvexSublevel | Convexity::ConvexSuperlevel)) => c,
        _ => {
            return Err(Error::Applicability(
                "all constraints must share one known convexity class".into(),
            ))
        }
    };
    common_preconditions(spec, z_hat, proj)?;
    let jac = spec.eval_jacobian(&proj.z_tilde)?;
    tangent_basis(&jac)?;
    let s = match class {
        Convexity::ConvexSublevel => 1.0,
        _ => -1.0,
    };
    // J^T mu = -s delta_pi.
    let target = &proj.delta_pi * -s;
    let residual_of = |mu: &DVector<f64>| (jac.transpose() * mu - &target).norm();
    let dnorm = proj.delta_pi.norm();
    let res_tol = 1e-6 * dnorm.max(1.0);

    let mut mu = &proj.lambda * (s / 2.0);
    let mut residual = residual_of(&mu);
    if residual > res_tol {
        let ls = least_squares(&jac.transpose(), &target)?;
        let r = residual_of(&ls);
        if r < residual {
            mu = ls;
            residual = r;
        }
    }
    let mu_floor = -1e-8 * mu.amax().max(1.0);
    let failed = if residual > res_tol {
        Some(Clause::ConeResidual)
    } else if mu.min() < mu_floor {
        Some(Clause::MultiplierSign)
    } else {
        None
    };
    let diag = Diagnostics {
        mu: Some(mu.iter().copied().collect()),
        residual: Some(residual),
        ..Default::default()
    };
    Ok(GuaranteeVerdict::decide(Theorem::T2b, failed, diag))
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-14)
        .map_err(|e| Error::SolverQuality(e.to_string()))
}

/// `delta_pi^T delta_tilde >= -||delta_pi||^2 / 2`, evaluated without tolerance.
///
/// With `delta_tilde = z - z_tilde` this is equivalent to
/// `||z - z_tilde|| <= ||z - z_hat||`.
pub fn halfspace_test(delta_pi: &DVector<f64>, delta_tilde: &DVector<f64>) -> bool {
    assert_eq!(delta_pi.len(), delta_tilde.len(), "halfspace_test: length mismatch");
    delta_pi.dot(delta_tilde) >= -0.5 * delta_pi.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::registry_get;
    use crate::projector::{project, Metric, SolverOptions};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn solve(name: &str, z: &[f64]) -> (ManifoldSpec, DVector<f64>, ProjectionResult) {
        let spec = registry_get(name).unwrap();
        let z_hat = dv(z);
        let r = project(&spec, &z_hat, &Metric::Identity, &SolverOptions::default()).unwrap();
        (spec, z_hat, r)
    }

    #[test]
    fn theorem1_parabola_examples() {
        let (spec, z, r) = solve("parabola", &[0.0, -1.0]);
        let v = theorem1_check(&spec, &z, &r).unwrap();
        assert!(v.is_guaranteed());
        assert_eq!(v.diagnostics.sign_f, Some(1.0));
        assert!((v.diagnostics.lambda_min.unwrap() - 2.0).abs() < 1e-12);

        let (spec, z, r) = solve("parabola", &[0.0, 1.0]);
        let v = theorem1_check(&spec, &z, &r).unwrap();
        assert_eq!(v.verdict, Verdict::NotApplicable);
        assert_eq!(v.clause, Some(Clause::CurvatureSign));

        let (spec, z, r) = solve("parabola", &[2.0, 4.0]);
        let v = theorem1_check(&spec, &z, &r).unwrap();
        assert_eq!(v.clause, Some(Clause::OnManifold));
    }

    #[test]
    fn theorem1_rejects_codim_two_and_weighted() {
        let (spec, z, r) = solve("diag-parabola", &[0.0, 0.0, -1.0]);
        assert!(matches!(theorem1_check(&spec, &z, &r), Err(Error::Applicability(_))));
        let spec = registry_get("parabola").unwrap();
        let w = Metric::Weighted(DMatrix::identity(2, 2) * 2.0);
        let r = project(&spec, &dv(&[0.0, -1.0]), &w, &SolverOptions::default()).unwrap();
        assert!(matches!(theorem1_check(&spec, &dv(&[0.0, -1.0]), &r), Err(Error::Applicability(_))));
    }

    #[test]
    fn theorem1_rejects_wrong_orientation() {
        // Same curvature sign, but a displacement pointing away from the
        // coherent side, as a far-side stationary point would produce.
        let (spec, z_hat, mut r) = solve("parabola", &[0.0, -1.0]);
        r.delta_pi = -&r.delta_pi;
        let v = theorem1_check(&spec, &z_hat, &r).unwrap();
        assert_eq!(v.clause, Some(Clause::Orientation));
    }

    #[test]
    fn corollary1_examples() {
        let (spec, z, r) = solve("parabola", &[0.0, -1.0]);
        let v = corollary1_check(&spec, &z, &r).unwrap();
        assert!(v.is_guaranteed());
        assert!((v.diagnostics.mu.as_ref().unwrap()[0] + 1.0).abs() < 1e-12);

        let (spec, z, r) = solve("parabola", &[0.0, 1.0]);
        let v = corollary1_check(&spec, &z, &r).unwrap();
        assert!(v.diagnostics.mu.as_ref().unwrap()[0] > 0.0);
        assert_eq!(v.verdict, Verdict::NotApplicable);

        let (spec, z, r) = solve("parabola", &[1.0, 1.0]);
        let v = corollary1_check(&spec, &z, &r).unwrap();
        assert_eq!(v.diagnostics.mu.as_ref().unwrap()[0], 0.0);
        assert_eq!(v.verdict, Verdict::NotApplicable);

        let (spec, z, r) = solve("himmelblau", &[0.5, 0.5, 0.0]);
        assert!(matches!(corollary1_check(&spec, &z, &r), Err(Error::Applicability(_))));
    }

    #[test]
    fn corollary1_flags_non_normal_displacement() {
        let (spec, z, mut r) = solve("parabola", &[0.0, -1.0]);
        r.delta_pi[0] += 0.1;
        assert!(matches!(corollary1_check(&spec, &z, &r), Err(Error::SolverQuality(_))));
    }

    #[test]
    fn theorem2b_diag_parabola_examples() {
        let (spec, z, r) = solve("diag-parabola", &[0.0, 0.0, -1.0]);
        assert!(r.z_tilde.amax() < 1e-6);
        let v = theorem2b_check(&spec, &z, &r).unwrap();
        assert!(v.is_guaranteed(), "{v:?}");
        let mu = v.diagnostics.mu.unwrap();
        assert!(mu[0].abs() < 1e-6 && (mu[1] - 1.0).abs() < 1e-6);

        let (spec, z, r) = solve("diag-parabola", &[0.0, 0.0, 1.0]);
        let v = theorem2b_check(&spec, &z, &r).unwrap();
        assert_eq!(v.verdict, Verdict::NotApplicable);
        assert!(v.diagnostics.mu.unwrap()[1] < -0.5);

        let (spec, z, r) = solve("diag-parabola", &[1.0, 1.0, 1.0]);
        let v = theorem2b_check(&spec, &z, &r).unwrap();
        assert!(v.is_guaranteed());
        assert_eq!(v.diagnostics.residual, Some(0.0));
    }

    #[test]
    fn theorem2b_requires_shared_convexity() {
        let (spec, z, r) = solve("exp-cosh", &[0.1, 0.2, 0.0, 0.0]);
        assert!(matches!(theorem2b_check(&spec, &z, &r), Err(Error::Applicability(_))));
    }

    #[test]
    fn halfspace_examples() {
        assert!(halfspace_test(&dv(&[0.0, 1.0]), &dv(&[0.0, 0.0])));
        assert!(!halfspace_test(&dv(&[0.0, 1.0]), &dv(&[0.0, -0.6])));
        assert!(halfspace_test(&dv(&[0.0, 0.0]), &dv(&[3.0, -7.0])));
    }
}
