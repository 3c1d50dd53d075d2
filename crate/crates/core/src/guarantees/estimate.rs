//! Reduction-probability estimate from reconciled predictive samples.

use nalgebra::DVector;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use super::halfspace_test;
use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;
use crate::projector::ProjectionResult;

/// Atoms with `||f||_inf` above this are rejected as off-manifold.
pub const ATOM_FEASIBILITY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionEstimate {
    /// Estimated probability that reconciliation does not increase the error.
    pub e: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(rename = "S")]
    pub s: usize,
    pub k: usize,
    pub alpha: f64,
    /// Weights were unequal; confidence bounds are suppressed.
    pub weighted: bool,
}

/// Estimates the probability that projecting `z_hat` reduces the error.
///
/// `atoms` are reconciled predictive samples on the manifold. Each atom
/// contributes its weight when `delta_pi^T (atom - z_tilde) >=
/// -||delta_pi||^2 / 2`. `weights = None` means equal weights, in which case
/// Clopper-Pearson bounds at level `alpha` are attached.
pub fn theorem3_estimate(
    spec: &ManifoldSpec,
    proj: &ProjectionResult,
    atoms: &[DVector<f64>],
    weights: Option<&[f64]>,
    alpha: f64,
) -> Result<ReductionEstimate> {
    let s = atoms.len();
    if s == 0 {
        return Err(Error::invalid("atom list is empty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let weights: Vec<f64> = match weights {
        None => vec![1.0 / s as f64; s],
        Some(w) => {
            if w.len() != s {
                return Err(Error::DimensionMismatch { expected: s, got: w.len() });
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("weights must be finite and non-negative"));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
            }
            w.iter().map(|v| v / total).collect()
        }
    };
    let first = weights[0];
    let equal = weights.iter().all(|w| (w - first).abs() <= 1e-12 * first.max(f64::MIN_POSITIVE));

    let mut k = 0;
    let mut e = 0.0;
    for (atom, w) in atoms.iter().zip(&weights) {
        let f = spec.eval_f(atom)?;
        if !(f.amax() <= ATOM_FEASIBILITY) {
            return Err(Error::invalid(format!(
                "atom is off the manifold (|f| = {:.3e})",
                f.amax()
            )));
        }
        if halfspace_test(&proj.delta_pi, &(atom - &proj.z_tilde)) {
            k += 1;
            e += w;
        }
    }
    let (lower, upper, e) = if equal {
        let (lo, hi) = clopper_pearson(k, s, alpha)?;
        (Some(lo), Some(hi), k as f64 / s as f64)
    } else {
        (None, None, e.clamp(0.0, 1.0))
    };
    Ok(ReductionEstimate {
        e,
        lower,
        upper,
        s,
        k,
        alpha,
        weighted: !equal,
    })
}

/// Exact two-sided binomial confidence interval for `k` successes in `n`
/// trials.
pub fn clopper_pearson(k: usize, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::invalid(format!("need 0 <= k <= n and n >= 1 (k = {k}, n = {n})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, kf, nf - kf + 1.0)
    };
    let upper = if k == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, kf + 1.0, nf - kf)
    };
    Ok((lower, upper))
}

/// Inverse of the regularized incomplete beta function `I_x(a, b)` in `x`.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    if a == 1.0 {
        // I_x(1, b) = 1 - (1 - x)^b.
        return -((-p).ln_1p() / b).exp_m1();
    }
    if b == 1.0 {
        // I_x(a, 1) = x^a.
        return p.powf(1.0 / a);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > f64::EPSILON * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
