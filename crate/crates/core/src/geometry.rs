//! Tangent spaces and curvature of level sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;

/// Relative threshold on `|R_ii| / ||J||` below which `J` is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Householder QR of an `n x m` matrix with the full `n x n` orthogonal factor.
fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = a.shape();
    let mut r = a.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    for k in 0..m.min(n.saturating_sub(1)) {
        let x = r.view((k, k), (n - k, 1)).clone_owned();
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            continue;
        }
        v /= vnorm;
        // R <- (I - 2vv^T) R on rows k.., Q <- Q (I - 2vv^T) on columns k..
        let mut rk = r.view_mut((k, 0), (n - k, m));
        let proj = v.transpose() * &rk;
        rk -= &v * proj * 2.0;
        let mut qk = q.view_mut((0, k), (n, n - k));
        let proj = &qk * &v;
        qk -= proj * v.transpose() * 2.0;
    }
    (q, r)
}

/// Orthonormal basis of `ker J` as the trailing columns of the full Q factor
/// of `J^T`.
///
/// The basis is unique only up to a rotation; consumers should rely on
/// rotation-invariant quantities.
pub fn tangent_basis(jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = jac.shape();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("Jacobian shape {m}x{n} needs 1 <= m < n")));
    }
    let scale = jac.norm();
    let (q, r) = householder_qr(&jac.transpose());
    let singular = scale == 0.0 || (0..m).any(|i| r[(i, i)].abs() <= RANK_TOL * scale);
    if singular {
        return Err(Error::SingularConstraint { expected: m });
    }
    if m == n {
        return Err(Error::invalid("full-rank square Jacobian leaves no tangent space"));
    }
    Ok(q.columns(m, n - m).clone_owned())
}

/// Restricted Hessian `E^T H E` and its smallest eigenvalue.
pub fn restricted_hessian(hess: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = hess.nrows();
    if hess.ncols() != n || basis.nrows() != n || basis.ncols() == 0 {
        return Err(Error::invalid("restricted_hessian: incompatible shapes"));
    }
    let h_tan = basis.transpose() * hess * basis;
    let h_tan = (&h_tan + h_tan.transpose()) * 0.5;
    let lambda_min = min_eigenvalue(&h_tan);
    Ok((h_tan, lambda_min))
}

pub(crate) fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigenvalues().min()
}

/// Curvature summary of a level set at one point.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub tangent_basis: DMatrix<f64>,
    pub restricted_hessians: Vec<DMatrix<f64>>,
    pub lambda_min: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

pub fn curvature_report(spec: &ManifoldSpec, z: &DVector<f64>) -> Result<CurvatureReport> {
    let jac = spec.eval_jacobian(z)?;
    let basis = tangent_basis(&jac)?;
    let hessians = spec.eval_hessians(z)?;
    let mut restricted = Vec::with_capacity(hessians.len());
    let mut lambda_min = Vec::with_capacity(hessians.len());
    for h in &hessians {
        let (h_tan, lmin) = restricted_hessian(h, &basis)?;
        restricted.push(h_tan);
        lambda_min.push(lmin);
    }
    let grad_norms = jac.row_iter().map(|r| r.norm()).collect();
    Ok(CurvatureReport {
        tangent_basis: basis,
        restricted_hessians: restricted,
        lambda_min,
        grad_norms,
    })
}

/// Second fundamental form evaluated on a tangent vector `t`.
///
/// For `m = 1`, `normalized[0] = t^T H t / ||grad g||`. For `m > 1` the
/// per-constraint conventions are exposed side by side:
/// * `raw[i] = t^T H_i t`,
/// * `normalized[i] = raw[i] / ||grad g_i||`,
/// * `coefficients` solves `J J^T c = -raw`, so that
///   `z + t + J^T c / 2` stays on the manifold to second order.
#[derive(Debug, Clone)]
pub struct SecondFundamentalForm {
    pub raw: DVector<f64>,
    pub normalized: DVector<f64>,
    pub coefficients: DVector<f64>,
}

impl SecondFundamentalForm {
    /// Normal offset `J^T c / 2` of the second-order expansion.
    pub fn normal_offset(&self, jac: &DMatrix<f64>) -> DVector<f64> {
        jac.transpose() * &self.coefficients * 0.5
    }
}

pub fn second_fundamental_form(
    spec: &ManifoldSpec,
    z: &DVector<f64>,
    t: &DVector<f64>,
) -> Result<SecondFundamentalForm> {
    let f = spec.eval_f(z)?;
    if f.amax() > 1e-8 {
        return Err(Error::invalid(format!("point is off the manifold (|f| = {:.3e})", f.amax())));
    }
    let jac = spec.eval_jacobian(z)?;
    if t.len() != spec.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim,
            got: t.len(),
        });
    }
    let jt = &jac * t;
    if jt.amax() > 1e-6 {
        return Err(Error::invalid(format!("vector is not tangent (|J t| = {:.3e})", jt.amax())));
    }
    let hessians = spec.eval_hessians(z)?;
    let raw = DVector::from_iterator(hessians.len(), hessians.iter().map(|h| (t.transpose() * h * t)[0]));
    let mut normalized = raw.clone();
    for (i, row) in jac.row_iter().enumerate() {
        let norm = row.norm();
        if norm <= f64::EPSILON {
            return Err(Error::DegeneratePoint(format!("gradient of constraint {i} vanishes")));
        }
        normalized[i] /= norm;
    }
    let gram = &jac * jac.transpose();
    let coefficients = gram
        .cholesky()
        .ok_or(Error::SingularConstraint { expected: spec.codim() })?
        .solve(&(-&raw));
    Ok(SecondFundamentalForm {
        raw,
        normalized,
        coefficients,
    })
}
