//! Implicit constraint manifolds `M = {z : f(z) = 0}` with `f: R^n -> R^m`.
//!
//! A [`ManifoldSpec`] is a list of scalar [`Constraint`]s. Each constraint
//! may supply an analytic gradient and Hessian; missing derivatives fall back
//! to central finite differences.

mod expr;
mod zoo;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expr::{CustomManifold, Expr};
pub use zoo::{registry_get, registry_names, GraphFn};

/// Scalar constraint `g(z)` of a level set.
pub trait Constraint: Send + Sync + fmt::Debug {
    fn value(&self, z: &[f64]) -> f64;

    fn gradient(&self, _z: &[f64]) -> Option<DVector<f64>> {
        None
    }

    fn hessian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Convexity class of one constraint's level sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convexity {
    /// `{z : g(z) <= 0}` is convex.
    ConvexSublevel,
    /// `{z : g(z) >= 0}` is convex.
    ConvexSuperlevel,
    Unknown,
}

/// Graph-function scalar map `R^k -> R` used to build a [`GraphLift`].
pub trait GraphFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>>;
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>>;
}

/// Manifold defined by graphs over a low-dimensional base: the lifted
/// constraints are `f_i(z) = g_i(z_1..z_k) - z_{k+i}`.
#[derive(Debug, Clone)]
pub struct GraphLift {
    pub base_dim: usize,
    pub graphs: Vec<Arc<dyn GraphFunction>>,
}

impl GraphLift {
    pub fn ambient_dim(&self) -> usize {
        self.base_dim + self.graphs.len()
    }

    /// Lifts a base point `x` onto the manifold: `(x, g_1(x), ..., g_m(x))`.
    pub fn lift(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.base_dim, "base point dimension");
        let mut z = DVector::zeros(self.ambient_dim());
        z.rows_mut(0, self.base_dim).copy_from_slice(x);
        for (i, g) in self.graphs.iter().enumerate() {
            z[self.base_dim + i] = g.value(x);
        }
        z
    }

    fn constraints(&self) -> Vec<Arc<dyn Constraint>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                Arc::new(LiftedConstraint {
                    graph: Arc::clone(g),
                    base_dim: self.base_dim,
                    out_index: self.base_dim + i,
                    ambient_dim: self.ambient_dim(),
                }) as Arc<dyn Constraint>
            })
            .collect()
    }
}

#[derive(Debug)]
struct LiftedConstraint {
    graph: Arc<dyn GraphFunction>,
    base_dim: usize,
    out_index: usize,
    ambient_dim: usize,
}

impl Constraint for LiftedConstraint {
    fn value(&self, z: &[f64]) -> f64 {
        self.graph.value(&z[..self.base_dim]) - z[self.out_index]
    }

    fn gradient(&self, z: &[f64]) -> Option<DVector<f64>> {
        let g = self.graph.gradient(&z[..self.base_dim])?;
        let mut out = DVector::zeros(self.ambient_dim);
        out.rows_mut(0, self.base_dim).copy_from(&g);
        out[self.out_index] = -1.0;
        Some(out)
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let h = self.graph.hessian(&z[..self.base_dim])?;
        let mut out = DMatrix::zeros(self.ambient_dim, self.ambient_dim);
        out.view_mut((0, 0), (self.base_dim, self.base_dim)).copy_from(&h);
        Some(out)
    }
}

/// Implicit constraint system `f = (g_1, ..., g_m)` on `R^n`.
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub name: String,
    pub ambient_dim: usize,
    pub constraints: Vec<Arc<dyn Constraint>>,
    pub convexity: Vec<Convexity>,
    pub lift: Option<GraphLift>,
}

impl ManifoldSpec {
    pub fn new(
        name: impl Into<String>,
        ambient_dim: usize,
        constraints: Vec<Arc<dyn Constraint>>,
        convexity: Vec<Convexity>,
    ) -> Result<Self> {
        let m = constraints.len();
        if m == 0 || m >= ambient_dim {
            return Err(Error::invalid(format!(
                "codimension must satisfy 1 <= m < n (m = {m}, n = {ambient_dim})"
            )));
        }
        if convexity.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: convexity.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            ambient_dim,
            constraints,
            convexity,
            lift: None,
        })
    }

    /// Builds the spec of the manifold spanned by a [`GraphLift`].
    pub fn from_lift(
        name: impl Into<String>,
        lift: GraphLift,
        convexity: Vec<Convexity>,
    ) -> Result<Self> {
        let mut spec = Self::new(name, lift.ambient_dim(), lift.constraints(), convexity)?;
        spec.lift = Some(lift);
        Ok(spec)
    }

    pub fn codim(&self) -> usize {
        self.constraints.len()
    }

    /// The convexity class shared by every constraint, if there is one.
    pub fn uniform_convexity(&self) -> Option<Convexity> {
        let first = *self.convexity.first()?;
        self.convexity.iter().all(|c| *c == first).then_some(first)
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `f(z)` in registry order.
    pub fn eval_f(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        let out = DVector::from_iterator(
            self.codim(),
            self.constraints.iter().map(|c| c.value(z.as_slice())),
        );
        Ok(out)
    }

    /// Gradient of constraint `i`, analytic when available.
    pub fn gradient(&self, i: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        let c = &self.constraints[i];
        let g = match c.gradient(z.as_slice()) {
            Some(g) => g,
            None => fd_gradient(c.as_ref(), z.as_slice()),
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "gradient" });
        }
        Ok(g)
    }

    /// The `m x n` Jacobian; row `i` is the gradient of constraint `i`.
    pub fn eval_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(z)?;
        let mut jac = DMatrix::zeros(self.codim(), self.ambient_dim);
        for i in 0..self.codim() {
            let g = self.gradient(i, z)?;
            jac.row_mut(i).copy_from(&g.transpose());
        }
        Ok(jac)
    }

    /// Symmetrized Hessians of every constraint.
    pub fn eval_hessians(&self, z: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(z)?;
        self.constraints
            .iter()
            .map(|c| {
                let h = match c.hessian(z.as_slice()) {
                    Some(h) => h,
                    None => fd_hessian(c.as_ref(), z.as_slice()),
                };
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "hessian" });
                }
                Ok((&h + h.transpose()) * 0.5)
            })
            .collect()
    }
}

/// Resolves a registry name, or a path ending in `.json` to a custom
/// manifold definition.
pub fn load_manifold(name_or_path: &str) -> Result<ManifoldSpec> {
    if name_or_path.ends_with(".json") {
        let text = std::fs::read_to_string(name_or_path)?;
        return CustomManifold::from_json(&text)?.build();
    }
    registry_get(name_or_path)
}

fn fd_step(x: f64, root: f64) -> f64 {
    f64::EPSILON.powf(root) * x.abs().max(1.0)
}

/// Central-difference gradient with step `eps^(1/3) * max(1, |z_j|)`.
pub fn fd_gradient(c: &dyn Constraint, z: &[f64]) -> DVector<f64> {
    let mut work = z.to_vec();
    DVector::from_iterator(
        z.len(),
        (0..z.len()).map(|j| {
            let h = fd_step(z[j], 1.0 / 3.0);
            work[j] = z[j] + h;
            let fp = c.value(&work);
            work[j] = z[j] - h;
            let fm = c.value(&work);
            work[j] = z[j];
            (fp - fm) / (2.0 * h)
        }),
    )
}

/// Finite-difference Hessian. Differences the analytic gradient when the
/// constraint has one, otherwise uses the four-point value stencil with a
/// fourth-root step.
pub fn fd_hessian(c: &dyn Constraint, z: &[f64]) -> DMatrix<f64> {
    let n = z.len();
    let mut work = z.to_vec();
    let mut h = DMatrix::zeros(n, n);
    if c.gradient(z).is_some() {
        for j in 0..n {
            let step = fd_step(z[j], 1.0 / 3.0);
            work[j] = z[j] + step;
            let gp = c.gradient(&work).expect("gradient availability is stable");
            work[j] = z[j] - step;
            let gm = c.gradient(&work).expect("gradient availability is stable");
            work[j] = z[j];
            h.column_mut(j).copy_from(&((gp - gm) / (2.0 * step)));
        }
        return h;
    }
    let f0 = c.value(z);
    for j in 0..n {
        let hj = fd_step(z[j], 0.25);
        work[j] = z[j] + hj;
        let fp = c.value(&work);
        work[j] = z[j] - hj;
        let fm = c.value(&work);
        work[j] = z[j];
        h[(j, j)] = (fp - 2.0 * f0 + fm) / (hj * hj);
        for k in (j + 1)..n {
            let hk = fd_step(z[k], 0.25);
            let mut eval = |sj: f64, sk: f64| {
                work[j] = z[j] + sj * hj;
                work[k] = z[k] + sk * hk;
                let v = c.value(&work);
                work[j] = z[j];
                work[k] = z[k];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hj * hk);
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    h
}

/// Constraint backed by plain function pointers over the ambient space.
#[derive(Clone, Copy)]
pub struct FnConstraint {
    pub value: fn(&[f64]) -> f64,
    pub gradient: Option<fn(&[f64]) -> DVector<f64>>,
    pub hessian: Option<fn(&[f64]) -> DMatrix<f64>>,
}

impl fmt::Debug for FnConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnConstraint")
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .finish()
    }
}

impl Constraint for FnConstraint {
    fn value(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }

    fn gradient(&self, z: &[f64]) -> Option<DVector<f64>> {
        self.gradient.map(|g| g(z))
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        self.hessian.map(|h| h(z))
    }
}

/// Affine constraint `a^T z - b`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

impl Constraint for AffineConstraint {
    fn value(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() - self.offset
    }

    fn gradient(&self, _z: &[f64]) -> Option<DVector<f64>> {
        Some(self.coeffs.clone())
    }

    fn hessian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.coeffs.len();
        Some(DMatrix::zeros(n, n))
    }
}
