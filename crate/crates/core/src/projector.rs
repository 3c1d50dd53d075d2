//! Projection of forecasts onto `M = {z : f(z) = 0}` by damped Newton
//! iteration on the KKT system of
//! `L(z, lambda) = (z - z_hat)^T W (z - z_hat) + lambda^T f(z)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_eigenvalue, tangent_basis};
use crate::manifold::{Constraint, Convexity, ManifoldSpec};
use crate::rng::{purpose, stream_key, stream_rng};

/// Which KKT matrix the Newton step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonMode {
    /// Top-left block `2W + sum_i lambda_i H_i` (exact Newton).
    #[default]
    Full,
    /// Top-left block `2W` only, ignoring constraint curvature.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Feasibility tolerance on `||f(z)||_inf`.
    pub tol_f: f64,
    /// Stationarity tolerance on `||2W(z - z_hat) + J^T lambda||_inf`.
    pub tol_g: f64,
    pub max_iters: usize,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    /// Sufficient-decrease constant on the merit `||F||_2`.
    pub armijo: f64,
    pub min_step: f64,
    /// Number of Newton starts; the first starts at `z_hat`.
    pub restarts: usize,
    /// Restart perturbation scale `tau`; starts are drawn from
    /// `z_hat + tau (1 + ||z_hat||) N(0, I)`.
    pub perturbation: f64,
    pub newton_mode: NewtonMode,
    /// Seed of the restart stream.
    pub seed: u64,
    /// Re-run Newton along both directions of negative reduced curvature when
    /// it lands on a saddle or maximum of the distance.
    pub escape_saddles: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_f: 1e-10,
            tol_g: 1e-8,
            max_iters: 100,
            backtrack: 0.5,
            armijo: 1e-4,
            min_step: 1e-10,
            restarts: 1,
            perturbation: 0.1,
            newton_mode: NewtonMode::Full,
            seed: 0,
            escape_saddles: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.tol_f) && positive(self.tol_g) && positive(self.min_step)) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid("backtrack factor must lie in (0, 1)"));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::invalid("perturbation must be non-negative"));
        }
        Ok(())
    }
}

/// Weight matrix of the projection norm.
#[derive(Debug, Clone, Default)]
pub enum Metric {
    #[default]
    Identity,
    Weighted(DMatrix<f64>),
}

impl Metric {
    fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Metric::Identity => DMatrix::identity(n, n),
            Metric::Weighted(w) => w.clone(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let Metric::Weighted(w) = self else {
            return Ok(());
        };
        if w.shape() != (n, n) {
            return Err(Error::invalid(format!("weight matrix must be {n}x{n}")));
        }
        let asym = (w - w.transpose()).amax();
        if asym > 1e-12 * w.amax().max(1.0) || w.clone().cholesky().is_none() {
            return Err(Error::invalid("weight matrix is not symmetric positive definite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub z_tilde: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `z_tilde - z_hat`.
    pub delta_pi: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub feas_residual: f64,
    pub stat_residual: f64,
    /// `||z_tilde - z_hat||_W`.
    pub distance: f64,
    pub identity_metric: bool,
    /// Reduced Hessian of the Lagrangian is positive semidefinite at `z_tilde`.
    pub local_minimum: bool,
}

/// Step doublings tried per escape direction.
const ESCAPE_DOUBLINGS: u32 = 6;

struct Problem<'a> {
    spec: &'a ManifoldSpec,
    z_hat: &'a DVector<f64>,
    w: DMatrix<f64>,
    identity: bool,
    opts: &'a SolverOptions,
}

struct Residual {
    f: DVector<f64>,
    jac: DMatrix<f64>,
    stat: DVector<f64>,
}

impl Residual {
    fn merit(&self) -> f64 {
        (self.stat.norm_squared() + self.f.norm_squared()).sqrt()
    }
}

impl Problem<'_> {
    fn residual(&self, z: &DVector<f64>, lambda: &DVector<f64>) -> Result<Residual> {
        let f = self.spec.eval_f(z)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "constraint" });
        }
        let jac = self.spec.eval_jacobian(z)?;
        let stat = &self.w * (z - self.z_hat) * 2.0 + jac.transpose() * lambda;
        Ok(Residual { f, jac, stat })
    }

    fn finish(&self, z: DVector<f64>, lambda: DVector<f64>, res: &Residual, iterations: usize, converged: bool) -> ProjectionResult {
        let delta_pi = &z - self.z_hat;
        let distance = (delta_pi.transpose() * &self.w * &delta_pi)[0].max(0.0).sqrt();
        ProjectionResult {
            feas_residual: res.f.amax(),
            stat_residual: res.stat.amax(),
            z_tilde: z,
            lambda,
            delta_pi,
            iterations,
            converged,
            distance,
            identity_metric: self.identity,
            local_minimum: false,
        }
    }

    fn lagrangian_hessian(&self, z: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut top = &self.w * 2.0;
        if self.opts.newton_mode == NewtonMode::Full {
            for (i, h) in self.spec.eval_hessians(z)?.iter().enumerate() {
                top += h * lambda[i];
            }
        }
        Ok(top)
    }

    fn solve_kkt(&self, top: &DMatrix<f64>, res: &Residual, iteration: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.spec.ambient_dim;
        let m = self.spec.codim();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(top);
        kkt.view_mut((0, n), (n, m)).copy_from(&res.jac.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&res.jac);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&res.stat));
        rhs.rows_mut(n, m).copy_from(&(-&res.f));
        let step = kkt
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularKkt { iteration })?;
        Ok((step.rows(0, n).clone_owned(), step.rows(n, m).clone_owned()))
    }

    fn newton(&self, z0: DVector<f64>, lambda0: DVector<f64>) -> Result<ProjectionResult> {
        let opts = self.opts;
        let mut z = z0;
        let mut lambda = lambda0;
        let mut res = self.residual(&z, &lambda)?;
        for iter in 0..=opts.max_iters {
            if res.f.amax() <= opts.tol_f && res.stat.amax() <= opts.tol_g {
                return Ok(self.finish(z, lambda, &res, iter, true));
            }
            if iter == opts.max_iters {
                return Ok(self.finish(z, lambda, &res, iter, false));
            }
            let top = self.lagrangian_hessian(&z, &lambda)?;
            let (dz, dl) = self.solve_kkt(&top, &res, iter)?;

            let merit0 = res.merit();
            let mut alpha = 1.0;
            loop {
                let z_try = &z + &dz * alpha;
                let l_try = &lambda + &dl * alpha;
                if let Ok(trial) = self.residual(&z_try, &l_try) {
                    if trial.merit() <= (1.0 - opts.armijo * alpha) * merit0 {
                        z = z_try;
                        lambda = l_try;
                        res = trial;
                        break;
                    }
                }
                alpha *= opts.backtrack;
                if alpha < opts.min_step {
                    return Ok(self.finish(z, lambda, &res, iter + 1, false));
                }
            }
        }
        unreachable!("loop returns on the last iteration")
    }

    /// Fallback for starts where Newton stalls at a singular KKT matrix:
    /// SQP steps with a positive definite Hessian and an l1 penalty merit,
    /// handing over to Newton once the KKT residual is small.
    fn globalized(&self, z0: DVector<f64>) -> Result<ProjectionResult> {
        let m = self.spec.codim();
        let opts = self.opts;
        let mut z = z0;
        let mut lambda = DVector::zeros(m);
        let mut rho: f64 = 0.0;
        let mut res = self.residual(&z, &lambda)?;
        let merit = |z: &DVector<f64>, f: &DVector<f64>, rho: f64| {
            let d = z - self.z_hat;
            (d.transpose() * &self.w * &d)[0] + rho * f.lp_norm(1)
        };
        for iter in 0..opts.max_iters {
            if res.f.amax() <= 1e-6 && res.stat.amax() <= 1e-6 {
                let polished = self.newton(z.clone(), lambda.clone())?;
                if polished.converged {
                    return Ok(ProjectionResult {
                        iterations: iter + polished.iterations,
                        ..polished
                    });
                }
            }
            let top = self.lagrangian_hessian(&z, &lambda)?;
            let eig = ((&top + top.transpose()) * 0.5).symmetric_eigen();
            let floor = 1e-4 * eig.eigenvalues.amax().max(1.0);
            let clamped = eig.eigenvalues.map(|v| v.abs().max(floor));
            let b = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            // Stationarity residual with zero multipliers gives the plain
            // objective gradient as right-hand side.
            let plain = Residual {
                stat: &self.w * (&z - self.z_hat) * 2.0,
                f: res.f.clone(),
                jac: res.jac.clone(),
            };
            let (dz, mu) = self.solve_kkt(&b, &plain, iter)?;
            if rho < mu.amax() + 1e-8 {
                rho = 2.0 * mu.amax() + 1e-8;
            }
            let phi0 = merit(&z, &res.f, rho);
            let slope = plain.stat.dot(&dz) - rho * res.f.lp_norm(1);
            if slope >= -1e-300 {
                break;
            }
            let mut alpha = 1.0;
            loop {
                let z_try = &z + &dz * alpha;
                if let Ok(trial) = self.residual(&z_try, &mu) {
                    if merit(&z_try, &trial.f, rho) <= phi0 + opts.armijo * alpha * slope {
                        z = z_try;
                        lambda = mu;
                        res = trial;
                        break;
                    }
                }
                alpha *= opts.backtrack;
                if alpha < opts.min_step {
                    return Ok(self.finish(z, lambda, &res, iter + 1, false));
                }
            }
        }
        self.newton(z, lambda)
    }

    /// Second-order check on `E^T (2W + sum lambda_i H_i) E`; returns the
    /// eigenvector of the most negative reduced curvature when it is negative.
    fn negative_curvature(&self, r: &ProjectionResult) -> Result<Option<DVector<f64>>> {
        let jac = self.spec.eval_jacobian(&r.z_tilde)?;
        let basis = tangent_basis(&jac)?;
        let mut hl = &self.w * 2.0;
        for (i, h) in self.spec.eval_hessians(&r.z_tilde)?.iter().enumerate() {
            hl += h * r.lambda[i];
        }
        let reduced = basis.transpose() * hl * &basis;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let tol = 1e-9 * reduced.amax().max(1.0);
        if min_eigenvalue(&reduced) >= -tol {
            return Ok(None);
        }
        let eig = reduced.symmetric_eigen();
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty tangent space");
        let mut dir = &basis * eig.eigenvectors.column(k);
        if let Some(first) = dir.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                dir = -dir;
            }
        }
        Ok(Some(dir))
    }

    fn attempt(&self, z0: DVector<f64>, depth: usize, found: &mut Vec<ProjectionResult>, failed: &mut Vec<Error>) {
        let m = self.spec.codim();
        let mut r = match self.newton(z0.clone(), DVector::zeros(m)) {
            Ok(r) if r.converged => r,
            first => match (self.globalized(z0), first) {
                (Ok(g), _) if g.converged => g,
                (_, Ok(r)) => r,
                (_, Err(e)) => {
                    failed.push(e);
                    return;
                }
            },
        };
        if !r.converged {
            failed.push(Error::NonConvergence { best: Box::new(r) });
            return;
        }
        let escape = match self.negative_curvature(&r) {
            Ok(dir) => dir,
            Err(e) => {
                failed.push(e);
                return;
            }
        };
        r.local_minimum = escape.is_none();
        if let (Some(dir), true) = (escape, self.opts.escape_saddles && depth < 2) {
            // Newton is attracted by any stationary point, so short steps fall
            // back into the saddle; lengthen the step until a better point
            // is reached.
            let base = self.opts.perturbation.max(1e-3) * (1.0 + self.z_hat.norm());
            for sign in [1.0, -1.0] {
                for k in 0..ESCAPE_DOUBLINGS {
                    let step = sign * base * f64::from(1u32 << k);
                    let before = found.len();
                    self.attempt(&r.z_tilde + &dir * step, depth + 1, found, failed);
                    let improved = found[before..]
                        .iter()
                        .any(|c| c.local_minimum && c.distance < r.distance * (1.0 - 1e-9));
                    if improved {
                        break;
                    }
                }
            }
        }
        found.push(r);
    }
}

/// Projects `z_hat` onto the manifold, returning the best converged solution
/// over all restarts (local minima preferred, then smallest `W`-distance).
pub fn project(
    spec: &ManifoldSpec,
    z_hat: &DVector<f64>,
    metric: &Metric,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    let n = spec.ambient_dim;
    if z_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z_hat.len(),
        });
    }
    if z_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("forecast contains non-finite values"));
    }
    opts.validate()?;
    metric.validate(n)?;
    let problem = Problem {
        spec,
        z_hat,
        w: metric.matrix(n),
        identity: matches!(metric, Metric::Identity),
        opts,
    };

    let mut found = Vec::new();
    let mut failed = Vec::new();
    let scale = opts.perturbation * (1.0 + z_hat.norm());
    for r in 0..opts.restarts {
        let z0 = if r == 0 {
            z_hat.clone()
        } else {
            let mut rng = stream_rng(opts.seed, &[purpose::RESTART, r as u64]);
            z_hat + DVector::from_fn(n, |_, _| {
                let x: f64 = StandardNormal.sample(&mut rng);
                scale * x
            })
        };
        problem.attempt(z0, 0, &mut found, &mut failed);
    }

    let best = found
        .into_iter()
        .min_by(|a, b| {
            b.local_minimum
                .cmp(&a.local_minimum)
                .then(a.distance.total_cmp(&b.distance))
        });
    if let Some(best) = best {
        return Ok(best);
    }
    let best_iterate = failed
        .iter()
        .filter_map(|e| match e {
            Error::NonConvergence { best } => Some(best),
            _ => None,
        })
        .min_by(|a, b| {
            a.feas_residual
                .max(a.stat_residual)
                .total_cmp(&b.feas_residual.max(b.stat_residual))
        })
        .cloned();
    match best_iterate {
        Some(best) => Err(Error::NonConvergence { best }),
        None => Err(failed
            .into_iter()
            .next()
            .unwrap_or(Error::SingularKkt { iteration: 0 })),
    }
}

/// Seed used for the `index`-th point of a batch.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    stream_key(seed, &[purpose::RESTART, index as u64])
}

/// Projects every point independently, in parallel. Per-point failures are
/// kept in place; output order matches input order.
pub fn batch_project(
    spec: &ManifoldSpec,
    points: &[DVector<f64>],
    metric: &Metric,
    opts: &SolverOptions,
) -> Vec<Result<ProjectionResult>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let opts = SolverOptions {
                seed: point_seed(opts.seed, i),
                ..opts.clone()
            };
            project(spec, p, metric, &opts)
        })
        .collect()
}

/// Smooth map `h: R^p -> R^q` defining the graph `y = h(x)`.
pub trait GraphMap: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> DVector<f64>;
    /// `q x p` Jacobian.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    /// One `p x p` Hessian per output.
    fn hessians(&self, x: &[f64]) -> Vec<DMatrix<f64>>;
}

/// `h(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearMap(pub DMatrix<f64>);

impl GraphMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.0.ncols()
    }

    fn output_dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        &self.0 * DVector::from_column_slice(x)
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.0.clone()
    }

    fn hessians(&self, _x: &[f64]) -> Vec<DMatrix<f64>> {
        let p = self.input_dim();
        vec![DMatrix::zeros(p, p); self.output_dim()]
    }
}

#[derive(Debug)]
struct GraphMapConstraint {
    map: Arc<dyn GraphMap>,
    index: usize,
}

impl Constraint for GraphMapConstraint {
    fn value(&self, z: &[f64]) -> f64 {
        let p = self.map.input_dim();
        self.map.eval(&z[..p])[self.index] - z[p + self.index]
    }

    fn gradient(&self, z: &[f64]) -> Option<DVector<f64>> {
        let p = self.map.input_dim();
        let mut g = DVector::zeros(z.len());
        let jac = self.map.jacobian(&z[..p]);
        g.rows_mut(0, p).copy_from(&jac.row(self.index).transpose());
        g[p + self.index] = -1.0;
        Some(g)
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let p = self.map.input_dim();
        let mut h = DMatrix::zeros(z.len(), z.len());
        let hx = &self.map.hessians(&z[..p])[self.index];
        h.view_mut((0, 0), (p, p)).copy_from(hx);
        Some(h)
    }
}

/// Manifold `{(x, y) : y = h(x)}` with constraints `h_i(x) - y_i`.
pub fn graph_manifold(h: Arc<dyn GraphMap>) -> Result<ManifoldSpec> {
    let (p, q) = (h.input_dim(), h.output_dim());
    let constraints = (0..q)
        .map(|index| {
            Arc::new(GraphMapConstraint {
                map: Arc::clone(&h),
                index,
            }) as Arc<dyn Constraint>
        })
        .collect();
    ManifoldSpec::new("graph", p + q, constraints, vec![Convexity::Unknown; q])
}

/// Weighted reconciliation of state forecasts `x_hat` and measurement
/// forecasts `y_hat` onto `y = h(x)`, minimizing
/// `||x - x_hat||^2_Mw + ||y - y_hat||^2_Rw` over the graph.
pub fn fase_reconcile(
    h: Arc<dyn GraphMap>,
    x_hat: &DVector<f64>,
    y_hat: &DVector<f64>,
    m_w: &DMatrix<f64>,
    r_w: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    let (p, q) = (h.input_dim(), h.output_dim());
    if x_hat.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_hat.len() });
    }
    if y_hat.len() != q {
        return Err(Error::DimensionMismatch { expected: q, got: y_hat.len() });
    }
    if m_w.shape() != (p, p) || r_w.shape() != (q, q) {
        return Err(Error::invalid("weight blocks do not match the state/measurement dimensions"));
    }
    let spec = graph_manifold(h)?;
    let mut w = DMatrix::zeros(p + q, p + q);
    w.view_mut((0, 0), (p, p)).copy_from(m_w);
    w.view_mut((p, p), (q, q)).copy_from(r_w);
    let mut z_hat = DVector::zeros(p + q);
    z_hat.rows_mut(0, p).copy_from(x_hat);
    z_hat.rows_mut(p, q).copy_from(y_hat);
    project(&spec, &z_hat, &Metric::Weighted(w), opts)
}
