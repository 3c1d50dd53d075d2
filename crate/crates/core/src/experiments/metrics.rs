//! Evaluation metrics over test records.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::dgp::{generate_dataset, DgpConfig};
use crate::error::{Error, Result};
use crate::guarantees::{theorem1_check, theorem2b_check};
use crate::manifold::ManifoldSpec;
use crate::projector::{project, Metric, ProjectionResult, SolverOptions};
use crate::rng::{purpose, stream_key, stream_rng};

/// What the metrics need from one test point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    /// Ex-ante reduction probability.
    pub e: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `||z - z_hat||`.
    pub err_hat: f64,
    /// `||z - z_tilde||`.
    pub err_til: f64,
}

impl Scored {
    /// Ex-post reduction; ties count as reductions.
    pub fn improved(&self) -> bool {
        self.err_hat >= self.err_til
    }
}

/// Moving-average calibration curve.
///
/// Pairs `(score, outcome)` are sorted by score (then outcome, so ties do not
/// depend on input order); `r(t)` averages outcomes over sorted positions
/// `[t - w/2, t + w/2]` clipped to the data. Returns `(sorted score, r(t))`.
pub fn calibration_curve(pairs: &[(f64, bool)], w: usize) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(Error::invalid("calibration curve needs at least one record"));
    }
    if w == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0usize);
    for (_, hit) in &sorted {
        prefix.push(prefix.last().unwrap() + usize::from(*hit));
    }
    let half = w / 2;
    let last = sorted.len() - 1;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(t, (score, _))| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(last);
            let hits = prefix[hi + 1] - prefix[lo];
            (*score, hits as f64 / (hi - lo + 1) as f64)
        })
        .collect())
}

/// Default window `max(50, n / 50)`.
pub fn default_window(n: usize) -> usize {
    (n / 50).max(50)
}

/// Fraction of records whose interval lies on the correct side of 1/2:
/// `lower > 0.5` for ex-post improvements, `upper < 0.5` otherwise.
pub fn binary_coverage(records: &[Scored]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("coverage needs at least one record"));
    }
    let mut hits = 0usize;
    for r in records {
        let (Some(lo), Some(hi)) = (r.lower, r.upper) else {
            return Err(Error::invalid("coverage needs confidence bounds on every record"));
        };
        if (r.improved() && lo > 0.5) || (!r.improved() && hi < 0.5) {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyScore {
    /// Per record: the reconciled forecast was chosen.
    #[serde(skip)]
    pub reconciled: Vec<bool>,
    pub delta_rel_opt: f64,
    /// The oracle never improves on the base forecasts, so the score is
    /// reported as 0.
    pub degenerate: bool,
}

fn rms(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    (values.map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

/// Scores a per-record choice between base and reconciled forecasts:
/// `(RMS(base) - RMS(choice)) / (RMS(base) - RMS(oracle))`.
pub fn score_choice(records: &[Scored], reconciled: Vec<bool>) -> StrategyScore {
    let n = records.len().max(1);
    let base = rms(records.iter().map(|r| r.err_hat), n);
    let oracle = rms(records.iter().map(|r| r.err_hat.min(r.err_til)), n);
    let chosen = rms(
        records
            .iter()
            .zip(&reconciled)
            .map(|(r, c)| if *c { r.err_til } else { r.err_hat }),
        n,
    );
    let denom = base - oracle;
    let (delta_rel_opt, degenerate) = if denom > 0.0 {
        ((base - chosen) / denom, false)
    } else {
        (0.0, true)
    };
    StrategyScore {
        reconciled,
        delta_rel_opt,
        degenerate,
    }
}

/// Reconciles exactly the records with `e > theta`.
pub fn apply_strategy(records: &[Scored], theta: f64) -> StrategyScore {
    score_choice(records, records.iter().map(|r| r.e > theta).collect())
}

pub fn always_reconcile(records: &[Scored]) -> StrategyScore {
    score_choice(records, vec![true; records.len()])
}

/// Ex-post best choice per record.
pub fn oracle_strategy(records: &[Scored]) -> StrategyScore {
    score_choice(records, records.iter().map(|r| r.err_til < r.err_hat).collect())
}

/// Minimizer over the manifold of `sum_i w_i ||z - atom_i||^2`: the
/// projection of the weighted barycenter.
pub fn frechet_mean_euclidean(
    spec: &ManifoldSpec,
    atoms: &[DVector<f64>],
    weights: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    let first = atoms.first().ok_or_else(|| Error::invalid("atom list is empty"))?;
    let n = first.len();
    if atoms.iter().any(|a| a.len() != n) {
        return Err(Error::invalid("atoms have different lengths"));
    }
    let mut barycenter = DVector::zeros(n);
    match weights {
        None => {
            for a in atoms {
                barycenter += a;
            }
            barycenter /= atoms.len() as f64;
        }
        Some(w) => {
            if w.len() != atoms.len() {
                return Err(Error::DimensionMismatch {
                    expected: atoms.len(),
                    got: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || !(total > 0.0) {
                return Err(Error::invalid("weights must be non-negative with positive sum"));
            }
            for (a, wi) in atoms.iter().zip(w) {
                barycenter += a * (wi / total);
            }
        }
    }
    project(spec, &barycenter, &Metric::Identity, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplicabilityRow {
    pub sigma: f64,
    pub n_used: usize,
    pub n_failed: usize,
    /// Fraction of points where the theorem certifies a reduction.
    pub condition_rate: f64,
    /// Fraction of points where `||z - z_tilde|| < ||z - z_hat||`.
    pub reduction_rate: f64,
}

/// Perturbs `n` coherent samples with isotropic noise `N(0, sigma^2 I)` per
/// level, projects them and reports how often the theorem condition holds
/// and how often the error actually shrinks. Hypersurfaces use the
/// curvature-sign check, higher codimension the cone check.
pub fn applicability_study(
    spec: &ManifoldSpec,
    sigma_levels: &[f64],
    n: usize,
    dgp: &DgpConfig,
    opts: &SolverOptions,
) -> Result<Vec<ApplicabilityRow>> {
    if n == 0 {
        return Err(Error::invalid("applicability study needs at least one point"));
    }
    let truths = generate_dataset(spec, &DgpConfig { t: n, ..dgp.clone() })?;
    sigma_levels
        .iter()
        .enumerate()
        .map(|(level, &sigma)| {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid("noise levels must be non-negative"));
            }
            let outcomes: Vec<Option<(bool, bool)>> = truths
                .par_iter()
                .enumerate()
                .map(|(i, z)| {
                    let mut rng = stream_rng(dgp.seed, &[purpose::NOISE, level as u64, i as u64]);
                    let z_hat = z + DVector::from_fn(z.len(), |_, _| {
                        sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    });
                    let local = SolverOptions {
                        seed: stream_key(dgp.seed, &[purpose::RESTART, level as u64, i as u64]),
                        ..opts.clone()
                    };
                    let proj = project(spec, &z_hat, &Metric::Identity, &local).ok()?;
                    let check = if spec.codim() == 1 {
                        theorem1_check(spec, &z_hat, &proj)
                    } else {
                        theorem2b_check(spec, &z_hat, &proj)
                    };
                    let condition = check.map(|v| v.is_guaranteed()).unwrap_or(false);
                    let reduced = (z - &proj.z_tilde).norm_squared() < (z - &z_hat).norm_squared();
                    Some((condition, reduced))
                })
                .collect();
            let used: Vec<_> = outcomes.iter().flatten().collect();
            let n_used = used.len();
            let rate = |pick: fn(&(bool, bool)) -> bool| {
                if n_used == 0 {
                    0.0
                } else {
                    used.iter().filter(|o| pick(o)).count() as f64 / n_used as f64
                }
            };
            Ok(ApplicabilityRow {
                sigma,
                n_used,
                n_failed: n - n_used,
                condition_rate: rate(|o| o.0),
                reduction_rate: rate(|o| o.1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::registry_get;

    fn scored(e: f64, lower: f64, upper: f64, err_hat: f64, err_til: f64) -> Scored {
        Scored {
            e,
            lower: Some(lower),
            upper: Some(upper),
            err_hat,
            err_til,
        }
    }

    #[test]
    fn calibration_examples() {
        let all: Vec<_> = (0..7).map(|i| (i as f64 / 7.0, true)).collect();
        assert!(calibration_curve(&all, 3).unwrap().iter().all(|(_, r)| *r == 1.0));

        let pairs = [(0.1, true), (0.2, false), (0.3, true)];
        let r: Vec<f64> = calibration_curve(&pairs, 2).unwrap().into_iter().map(|p| p.1).collect();
        assert_eq!(r, vec![0.5, 2.0 / 3.0, 0.5]);

        let shuffled = [(0.3, true), (0.1, true), (0.2, false)];
        assert_eq!(calibration_curve(&pairs, 2).unwrap(), calibration_curve(&shuffled, 2).unwrap());
        assert!(calibration_curve(&[], 2).is_err());
        assert!(calibration_curve(&pairs, 0).is_err());
        assert_eq!(default_window(1000), 50);
        assert_eq!(default_window(10_000), 200);
    }

    #[test]
    fn coverage_examples() {
        let oracle = [scored(1.0, 1.0, 1.0, 2.0, 1.0), scored(0.0, 0.0, 0.0, 1.0, 2.0)];
        assert_eq!(binary_coverage(&oracle).unwrap(), 1.0);
        let straddle = [scored(0.5, 0.4, 0.6, 2.0, 1.0), scored(0.5, 0.4, 0.6, 1.0, 2.0)];
        assert_eq!(binary_coverage(&straddle).unwrap(), 0.0);
        assert_eq!(binary_coverage(&[scored(0.7, 0.6, 0.8, 2.0, 1.0)]).unwrap(), 1.0);
        let unbounded = Scored { lower: None, ..oracle[0] };
        assert!(binary_coverage(&[unbounded]).is_err());
    }

    #[test]
    fn strategy_edges() {
        let recs = [
            scored(0.9, 0.8, 1.0, 2.0, 1.0),
            scored(0.3, 0.1, 0.5, 1.0, 1.5),
            scored(0.6, 0.4, 0.8, 3.0, 2.5),
        ];
        assert_eq!(oracle_strategy(&recs).delta_rel_opt, 1.0);
        assert_eq!(apply_strategy(&recs, 1.0).delta_rel_opt, 0.0);
        assert_eq!(apply_strategy(&recs, 0.0), always_reconcile(&recs));
        let best = apply_strategy(&recs, 0.5);
        assert_eq!(best.reconciled, vec![true, false, true]);
        assert_eq!(best.delta_rel_opt, 1.0);

        let never_better = [scored(0.5, 0.4, 0.6, 1.0, 2.0)];
        let s = oracle_strategy(&never_better);
        assert!(s.degenerate);
        assert_eq!(s.delta_rel_opt, 0.0);
    }

    #[test]
    fn frechet_examples() {
        let spec = registry_get("parabola").unwrap();
        let opts = SolverOptions::default();
        let atom = DVector::from_column_slice(&[0.5, 0.25]);
        let r = frechet_mean_euclidean(&spec, std::slice::from_ref(&atom), None, &opts).unwrap();
        assert_eq!(r.z_tilde, atom);

        let atoms = [DVector::from_column_slice(&[1.0, 1.0]), DVector::from_column_slice(&[-1.0, 1.0])];
        let r = frechet_mean_euclidean(&spec, &atoms, None, &opts).unwrap();
        assert!((r.z_tilde[0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((r.z_tilde[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn applicability_rates() {
        let spec = registry_get("paraboloid").unwrap();
        let dgp = DgpConfig {
            theta1: 0.5,
            theta2: 0.5,
            sigma: 1.0,
            t: 1,
            seed: 3,
        };
        let opts = SolverOptions::default();
        let rows = applicability_study(&spec, &[0.0, 0.1, 0.5], 300, &dgp, &opts).unwrap();
        assert_eq!(rows, applicability_study(&spec, &[0.0, 0.1, 0.5], 300, &dgp, &opts).unwrap());
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.condition_rate));
            assert!(row.condition_rate <= row.reduction_rate);
        }
        assert_eq!(rows[0].condition_rate, 0.0);
        assert_eq!(rows[0].reduction_rate, 0.0);
    }
}
