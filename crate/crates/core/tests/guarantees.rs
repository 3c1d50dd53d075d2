use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use nlrecon::{
    clopper_pearson, corollary1_check, halfspace_test, project, registry_get, theorem1_check, theorem2b_check,
    theorem3_estimate, Metric, ProjectionResult, SolverOptions, Verdict,
};

/// Certified forecasts must not lose against any manifold point, not only
/// the one that generated them.
#[test]
fn certified_projections_never_increase_the_error_for_any_true_point() {
    let mut certified = 0;
    for name in [
        "parabola", "diag-parabola", "paraboloid", "quartic", "mixed-quadratic", "exponential", "abs", "quad-quad", "quad-qq",
        "e2-s2", "4d-4d", "bowl-sin",
    ] {
        let spec = registry_get(name).unwrap();
        let lift = spec.lift.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truths: Vec<DVector<f64>> = (0..2000)
            .map(|_| {
                let x: Vec<f64> = (0..lift.base_dim).map(|_| rng.random_range(-2.5..2.5)).collect();
                lift.lift(&x)
            })
            .collect();
        for sigma in [0.1, 0.3, 0.5, 0.7] {
            let noise = Normal::new(0.0, sigma).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..lift.base_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let z_hat = lift.lift(&x) + DVector::from_fn(spec.ambient_dim, |_, _| noise.sample(&mut rng));
                let Ok(p) = project(&spec, &z_hat, &Metric::Identity, &SolverOptions::default()) else {
                    continue;
                };
                let verdict = if spec.codim() == 1 {
                    theorem1_check(&spec, &z_hat, &p)
                } else {
                    theorem2b_check(&spec, &z_hat, &p)
                };
                if !verdict.map(|v| v.is_guaranteed()).unwrap_or(false) {
                    continue;
                }
                certified += 1;
                for z in &truths {
                    // Slack covers the solver's feasibility tolerance only.
                    let slack = 1e-9 * (1.0 + z.norm());
                    assert!(
                        (z - &p.z_tilde).norm() <= (z - &z_hat).norm() + slack,
                        "{name}: certified z_hat {:?} loses against z {:?}",
                        z_hat.as_slice(),
                        z.as_slice()
                    );
                }
            }
        }
    }
    assert!(certified > 500, "sweep certified only {certified} forecasts");
}

#[test]
fn verdicts_agree_on_convex_hypersurfaces() {
    let spec = registry_get("paraboloid").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let z_hat = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
        let p = project(&spec, &z_hat, &Metric::Identity, &SolverOptions::default()).unwrap();
        if p.distance < 1e-6 {
            continue;
        }
        let t1 = theorem1_check(&spec, &z_hat, &p).unwrap().verdict;
        let c1 = corollary1_check(&spec, &z_hat, &p).unwrap().verdict;
        let t2 = theorem2b_check(&spec, &z_hat, &p).unwrap().verdict;
        assert_eq!(t1, c1, "at {:?}", z_hat.as_slice());
        assert_eq!(c1, t2, "at {:?}", z_hat.as_slice());
    }
}

#[test]
fn unknown_convexity_is_never_certified_by_the_curvature_check() {
    let spec = registry_get("himmelblau").unwrap();
    let z_hat = DVector::from_column_slice(&[3.0, 2.0, -1.0]);
    let p = project(&spec, &z_hat, &Metric::Identity, &SolverOptions::default()).unwrap();
    assert_eq!(theorem1_check(&spec, &z_hat, &p).unwrap().verdict, Verdict::NotApplicable);
}

fn projection(z_hat: &[f64]) -> (DVector<f64>, ProjectionResult) {
    let spec = registry_get("parabola").unwrap();
    let z_hat = DVector::from_column_slice(z_hat);
    let p = project(&spec, &z_hat, &Metric::Identity, &SolverOptions::default()).unwrap();
    (z_hat, p)
}

fn parabola_atoms(ts: &[f64]) -> Vec<DVector<f64>> {
    ts.iter().map(|t| DVector::from_column_slice(&[*t, t * t])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn clopper_pearson_is_symmetric(n in 1usize..400, frac in 0.0f64..=1.0, alpha in 0.001f64..0.5) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = clopper_pearson(k, n, alpha).unwrap();
        let (lo_c, hi_c) = clopper_pearson(n - k, n, alpha).unwrap();
        prop_assert!((lo - (1.0 - hi_c)).abs() <= 1e-12, "k={} n={} lo={} 1-hi'={}", k, n, lo, 1.0 - hi_c);
        prop_assert!((hi - (1.0 - lo_c)).abs() <= 1e-12);
        prop_assert!(lo <= k as f64 / n as f64 && k as f64 / n as f64 <= hi);
    }

    #[test]
    fn clopper_pearson_is_monotone_and_nested(n in 2usize..300, k in 0usize..299, alpha in 0.01f64..0.3) {
        let k = k.min(n - 1);
        let (lo, hi) = clopper_pearson(k, n, alpha).unwrap();
        let (lo_next, hi_next) = clopper_pearson(k + 1, n, alpha).unwrap();
        prop_assert!(lo_next >= lo && hi_next >= hi);
        let (lo_wide, hi_wide) = clopper_pearson(k, n, alpha / 2.0).unwrap();
        prop_assert!(lo_wide <= lo + 1e-15 && hi_wide >= hi - 1e-15);
    }

    #[test]
    fn halfspace_test_matches_distance_comparison(
        dp in proptest::collection::vec(-3.0f64..3.0, 3),
        dt in proptest::collection::vec(-3.0f64..3.0, 3),
    ) {
        let delta_pi = DVector::from_column_slice(&dp);
        let delta_tilde = DVector::from_column_slice(&dt);
        let gap = (&delta_tilde + &delta_pi).norm_squared() - delta_tilde.norm_squared();
        prop_assume!(gap.abs() > 1e-9);
        prop_assert_eq!(halfspace_test(&delta_pi, &delta_tilde), gap >= 0.0);
    }

    #[test]
    fn adding_a_reducing_atom_never_lowers_the_estimate(
        ts in proptest::collection::vec(-2.0f64..2.0, 1..40),
        extra in -2.0f64..2.0,
    ) {
        let spec = registry_get("parabola").unwrap();
        let (_, p) = projection(&[0.2, 1.4]);
        let atoms = parabola_atoms(&ts);
        let base = theorem3_estimate(&spec, &p, &atoms, None, 0.05).unwrap();
        let mut more = atoms.clone();
        more.push(parabola_atoms(&[extra])[0].clone());
        let grown = theorem3_estimate(&spec, &p, &more, None, 0.05).unwrap();
        let hit = halfspace_test(&p.delta_pi, &(&more[more.len() - 1] - &p.z_tilde));
        prop_assert_eq!(grown.k, base.k + usize::from(hit));
        if hit {
            prop_assert!(grown.e >= base.e);
        } else {
            prop_assert!(grown.e <= base.e);
        }
        prop_assert!(base.lower.unwrap() <= base.e && base.e <= base.upper.unwrap());
    }

    #[test]
    fn estimate_is_invariant_to_atom_order(ts in proptest::collection::vec(-2.0f64..2.0, 2..30), rot in 0usize..30) {
        let spec = registry_get("parabola").unwrap();
        let (_, p) = projection(&[-0.3, 0.9]);
        let atoms = parabola_atoms(&ts);
        let mut rotated = atoms.clone();
        rotated.rotate_left(rot % atoms.len());
        prop_assert_eq!(
            theorem3_estimate(&spec, &p, &atoms, None, 0.05).unwrap(),
            theorem3_estimate(&spec, &p, &rotated, None, 0.05).unwrap()
        );
    }
}
