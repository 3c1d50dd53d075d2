//! Synthetic coherent data: an AR(1) latent process lifted through graphs.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;
use crate::rng::{purpose, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub theta1: f64,
    pub theta2: f64,
    /// Innovation standard deviation.
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(v.abs() <= 1.0) {
                return Err(Error::Config {
                    path: format!("dgp.{name}"),
                    message: "must satisfy |theta| <= 1".into(),
                });
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config {
                path: "dgp.sigma".into(),
                message: "must be positive".into(),
            });
        }
        if self.t == 0 {
            return Err(Error::Config {
                path: "dgp.T".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    fn theta(&self, coord: usize) -> f64 {
        if coord.is_multiple_of(2) {
            self.theta1
        } else {
            self.theta2
        }
    }
}

/// `T` samples of the latent recursion `w_t = theta w_{t-1} + sigma eps_t`,
/// one independent chain per base coordinate (thetas alternate
/// `theta1, theta2, ...`). Chains with `|theta| < 1` start from their
/// stationary law, the others from zero.
pub fn latent_series(dgp: &DgpConfig, base_dim: usize) -> Result<Vec<DVector<f64>>> {
    dgp.validate()?;
    let mut rng = stream_rng(dgp.seed, &[purpose::DGP]);
    let innovation = Normal::new(0.0, dgp.sigma).expect("sigma validated");
    let mut state = DVector::from_fn(base_dim, |j, _| {
        let theta = dgp.theta(j);
        if theta.abs() < 1.0 {
            innovation.sample(&mut rng) / (1.0 - theta * theta).sqrt()
        } else {
            0.0
        }
    });
    let mut out = Vec::with_capacity(dgp.t);
    for step in 0..dgp.t {
        if step > 0 {
            for j in 0..base_dim {
                state[j] = dgp.theta(j) * state[j] + innovation.sample(&mut rng);
            }
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Coherent time series `z^t` on a graph-lifted manifold.
pub fn generate_dataset(spec: &ManifoldSpec, dgp: &DgpConfig) -> Result<Vec<DVector<f64>>> {
    let lift = spec
        .lift
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("manifold `{}` has no graph lift", spec.name)))?;
    Ok(latent_series(dgp, lift.base_dim)?
        .iter()
        .map(|w| lift.lift(w.as_slice()))
        .collect())
}

/// Supervised pair `(z^t, z^{t+1})`.
pub type Pair = (DVector<f64>, DVector<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.10,
            calibration: 0.40,
            test: 0.50,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config {
                path: "splits".into(),
                message: "fractions must be positive and sum to 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Pair>,
    pub calibration: Vec<Pair>,
    pub test: Vec<Pair>,
}

/// Forms consecutive pairs, shuffles them with the `(seed, keys)` stream and
/// cuts them into train / calibration / test.
pub fn split_pairs(series: &[DVector<f64>], fractions: &SplitFractions, seed: u64, keys: &[u64]) -> Result<Splits> {
    fractions.validate()?;
    let mut pairs: Vec<Pair> = series.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    let mut rng = stream_rng(seed, keys);
    pairs.shuffle(&mut rng);
    let n = pairs.len();
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_cal = ((fractions.calibration * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_cal == 0 || n_train + n_cal >= n {
        return Err(Error::invalid(format!("{n} pairs are too few to split")));
    }
    let test = pairs.split_off(n_train + n_cal);
    let calibration = pairs.split_off(n_train);
    Ok(Splits {
        train: pairs,
        calibration,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::registry_get;

    fn cfg(theta: f64, t: usize) -> DgpConfig {
        DgpConfig {
            theta1: theta,
            theta2: theta,
            sigma: 1.0,
            t,
            seed: 11,
        }
    }

    #[test]
    fn stationary_variance() {
        let w = latent_series(&cfg(0.5, 100_000), 2).unwrap();
        for j in 0..2 {
            let var = w.iter().map(|v| v[j] * v[j]).sum::<f64>() / w.len() as f64;
            let expected = 1.0 / (1.0 - 0.25);
            assert!((var / expected - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn white_noise_when_theta_is_zero() {
        let w = latent_series(&cfg(0.0, 50_000), 1).unwrap();
        let lag1 = w.windows(2).map(|p| p[0][0] * p[1][0]).sum::<f64>() / w.len() as f64;
        assert!(lag1.abs() < 0.03);
    }

    #[test]
    fn dataset_is_coherent_and_reproducible() {
        let spec = registry_get("bowl-sin").unwrap();
        let a = generate_dataset(&spec, &cfg(0.3, 500)).unwrap();
        let b = generate_dataset(&spec, &cfg(0.3, 500)).unwrap();
        assert_eq!(a, b);
        for z in &a {
            assert!(spec.eval_f(z).unwrap().amax() <= 1e-12);
        }
    }

    #[test]
    fn splits_partition_pairs() {
        let spec = registry_get("paraboloid").unwrap();
        let data = generate_dataset(&spec, &cfg(0.3, 1001)).unwrap();
        let s = split_pairs(&data, &SplitFractions::default(), 1, &[2]).unwrap();
        assert_eq!((s.train.len(), s.calibration.len(), s.test.len()), (100, 400, 500));
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = cfg(1.5, 10);
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        c.theta1 = 0.1;
        c.sigma = 0.0;
        assert!(c.validate().is_err());
    }
}
