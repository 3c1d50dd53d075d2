//! Point forecasters and bootstrap predictive distributions.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;

use super::dgp::Pair;
use crate::error::{Error, Result};

/// One-step-ahead point forecaster `z^t -> z^{t+1}`.
pub trait Forecaster: Send + Sync + fmt::Debug {
    fn predict(&self, z: &DVector<f64>) -> DVector<f64>;
}

/// `z^{t+1} = z^t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Forecaster for Persistence {
    fn predict(&self, z: &DVector<f64>) -> DVector<f64> {
        z.clone()
    }
}

/// Per-coordinate regression `z_j^{t+1} = intercept_j + slope_j z_j^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAr {
    pub intercept: DVector<f64>,
    pub slope: DVector<f64>,
}

impl LinearAr {
    /// Least-squares fit. Coordinates whose regressor has (numerically) zero
    /// variance fall back to persistence.
    pub fn fit(train: &[Pair]) -> Result<Self> {
        let (first, _) = train.first().ok_or_else(|| Error::invalid("training split is empty"))?;
        let n = first.len();
        let count = train.len() as f64;
        let mut intercept = DVector::zeros(n);
        let mut slope = DVector::from_element(n, 1.0);
        for j in 0..n {
            let mx = train.iter().map(|(x, _)| x[j]).sum::<f64>() / count;
            let my = train.iter().map(|(_, y)| y[j]).sum::<f64>() / count;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for (x, y) in train {
                let dx = x[j] - mx;
                sxx += dx * dx;
                sxy += dx * (y[j] - my);
            }
            let scale = train.iter().map(|(x, _)| x[j] * x[j]).sum::<f64>().max(f64::MIN_POSITIVE);
            if sxx <= 1e-12 * scale || !sxx.is_finite() {
                log::warn!("linear-ar: coordinate {j} has a degenerate regressor, using persistence");
                continue;
            }
            slope[j] = sxy / sxx;
            intercept[j] = my - slope[j] * mx;
        }
        Ok(Self { intercept, slope })
    }
}

impl Forecaster for LinearAr {
    fn predict(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.intercept + self.slope.component_mul(z)
    }
}

pub const FORECASTERS: &[&str] = &["persistence", "linear-ar"];

/// Builds a built-in forecaster by id.
pub fn fit_forecaster(train: &[Pair], id: &str) -> Result<Box<dyn Forecaster>> {
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    match id {
        "persistence" => Ok(Box::new(Persistence)),
        "linear-ar" => Ok(Box::new(LinearAr::fit(train)?)),
        other => Err(Error::invalid(format!(
            "unknown forecaster `{other}`; available: {}",
            FORECASTERS.join(", ")
        ))),
    }
}

/// One-step residuals `z^{t+1} - predict(z^t)` on a calibration split.
pub fn calibration_residuals(forecaster: &dyn Forecaster, calibration: &[Pair]) -> Vec<DVector<f64>> {
    calibration.iter().map(|(x, y)| y - forecaster.predict(x)).collect()
}

/// `s` equal-weight atoms `point + r_u`, with whole residual vectors drawn
/// uniformly with replacement.
pub fn bootstrap_from_residuals<R: Rng + ?Sized>(
    point: &DVector<f64>,
    residuals: &[DVector<f64>],
    s: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if s < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 atoms"));
    }
    if residuals.is_empty() {
        return Err(Error::invalid("calibration split is empty"));
    }
    Ok((0..s)
        .map(|_| point + &residuals[rng.random_range(0..residuals.len())])
        .collect())
}

/// Bootstrap predictive distribution of `z^{t+1}` given `z_t`.
pub fn bootstrap_predictive<R: Rng + ?Sized>(
    forecaster: &dyn Forecaster,
    calibration: &[Pair],
    z_t: &DVector<f64>,
    s: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let residuals = calibration_residuals(forecaster, calibration);
    bootstrap_from_residuals(&forecaster.predict(z_t), &residuals, s, rng)
}
