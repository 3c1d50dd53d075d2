//! Synthetic studies: data generation, forecasting, predictive sampling and
//! evaluation metrics.

mod dgp;
mod forecast;
mod metrics;
mod study;

pub use dgp::{generate_dataset, latent_series, split_pairs, DgpConfig, Pair, SplitFractions, Splits};
pub use forecast::{
    bootstrap_from_residuals, bootstrap_predictive, calibration_residuals, fit_forecaster, Forecaster, LinearAr,
    Persistence, FORECASTERS,
};
pub use metrics::{
    always_reconcile, applicability_study, apply_strategy, binary_coverage, calibration_curve, default_window,
    frechet_mean_euclidean, oracle_strategy, score_choice, ApplicabilityRow, Scored, StrategyScore,
};
pub use study::{
    run_study, write_outputs, CalibrationRow, Manifest, StrategyRow, StudyConfig, StudyDgp, StudyOutcome,
    StudyRecord, StudyReport, TableRow, OUTPUT_FILES,
};
