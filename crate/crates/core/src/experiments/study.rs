//! Randomized end-to-end studies and their CSV outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dgp::{generate_dataset, split_pairs, DgpConfig, SplitFractions};
use super::forecast::{bootstrap_from_residuals, calibration_residuals, fit_forecaster, Forecaster};
use super::metrics::{
    always_reconcile, apply_strategy, binary_coverage, calibration_curve, default_window, oracle_strategy,
    Scored,
};
use crate::error::{Error, Result};
use crate::guarantees::{corollary1_check, theorem1_check, theorem2b_check, theorem3_estimate};
use crate::manifold::{load_manifold, Convexity, ManifoldSpec};
use crate::projector::{project, Metric, SolverOptions};
use crate::rng::{purpose, stream_key, stream_rng};
use crate::SCHEMA_VERSION;

/// Data-generating parameters of a study; missing thetas are drawn
/// `U[0, 1)` independently for every study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDgp {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: usize,
}

fn default_atoms() -> usize {
    200
}

fn default_alpha() -> f64 {
    0.05
}

fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

fn default_studies() -> usize {
    25
}

fn default_forecaster() -> String {
    "linear-ar".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Registry name or path to a custom-manifold JSON file.
    pub manifold: String,
    pub dgp: StudyDgp,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub splits: SplitFractions,
    /// Bootstrap atoms per test point.
    #[serde(default = "default_atoms", rename = "S")]
    pub atoms: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Calibration window; defaults to `max(50, n / 50)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default = "default_studies")]
    pub studies: usize,
    #[serde(default = "default_forecaster")]
    pub forecaster: String,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (path, theta) in [("dgp.theta1", self.dgp.theta1), ("dgp.theta2", self.dgp.theta2)] {
            if let Some(t) = theta {
                if !(t.abs() <= 1.0) {
                    return Err(config_err(path, "must satisfy |theta| <= 1"));
                }
            }
        }
        if !(self.dgp.sigma > 0.0 && self.dgp.sigma.is_finite()) {
            return Err(config_err("dgp.sigma", "must be positive"));
        }
        if self.dgp.t < 10 {
            return Err(config_err("dgp.T", "must be at least 10"));
        }
        self.splits.validate()?;
        if self.atoms < 2 {
            return Err(config_err("S", "must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("alpha", "must lie in (0, 1)"));
        }
        if let Some(i) = self.thresholds.iter().position(|t| !(0.0..=1.0).contains(t)) {
            return Err(config_err(&format!("thresholds[{i}]"), "must lie in [0, 1]"));
        }
        if self.window == Some(0) {
            return Err(config_err("window", "must be at least 1"));
        }
        if self.studies == 0 {
            return Err(config_err("studies", "must be at least 1"));
        }
        self.solver
            .validate()
            .map_err(|e| config_err("solver", e.to_string()))?;
        Ok(())
    }
}

/// Outcome of one test point.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study: usize,
    pub idx: usize,
    pub z: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub z_tilde: DVector<f64>,
    pub err_hat: f64,
    pub err_til: f64,
    pub e: f64,
    pub e_lo: Option<f64>,
    pub e_hi: Option<f64>,
    pub th1: Option<bool>,
    pub c1: Option<bool>,
    pub th2b: Option<bool>,
    pub improved: bool,
}

impl StudyRecord {
    pub fn scored(&self) -> Scored {
        Scored {
            e: self.e,
            lower: self.e_lo,
            upper: self.e_hi,
            err_hat: self.err_hat,
            err_til: self.err_til,
        }
    }

    /// Verdict of the theorem matching the codimension.
    pub fn theorem_verdict(&self, codim: usize) -> Option<bool> {
        if codim == 1 {
            self.th1
        } else {
            self.th2b
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub study: String,
    pub manifold: String,
    pub sigma: f64,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub n_test: usize,
    pub n_failed: usize,
    pub reduction_rate: f64,
    pub theorem: String,
    pub theorem_rate: f64,
    pub fp_rate: f64,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub t: usize,
    pub e_sorted: f64,
    pub r_nominal: f64,
    pub r_lower: f64,
    pub r_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub study: String,
    pub strategy: String,
    pub theta: Option<f64>,
    pub delta_rel_opt: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub theta1: f64,
    pub theta2: f64,
    pub n_test: usize,
    pub n_failed: usize,
    pub records: Vec<StudyRecord>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub codim: usize,
    pub studies: Vec<StudyOutcome>,
    pub tables: Vec<TableRow>,
    pub calibration: Vec<CalibrationRow>,
    pub strategies: Vec<StrategyRow>,
}

impl StudyReport {
    pub fn records(&self) -> impl Iterator<Item = &StudyRecord> {
        self.studies.iter().flat_map(|s| s.records.iter())
    }
}

fn verdict<T>(check: Result<T>, pass: impl Fn(&T) -> bool) -> Option<bool> {
    check.ok().map(|v| pass(&v))
}

struct PointContext<'a> {
    spec: &'a ManifoldSpec,
    config: &'a StudyConfig,
    forecaster: &'a dyn Forecaster,
    residuals: &'a [DVector<f64>],
    study: usize,
}

impl PointContext<'_> {
    fn solver(&self, keys: &[u64]) -> SolverOptions {
        SolverOptions {
            seed: stream_key(self.config.seed, keys),
            ..self.config.solver.clone()
        }
    }

    fn run(&self, idx: usize, x: &DVector<f64>, z: &DVector<f64>) -> Result<StudyRecord> {
        let (spec, cfg) = (self.spec, self.config);
        let (r, i) = (self.study as u64, idx as u64);
        let z_hat = self.forecaster.predict(x);
        let proj = project(spec, &z_hat, &Metric::Identity, &self.solver(&[purpose::RESTART, r, i]))?;

        let mut rng = stream_rng(cfg.seed, &[purpose::BOOTSTRAP, r, i]);
        let raw = bootstrap_from_residuals(&z_hat, self.residuals, cfg.atoms, &mut rng)?;
        let atoms: Vec<DVector<f64>> = raw
            .iter()
            .enumerate()
            .filter_map(|(j, a)| {
                let opts = self.solver(&[purpose::RESTART, r, i, j as u64 + 1]);
                project(spec, a, &Metric::Identity, &opts).ok().map(|p| p.z_tilde)
            })
            .collect();
        if atoms.len() < 2 {
            return Err(Error::invalid("fewer than two atoms could be reconciled"));
        }
        if atoms.len() < raw.len() {
            log::debug!("study {r} point {i}: {} of {} atoms failed", raw.len() - atoms.len(), raw.len());
        }
        let est = theorem3_estimate(spec, &proj, &atoms, None, cfg.alpha)?;

        let hypersurface = spec.codim() == 1;
        let known = spec.uniform_convexity().is_some_and(|c| c != Convexity::Unknown);
        let th1 = hypersurface
            .then(|| verdict(theorem1_check(spec, &z_hat, &proj), |v| v.is_guaranteed()))
            .flatten();
        let c1 = (hypersurface && known)
            .then(|| verdict(corollary1_check(spec, &z_hat, &proj), |v| v.is_guaranteed()))
            .flatten();
        let th2b = known
            .then(|| verdict(theorem2b_check(spec, &z_hat, &proj), |v| v.is_guaranteed()))
            .flatten();

        let err_hat = (z - &z_hat).norm();
        let err_til = (z - &proj.z_tilde).norm();
        Ok(StudyRecord {
            study: self.study,
            idx,
            z: z.clone(),
            z_hat,
            z_tilde: proj.z_tilde,
            err_hat,
            err_til,
            e: est.e,
            e_lo: est.lower,
            e_hi: est.upper,
            th1,
            c1,
            th2b,
            improved: err_hat >= err_til,
        })
    }
}

fn run_one(spec: &ManifoldSpec, config: &StudyConfig, study: usize) -> Result<StudyOutcome> {
    let r = study as u64;
    let mut params = stream_rng(config.seed, &[purpose::PARAMS, r]);
    let draw1: f64 = params.random();
    let draw2: f64 = params.random();
    let theta1 = config.dgp.theta1.unwrap_or(draw1);
    let theta2 = config.dgp.theta2.unwrap_or(draw2);
    let dgp = DgpConfig {
        theta1,
        theta2,
        sigma: config.dgp.sigma,
        t: config.dgp.t,
        seed: stream_key(config.seed, &[purpose::DGP, r]),
    };
    let series = generate_dataset(spec, &dgp)?;
    let splits = split_pairs(&series, &config.splits, config.seed, &[purpose::SHUFFLE, r])?;
    let forecaster = fit_forecaster(&splits.train, &config.forecaster)?;
    let residuals = calibration_residuals(forecaster.as_ref(), &splits.calibration);
    let ctx = PointContext {
        spec,
        config,
        forecaster: forecaster.as_ref(),
        residuals: &residuals,
        study,
    };
    let results: Vec<Result<StudyRecord>> = splits
        .test
        .par_iter()
        .enumerate()
        .map(|(idx, (x, z))| ctx.run(idx, x, z))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut n_failed = 0;
    for (idx, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("study {study} point {idx} failed: {e}");
                n_failed += 1;
            }
        }
    }
    Ok(StudyOutcome {
        theta1,
        theta2,
        n_test: splits.test.len(),
        n_failed,
        records,
    })
}

fn table_row(
    label: String,
    spec: &ManifoldSpec,
    config: &StudyConfig,
    thetas: Option<(f64, f64)>,
    n_test: usize,
    n_failed: usize,
    records: &[&StudyRecord],
) -> TableRow {
    let n = records.len();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let codim = spec.codim();
    let guaranteed = |r: &&&StudyRecord| r.theorem_verdict(codim) == Some(true);
    let scored: Vec<Scored> = records.iter().map(|r| r.scored()).collect();
    TableRow {
        study: label,
        manifold: spec.name.clone(),
        sigma: config.dgp.sigma,
        theta1: thetas.map(|t| t.0),
        theta2: thetas.map(|t| t.1),
        n_test,
        n_failed,
        reduction_rate: frac(records.iter().filter(|r| r.improved).count()),
        theorem: if codim == 1 { "1" } else { "2b" }.into(),
        theorem_rate: frac(records.iter().filter(guaranteed).count()),
        fp_rate: frac(records.iter().filter(guaranteed).filter(|r| r.err_til > r.err_hat).count()),
        coverage: binary_coverage(&scored).ok(),
    }
}

fn strategy_rows(label: &str, config: &StudyConfig, records: &[Scored]) -> Vec<StrategyRow> {
    let row = |strategy: &str, theta: Option<f64>, s: super::metrics::StrategyScore| StrategyRow {
        study: label.to_string(),
        strategy: strategy.into(),
        theta,
        delta_rel_opt: s.delta_rel_opt,
        degenerate: s.degenerate,
    };
    let mut rows: Vec<StrategyRow> = config
        .thresholds
        .iter()
        .map(|&t| row("threshold", Some(t), apply_strategy(records, t)))
        .collect();
    rows.push(row("always", None, always_reconcile(records)));
    rows.push(row("never", None, apply_strategy(records, 1.0)));
    rows.push(row("oracle", None, oracle_strategy(records)));
    rows
}

/// Runs every study of `config` and aggregates the results.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let spec = load_manifold(&config.manifold)?;
    if spec.lift.is_none() {
        return Err(config_err("manifold", "studies need a manifold defined by graphs"));
    }
    let studies: Vec<StudyOutcome> = (0..config.studies)
        .into_par_iter()
        .map(|r| run_one(&spec, config, r))
        .collect::<Result<_>>()?;

    let mut tables = Vec::new();
    let mut strategies = Vec::new();
    for (r, s) in studies.iter().enumerate() {
        let recs: Vec<&StudyRecord> = s.records.iter().collect();
        tables.push(table_row(r.to_string(), &spec, config, Some((s.theta1, s.theta2)), s.n_test, s.n_failed, &recs));
        let scored: Vec<Scored> = s.records.iter().map(|r| r.scored()).collect();
        strategies.extend(strategy_rows(&r.to_string(), config, &scored));
    }
    let all: Vec<&StudyRecord> = studies.iter().flat_map(|s| s.records.iter()).collect();
    let n_test = studies.iter().map(|s| s.n_test).sum();
    let n_failed = studies.iter().map(|s| s.n_failed).sum();
    tables.push(table_row("all".into(), &spec, config, None, n_test, n_failed, &all));
    let scored: Vec<Scored> = all.iter().map(|r| r.scored()).collect();
    strategies.extend(strategy_rows("all", config, &scored));

    let calibration = calibration_rows(&scored, config.window)?;
    Ok(StudyReport {
        config: config.clone(),
        codim: spec.codim(),
        studies,
        tables,
        calibration,
        strategies,
    })
}

fn calibration_rows(scored: &[Scored], window: Option<usize>) -> Result<Vec<CalibrationRow>> {
    let bounded: Vec<&Scored> = scored.iter().filter(|s| s.lower.is_some() && s.upper.is_some()).collect();
    if bounded.is_empty() {
        return Ok(Vec::new());
    }
    let w = window.unwrap_or_else(|| default_window(bounded.len()));
    let curve = |key: fn(&Scored) -> f64| {
        let pairs: Vec<(f64, bool)> = bounded.iter().map(|s| (key(s), s.improved())).collect();
        calibration_curve(&pairs, w)
    };
    let nominal = curve(|s| s.e)?;
    let lower = curve(|s| s.lower.unwrap_or(0.0))?;
    let upper = curve(|s| s.upper.unwrap_or(1.0))?;
    Ok((0..nominal.len())
        .map(|t| CalibrationRow {
            t,
            e_sorted: nominal[t].0,
            r_nominal: nominal[t].1,
            r_lower: lower[t].1,
            r_upper: upper[t].1,
        })
        .collect())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn flag(v: Option<bool>) -> String {
    match v {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    }
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedStudy {
    pub study: usize,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: StudyConfig,
    pub studies: Vec<ResolvedStudy>,
    /// SHA-256 of every written file.
    pub files: BTreeMap<String, String>,
}

pub const OUTPUT_FILES: [&str; 4] = ["records.csv", "tables.csv", "calibration.csv", "strategies.csv"];

/// Writes the four CSV files and `manifest.json` into `dir`.
pub fn write_outputs(report: &StudyReport, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let n = report.records().next().map_or(0, |r| r.z.len());
    let mut header: Vec<String> = vec!["study".into(), "idx".into()];
    for prefix in ["z", "zhat", "ztil"] {
        header.extend((1..=n).map(|j| format!("{prefix}{j}")));
    }
    header.extend(
        ["err_hat", "err_til", "e", "e_lo", "e_hi", "th1", "c1", "th2b", "improved"]
            .iter()
            .map(|s| s.to_string()),
    );
    write_csv(
        &dir.join("records.csv"),
        header,
        report.records().map(|r| {
            let mut row = vec![r.study.to_string(), r.idx.to_string()];
            for v in [&r.z, &r.z_hat, &r.z_tilde] {
                row.extend(v.iter().map(|x| num(*x)));
            }
            row.extend([
                num(r.err_hat),
                num(r.err_til),
                num(r.e),
                opt_num(r.e_lo),
                opt_num(r.e_hi),
                flag(r.th1),
                flag(r.c1),
                flag(r.th2b),
                flag(Some(r.improved)),
            ]);
            row
        }),
    )?;

    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    write_csv(
        &dir.join("tables.csv"),
        cols(&[
            "study", "manifold", "sigma", "theta1", "theta2", "n_test", "n_failed", "reduction_rate", "theorem",
            "theorem_rate", "fp_rate", "coverage",
        ]),
        report.tables.iter().map(|t| {
            vec![
                t.study.clone(),
                t.manifold.clone(),
                num(t.sigma),
                opt_num(t.theta1),
                opt_num(t.theta2),
                t.n_test.to_string(),
                t.n_failed.to_string(),
                num(t.reduction_rate),
                t.theorem.clone(),
                num(t.theorem_rate),
                num(t.fp_rate),
                opt_num(t.coverage),
            ]
        }),
    )?;
    write_csv(
        &dir.join("calibration.csv"),
        cols(&["t", "e_sorted", "r_nominal", "r_lower", "r_upper"]),
        report.calibration.iter().map(|c| {
            vec![c.t.to_string(), num(c.e_sorted), num(c.r_nominal), num(c.r_lower), num(c.r_upper)]
        }),
    )?;
    write_csv(
        &dir.join("strategies.csv"),
        cols(&["study", "strategy", "theta", "delta_rel_opt", "degenerate"]),
        report.strategies.iter().map(|s| {
            vec![
                s.study.clone(),
                s.strategy.clone(),
                opt_num(s.theta),
                num(s.delta_rel_opt),
                flag(Some(s.degenerate)),
            ]
        }),
    )?;

    let mut files = BTreeMap::new();
    for name in OUTPUT_FILES {
        let bytes = fs::read(dir.join(name))?;
        files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: report.config.seed,
        config: report.config.clone(),
        studies: report
            .studies
            .iter()
            .enumerate()
            .map(|(study, s)| ResolvedStudy {
                study,
                theta1: s.theta1,
                theta2: s.theta2,
            })
            .collect(),
        files,
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}
