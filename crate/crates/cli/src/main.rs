//! `nlrecon` command-line interface.
//!
//! Exit codes: 0 success (converged / guaranteed reduction), 1 error,
//! 2 projection did not converge, 3 theorem not applicable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use nlrecon::experiments::{applicability_study, run_study, write_outputs, DgpConfig, StudyConfig};
use nlrecon::guarantees::{Theorem, Verdict};
use nlrecon::projector::NewtonMode;
use nlrecon::{
    batch_project, corollary1_check, load_manifold, project, registry_get, registry_names, theorem1_check,
    theorem2b_check, theorem3_estimate, Error, ManifoldSpec, Metric, ProjectionResult, SolverOptions,
    SCHEMA_VERSION,
};

const EXIT_ERROR: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_NOT_APPLICABLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "nlrecon", version, about = "Nonlinear forecast reconciliation")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result to this path (a directory for `study`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Study configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    AsPrinted,
}

#[derive(Debug, clap::Args)]
struct Target {
    /// Registry name or path to a custom-manifold JSON file.
    #[arg(long)]
    manifold: String,
    /// Comma-separated coordinates of the forecast.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, value_enum)]
    newton_mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project a forecast onto a manifold.
    Project {
        #[command(flatten)]
        target: Target,
        /// CSV file with the n x n weight matrix.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Check a sufficient condition for error reduction.
    Check {
        #[command(flatten)]
        target: Target,
        /// One of 1, c1, 2b.
        #[arg(long)]
        theorem: String,
    },
    /// Estimate the probability of error reduction from predictive samples.
    Estimate {
        #[command(flatten)]
        target: Target,
        /// CSV file of unreconciled predictive samples, one per row.
        #[arg(long)]
        atoms: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Condition-hold and reduction rates under isotropic noise.
    Applicability {
        #[arg(long)]
        manifold: String,
        /// Comma-separated noise levels.
        #[arg(long, default_value = "0.1,0.3,0.5,0.7")]
        sigmas: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// AR coefficient of the latent sampler.
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Innovation standard deviation of the latent sampler.
        #[arg(long, default_value_t = 1.0)]
        latent_sigma: f64,
    },
    /// Run a randomized study from `--config` and write CSV outputs to `--out`.
    Study,
    /// List registry manifolds.
    ListManifolds,
}

fn parse_point(s: &str) -> Result<DVector<f64>> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("invalid coordinate `{v}`")))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // A non-numeric first row is a header.
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", path.display(), i + 1),
        }
    }
    Ok(rows)
}

fn solver_options(cli: &Cli, target: &Target) -> SolverOptions {
    let mut opts = SolverOptions::default();
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    if let Some(r) = target.restarts {
        opts.restarts = r;
    }
    if let Some(mode) = target.newton_mode {
        opts.newton_mode = match mode {
            Mode::Full => NewtonMode::Full,
            Mode::AsPrinted => NewtonMode::AsPrinted,
        };
    }
    opts
}

fn load(target: &Target) -> Result<(ManifoldSpec, DVector<f64>)> {
    let spec = load_manifold(&target.manifold)?;
    let point = parse_point(&target.point)?;
    if point.len() != spec.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim,
            got: point.len(),
        }
        .into());
    }
    Ok((spec, point))
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn projection_json(spec: &ManifoldSpec, z_hat: &DVector<f64>, r: &ProjectionResult) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "manifold": spec.name,
        "z_hat": vec_json(z_hat),
        "z_tilde": vec_json(&r.z_tilde),
        "lambda": vec_json(&r.lambda),
        "delta_pi": vec_json(&r.delta_pi),
        "iterations": r.iterations,
        "converged": r.converged,
        "feas_residual": r.feas_residual,
        "stat_residual": r.stat_residual,
        "distance": r.distance,
        "local_minimum": r.local_minimum,
    })
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn emit_json(cli: &Cli, value: &impl Serialize) -> Result<()> {
    if cli.format != Format::Json {
        bail!("this command only supports --format json");
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(cli, &text)
}

fn cmd_project(cli: &Cli, target: &Target, weights: Option<&Path>) -> Result<u8> {
    let (spec, z_hat) = load(target)?;
    let metric = match weights {
        None => Metric::Identity,
        Some(path) => {
            let rows = read_rows(path)?;
            let n = spec.ambient_dim;
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                bail!("weight matrix must be {n}x{n}");
            }
            Metric::Weighted(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
    };
    match project(&spec, &z_hat, &metric, &solver_options(cli, target)) {
        Ok(r) => {
            emit_json(cli, &projection_json(&spec, &z_hat, &r))?;
            Ok(0)
        }
        Err(Error::NonConvergence { best }) => {
            emit_json(cli, &projection_json(&spec, &z_hat, &best))?;
            eprintln!("error: projection did not converge");
            Ok(EXIT_NONCONVERGENCE)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_check(cli: &Cli, target: &Target, theorem: &str) -> Result<u8> {
    let theorem = Theorem::parse(theorem).ok_or_else(|| anyhow!("unknown theorem `{theorem}`; use 1, c1 or 2b"))?;
    let (spec, z_hat) = load(target)?;
    let proj = project(&spec, &z_hat, &Metric::Identity, &solver_options(cli, target))?;
    let verdict = match theorem {
        Theorem::T1 => theorem1_check(&spec, &z_hat, &proj),
        Theorem::C1 => corollary1_check(&spec, &z_hat, &proj),
        Theorem::T2b => theorem2b_check(&spec, &z_hat, &proj),
    }?;
    let out = json!({
        "schema_version": SCHEMA_VERSION,
        "manifold": spec.name,
        "theorem": verdict.theorem,
        "verdict": verdict.verdict,
        "clause": verdict.clause,
        "diagnostics": verdict.diagnostics,
        "z_tilde": vec_json(&proj.z_tilde),
        "distance": proj.distance,
    });
    emit_json(cli, &out)?;
    Ok(match verdict.verdict {
        Verdict::GuaranteedReduction => 0,
        Verdict::NotApplicable => EXIT_NOT_APPLICABLE,
    })
}

fn cmd_estimate(cli: &Cli, target: &Target, atoms: &Path, alpha: f64) -> Result<u8> {
    let (spec, z_hat) = load(target)?;
    let opts = solver_options(cli, target);
    let rows = read_rows(atoms)?;
    if rows.is_empty() {
        bail!("{}: no atoms", atoms.display());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != spec.ambient_dim) {
        bail!("{}: row {} has {} values, expected {}", atoms.display(), i + 1, rows[i].len(), spec.ambient_dim);
    }
    let raw: Vec<DVector<f64>> = rows.into_iter().map(DVector::from_vec).collect();
    let proj = project(&spec, &z_hat, &Metric::Identity, &opts)?;
    let projected = batch_project(&spec, &raw, &Metric::Identity, &opts);
    let failed = projected.iter().filter(|r| r.is_err()).count();
    let reconciled: Vec<DVector<f64>> = projected.into_iter().filter_map(|r| r.ok().map(|p| p.z_tilde)).collect();
    let est = theorem3_estimate(&spec, &proj, &reconciled, None, alpha)?;
    let out = json!({
        "schema_version": SCHEMA_VERSION,
        "manifold": spec.name,
        "e": est.e,
        "lower": est.lower,
        "upper": est.upper,
        "k": est.k,
        "S": est.s,
        "alpha": est.alpha,
        "weighted": est.weighted,
        "atoms_failed": failed,
    });
    emit_json(cli, &out)?;
    Ok(0)
}

fn cmd_applicability(
    cli: &Cli,
    manifold: &str,
    sigmas: &str,
    n: usize,
    theta: f64,
    latent_sigma: f64,
) -> Result<u8> {
    let spec = load_manifold(manifold)?;
    let levels = parse_point(sigmas).context("invalid --sigmas")?;
    let dgp = DgpConfig {
        theta1: theta,
        theta2: theta,
        sigma: latent_sigma,
        t: n,
        seed: cli.seed.unwrap_or(0),
    };
    let opts = SolverOptions {
        seed: dgp.seed,
        ..Default::default()
    };
    let rows = applicability_study(&spec, levels.as_slice(), n, &dgp, &opts)?;
    match cli.format {
        Format::Json => emit_json(
            cli,
            &json!({"schema_version": SCHEMA_VERSION, "manifold": spec.name, "rows": rows}),
        )?,
        Format::Csv => {
            let mut text = String::from("sigma,n_used,n_failed,condition_rate,reduction_rate\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.sigma, r.n_used, r.n_failed, r.condition_rate, r.reduction_rate
                ));
            }
            emit(cli, &text)?;
        }
    }
    Ok(0)
}

fn cmd_study(cli: &Cli) -> Result<u8> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("study needs --config <path>"))?;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut config = StudyConfig::from_json(&text)?;
    if config.manifold.ends_with(".json") && Path::new(&config.manifold).is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        config.manifold = base.join(&config.manifold).to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("study-out"));
    let report = run_study(&config)?;
    let manifest = write_outputs(&report, &out)?;
    for row in report.tables.iter().filter(|t| t.study == "all") {
        eprintln!(
            "{}: {} test points, {} failed, reduction {:.3}, theorem {:.3}, false positives {:.3}",
            row.manifold, row.n_test, row.n_failed, row.reduction_rate, row.theorem_rate, row.fp_rate
        );
    }
    eprintln!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(0)
}

fn cmd_list(cli: &Cli) -> Result<u8> {
    let entries: Vec<Value> = registry_names()
        .into_iter()
        .map(|name| {
            let spec = registry_get(name).expect("registry entries resolve");
            json!({
                "name": name,
                "ambient_dim": spec.ambient_dim,
                "codim": spec.codim(),
                "convexity": spec.convexity[0],
            })
        })
        .collect();
    match cli.format {
        Format::Json => emit_json(cli, &json!({"schema_version": SCHEMA_VERSION, "manifolds": entries}))?,
        Format::Csv => {
            let mut text = String::from("name,ambient_dim,codim,convexity\n");
            for e in &entries {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    e["name"].as_str().unwrap_or_default(),
                    e["ambient_dim"],
                    e["codim"],
                    e["convexity"].as_str().unwrap_or_default()
                ));
            }
            emit(cli, &text)?;
        }
    }
    Ok(0)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RECON_THREADS") {
        let n: usize = v.parse().with_context(|| format!("RECON_THREADS=`{v}` is not a number"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8> {
    configure_threads()?;
    match &cli.command {
        Command::Project { target, weights } => cmd_project(cli, target, weights.as_deref()),
        Command::Check { target, theorem } => cmd_check(cli, target, theorem),
        Command::Estimate { target, atoms, alpha } => cmd_estimate(cli, target, atoms, *alpha),
        Command::Applicability {
            manifold,
            sigmas,
            n,
            theta,
            latent_sigma,
        } => cmd_applicability(cli, manifold, sigmas, *n, *theta, *latent_sigma),
        Command::Study => cmd_study(cli),
        Command::ListManifolds => cmd_list(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
