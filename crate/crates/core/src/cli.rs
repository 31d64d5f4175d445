//! Command-line front end: simulate, fit, cv, evaluate and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{select, CvConfig, CvResult, WeightMode};
use crate::data::SurvivalDataset;
use crate::error::LrCoxError;
use crate::io::{
    predictor_diff, read_coefficients, read_json, read_matrix_csv, write_coefficients,
    write_dataset_bundle, write_json, write_matrix_csv, DataSplit, LoadedManifest,
};
use crate::likelihood::TieMode;
use crate::matrix::{factorize, ConstraintPair};
use crate::methods::{run_method, Method, MethodFit, MethodOptions, Tuning};
use crate::metrics::{evaluate, factor_transfer, MetricReport};
use crate::sim::{generate_benchmark, SimulationSpec};
use crate::solver::{FitConfig, HessianMode, Termination};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RHO_CAP: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "LRCOX_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

/// Reads a settings file; an unreadable or malformed file is a configuration error.
fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    read_json(path).map_err(|e| CliError::config(e.to_string()))
}

impl From<LrCoxError> for CliError {
    fn from(e: LrCoxError) -> Self {
        let code = match &e {
            LrCoxError::InvalidArgument { .. } => EXIT_CONFIG,
            LrCoxError::DimensionMismatch(_)
            | LrCoxError::NonFinite(_)
            | LrCoxError::Data(_)
            | LrCoxError::CrossValidation(_)
            | LrCoxError::Io { .. }
            | LrCoxError::Csv { .. }
            | LrCoxError::Json { .. } => EXIT_DATA,
            LrCoxError::Singular(_) | LrCoxError::NonFiniteObjective { .. } => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lrcox", version, about = "Sparse reduced-rank Cox regression for multiple populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once per process
pub enum Command {
    /// Generate a synthetic train/validation/test dataset with known truth.
    Simulate(SimulateArgs),
    /// Fit one estimator to the training data of a manifest.
    Fit(FitArgs),
    /// Select (s, r) by K-fold cross-validation and refit.
    Cv(CvArgs),
    /// Compute metrics of a fitted model on test data.
    Evaluate(EvaluateArgs),
    /// Repeat simulate -> fit -> evaluate and summarize.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Resolved spec JSON (as written by `simulate`); flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub populations: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r_star: Option<usize>,
    #[arg(long)]
    pub s_star: Option<usize>,
    /// Training sizes, repeated over populations (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub n_pattern: Option<Vec<usize>>,
    #[arg(long)]
    pub n_validation: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub corr_decay: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SimArgs {
    pub fn resolve(&self) -> CliResult<SimulationSpec> {
        let mut spec = match &self.spec {
            Some(path) => read_config::<SimulationSpec>(path)?,
            None => SimulationSpec::default(),
        };
        if let Some(j) = self.populations {
            spec = spec.with_populations(j);
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field.clone() { spec.$field = v; })* };
        }
        set!(p, r_star, s_star, n_pattern, n_validation, n_test, tau, corr_decay, alpha, seed);
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(CliError::config(format!("invalid simulation settings: {}", problems.join("; "))));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HessianChoice {
    Taylor,
    Uniform,
}

/// Every solver setting; the JSON form is accepted by `--config` and echoed
/// into artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub mu: f64,
    pub rank: Option<usize>,
    pub sparsity: Option<usize>,
    pub rho0: f64,
    pub incr: f64,
    pub kmax: usize,
    pub eps: f64,
    pub obj_tol: f64,
    pub max_rho_steps: usize,
    pub tie_mode: TieMode,
    pub hessian: HessianChoice,
    pub phi: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub convex_max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = FitConfig::new(ConstraintPair::new(1, 1, 1, 1).expect("valid"), 0.1);
        Self {
            mu: base.mu,
            rank: None,
            sparsity: None,
            rho0: base.rho0,
            incr: base.incr_factor,
            kmax: base.k_max,
            eps: base.feas_tol,
            obj_tol: base.obj_tol,
            max_rho_steps: base.max_rho_steps,
            tie_mode: TieMode::default(),
            hessian: HessianChoice::Taylor,
            phi: None,
            lambda: None,
            gamma: None,
            convex_max_iters: MethodOptions::default().convex_max_iters,
        }
    }
}

impl SolverSettings {
    /// Builds the solver configuration, listing every invalid setting.
    pub fn fit_config(&self, p: usize, populations: usize) -> CliResult<FitConfig> {
        let rank = self.rank.unwrap_or(p.min(populations));
        let sparsity = self.sparsity.unwrap_or(p);
        let mut cfg = FitConfig::new(
            ConstraintPair {
                max_rank: rank,
                max_rows: sparsity,
            },
            self.mu,
        );
        cfg.rho0 = self.rho0;
        cfg.incr_factor = self.incr;
        cfg.k_max = self.kmax;
        cfg.feas_tol = self.eps;
        cfg.obj_tol = self.obj_tol;
        cfg.max_rho_steps = self.max_rho_steps;
        cfg.tie_mode = self.tie_mode;
        cfg.hessian_mode = match self.hessian {
            HessianChoice::Taylor => HessianMode::TaylorDiagonal,
            HessianChoice::Uniform => HessianMode::UniformBound(self.phi),
        };
        let mut problems = cfg.problems(p, populations);
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    problems.push(format!("--{name} must be nonnegative, got {v}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::config(format!("invalid solver settings: {}", problems.join("; "))))
        }
    }

    pub fn method_options(&self) -> MethodOptions {
        MethodOptions {
            lambda: self.lambda,
            gamma: self.gamma,
            convex_max_iters: self.convex_max_iters,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// JSON file with solver settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub incr: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Feasibility tolerance on both squared distances.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub obj_tol: Option<f64>,
    #[arg(long)]
    pub max_rho_steps: Option<usize>,
    /// `standard-breslow` or `per-event-weight`.
    #[arg(long)]
    pub tie_mode: Option<TieMode>,
    #[arg(long, value_enum)]
    pub hessian: Option<HessianChoice>,
    /// Uniform curvature bound (with `--hessian uniform`); automatic if absent.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Fixed lambda for separate and convex fits.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fixed gamma for the convex fit.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub convex_max_iters: Option<usize>,
}

impl SolverArgs {
    pub fn resolve(&self) -> CliResult<SolverSettings> {
        let mut s = match &self.config {
            Some(path) => read_config::<SolverSettings>(path)?,
            None => SolverSettings::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { s.$field = v; })* };
        }
        set!(mu, rho0, incr, kmax, eps, obj_tol, max_rho_steps, tie_mode, hessian, convex_max_iters);
        macro_rules! set_opt {
            ($($field:ident),*) => { $(if self.$field.is_some() { s.$field = self.$field; })* };
        }
        set_opt!(rank, sparsity, phi, lambda, gamma);
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Lrcox)]
    pub method: Method,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Accepted for uniformity; fits are deterministic.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub s_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub r_grid: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// `unit` or `inverse-size`.
    #[arg(long, default_value = "unit")]
    pub weights: WeightMode,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fit artifact directory (containing `coefficients.csv`).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// True coefficient CSV; enables model error together with `--sigma`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Covariance descriptor JSON written by `simulate`.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Factor CSV (rows = predictors); refits Cox models on `x'U`.
    #[arg(long)]
    pub transfer_factors: Option<PathBuf>,
    /// Label used in the plot-data CSV.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value = "standard-breslow")]
    pub tie_mode: TieMode,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 3)]
    pub replications: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Lrcox, Method::SepRidge])]
    pub methods: Vec<Method>,
    /// Tune (s, r) of `lrcox` by cross-validation instead of using the true values.
    #[arg(long)]
    pub lrcox_cv: bool,
    #[arg(long, value_delimiter = ',')]
    pub s_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub r_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Outcome of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    RhoCapHit,
}

pub fn run(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    }
}

/// Parses `args`, configures the thread pool and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message);
        return ExitCode::from(e.code);
    }
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::RhoCapHit) => {
            eprintln!("warning: penalty parameter cap reached before feasibility; result written");
            ExitCode::from(EXIT_RHO_CAP)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // A second initialization (e.g. repeated in-process runs) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Covariance descriptor written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDescriptor {
    pub kind: String,
    pub p: usize,
    pub corr_decay: f64,
}

impl SigmaDescriptor {
    pub fn matrix(&self) -> CliResult<DMatrix<f64>> {
        if self.kind != "ar1" {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!("unsupported covariance kind `{}`", self.kind),
            });
        }
        let spec = SimulationSpec {
            p: self.p,
            corr_decay: self.corr_decay,
            ..SimulationSpec::default()
        };
        Ok(spec.covariance())
    }
}

fn population_names(data: &SurvivalDataset) -> Vec<String> {
    data.populations().iter().map(|p| p.name().to_string()).collect()
}

fn factor_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("factor{i}")).collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Outcome> {
    let spec = args.sim.resolve()?;
    let bench = generate_benchmark(&spec)?;
    let out = &args.out;
    write_dataset_bundle(out, &bench.train, Some(&bench.validation), Some(&bench.test))?;
    let predictors = bench.train.predictor_names().to_vec();
    let pops = population_names(&bench.train);
    write_coefficients(&out.join("truth_B.csv"), &bench.truth.b_star, &predictors, &pops)?;
    write_matrix_csv(
        &out.join("truth_U.csv"),
        &bench.truth.u_star,
        "predictor",
        &predictors,
        &factor_names(spec.r_star),
    )?;
    write_matrix_csv(
        &out.join("truth_V.csv"),
        &bench.truth.v_star,
        "population",
        &pops,
        &factor_names(spec.r_star),
    )?;
    write_json(
        &out.join("sigma.json"),
        &SigmaDescriptor {
            kind: "ar1".into(),
            p: spec.p,
            corr_decay: spec.corr_decay,
        },
    )?;
    write_json(&out.join("spec.json"), &spec)?;
    log::info!("wrote {} populations to {}", spec.populations, out.display());
    Ok(Outcome::Success)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rho_steps: usize,
    pub inner_iterations: usize,
    pub first_objective: f64,
    pub last_objective: f64,
    pub final_rho: f64,
    pub final_dist_rank: f64,
    pub final_dist_rows: f64,
    pub projection_shift: f64,
}

/// `fit.json` contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub method: Method,
    pub settings: SolverSettings,
    pub seed: u64,
    pub p: usize,
    pub populations: Vec<String>,
    pub predictors: Vec<String>,
    pub selected_sparsity: usize,
    pub selected_rank: usize,
    pub support_size: usize,
    pub factor_rank: usize,
    pub tuning: Tuning,
    pub termination: Option<Termination>,
    pub trace: Option<TraceSummary>,
}

/// Writes `fit.json`, `coefficients.csv` and the `U`, `D`, `W` factor CSVs.
pub fn write_fit_artifact(
    dir: &Path,
    result: &MethodFit,
    settings: &SolverSettings,
    seed: u64,
    data: &SurvivalDataset,
) -> CliResult<()> {
    let predictors = data.predictor_names().to_vec();
    let pops = population_names(data);
    let est = &result.estimate;
    let rank = result.rank.clamp(1, est.p().min(est.populations()));
    let f = factorize(est, rank)?;
    let names = factor_names(f.rank);
    write_coefficients(&dir.join("coefficients.csv"), est, &predictors, &pops)?;
    write_matrix_csv(&dir.join("U.csv"), &f.left_factors, "predictor", &predictors, &names)?;
    write_matrix_csv(
        &dir.join("D.csv"),
        &DMatrix::from_column_slice(f.rank, 1, f.singular_values.as_slice()),
        "factor",
        &names,
        &["singular_value".to_string()],
    )?;
    write_matrix_csv(&dir.join("W.csv"), &f.right_factors, "population", &pops, &names)?;
    let trace = result.fit.as_ref().map(|fr| TraceSummary {
        rho_steps: fr.rho_steps,
        inner_iterations: fr.trace.len(),
        first_objective: fr.trace.first().map_or(f64::NAN, |t| t.objective),
        last_objective: fr.trace.last().map_or(f64::NAN, |t| t.objective),
        final_rho: fr.final_rho,
        final_dist_rank: fr.final_dist_rank,
        final_dist_rows: fr.final_dist_rows,
        projection_shift: fr.projection_shift,
    });
    let support = est.support().len();
    let doc = FitDocument {
        method: result.method,
        settings: settings.clone(),
        seed,
        p: data.p(),
        populations: pops,
        predictors,
        selected_sparsity: match result.tuning {
            Tuning::Constraints { sparsity, .. } => sparsity,
            _ => support,
        },
        selected_rank: result.rank,
        support_size: support,
        factor_rank: f.rank,
        tuning: result.tuning.clone(),
        termination: result.termination,
        trace,
    };
    write_json(&dir.join("fit.json"), &doc)?;
    Ok(())
}

fn outcome_of(result: &MethodFit) -> Outcome {
    if result.termination == Some(Termination::RhoCapHit) {
        Outcome::RhoCapHit
    } else {
        Outcome::Success
    }
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<Outcome> {
    let settings = args.solver.resolve()?;
    let manifest = LoadedManifest::read(&args.manifest)?;
    let train = manifest.load(DataSplit::Train)?;
    let config = settings.fit_config(train.p(), train.num_populations())?;
    let validation = if manifest.has_split(DataSplit::Validation) {
        Some(manifest.load(DataSplit::Validation)?)
    } else {
        None
    };
    let result = run_method(
        args.method,
        &config,
        &settings.method_options(),
        &train,
        validation.as_ref(),
    )?;
    write_fit_artifact(&args.out, &result, &settings, args.seed, &train)?;
    Ok(outcome_of(&result))
}

fn write_score_matrix(path: &Path, cv: &CvResult) -> CliResult<()> {
    let m = DMatrix::from_fn(cv.s_grid.len(), cv.r_grid.len(), |a, b| {
        cv.scores[a][b].unwrap_or(f64::NEG_INFINITY)
    });
    let rows: Vec<String> = cv.s_grid.iter().map(|s| s.to_string()).collect();
    let cols: Vec<String> = cv.r_grid.iter().map(|r| format!("r={r}")).collect();
    Ok(write_matrix_csv(path, &m, "sparsity", &rows, &cols)?)
}

pub fn cmd_cv(args: &CvArgs) -> CliResult<Outcome> {
    let mut settings = args.solver.resolve()?;
    let manifest = LoadedManifest::read(&args.manifest)?;
    let train = manifest.load(DataSplit::Train)?;
    let config = settings.fit_config(train.p(), train.num_populations())?;
    let cv_config = CvConfig {
        folds: args.folds,
        s_grid: args.s_grid.clone(),
        r_grid: args.r_grid.clone(),
        weights: args.weights,
        seed: args.seed,
    };
    let problems = cv_config.problems(&train);
    if !problems.is_empty() {
        return Err(CliError::config(format!("invalid cross-validation settings: {}", problems.join("; "))));
    }
    let cv = select(&train, &cv_config, &config)?;
    if !cv.provenance.iter().filter(|p| !p.predicted_by.is_empty()).all(|p| p.fold_exclusive()) {
        return Err(CliError {
            code: EXIT_INTERNAL,
            message: "held-out predictor produced by a fit that saw its subject".into(),
        });
    }
    write_json(&args.out.join("cv.json"), &cv)?;
    write_score_matrix(&args.out.join("scores.csv"), &cv)?;

    settings.sparsity = Some(cv.selected_sparsity);
    settings.rank = Some(cv.selected_rank);
    let refit_config = settings.fit_config(train.p(), train.num_populations())?;
    let result = run_method(Method::Lrcox, &refit_config, &settings.method_options(), &train, None)?;
    write_fit_artifact(&args.out, &result, &settings, args.seed, &train)?;
    Ok(outcome_of(&result))
}

/// One row of the tidy plot-data CSV.
fn plot_rows(label: &str, report: &MetricReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, population: &str, v: Option<f64>| {
        if let Some(v) = v {
            rows.push(vec![
                label.to_string(),
                metric.to_string(),
                population.to_string(),
                crate::io::format_float(v),
            ]);
        }
    };
    push("model_error", "all", report.model_error);
    push("c_index", "all", report.c_index);
    push("c_index_censored", "all", report.c_index_censored);
    if let Some(b) = report.brier {
        push("brier_q25", "all", Some(b.q25));
        push("brier_q50", "all", Some(b.q50));
        push("brier_q75", "all", Some(b.q75));
    }
    for m in &report.per_population {
        push("c_index", &m.name, m.c_index);
        push("c_index_censored", &m.name, m.c_index_censored);
        if let Some(b) = m.brier {
            push("brier_q25", &m.name, Some(b.q25));
            push("brier_q50", &m.name, Some(b.q50));
            push("brier_q75", &m.name, Some(b.q75));
        }
    }
    rows
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::from(LrCoxError::Csv {
        path: path.display().to_string(),
        source: e,
    });
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    })?;
    Ok(crate::io::atomic_write(path, &bytes)?)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<Outcome> {
    let manifest = LoadedManifest::read(&args.manifest)?;
    let train = manifest.load(DataSplit::Train)?;
    let test = manifest.load(DataSplit::Test)?;
    let pops = population_names(&train);

    let (estimate, mut label) = if let Some(path) = &args.transfer_factors {
        let u = read_matrix_csv(path)?;
        let model = factor_transfer(&u.values, &u.row_names, &train, args.tie_mode)?;
        if model.fingerprint != crate::metrics::matrix_fingerprint(&u.values) {
            return Err(CliError {
                code: EXIT_INTERNAL,
                message: "factor matrix changed during transfer".into(),
            });
        }
        (model.coefficient_matrix()?, format!("transfer-r{}", u.values.ncols()))
    } else {
        let dir = args.fit.as_ref().ok_or_else(|| {
            CliError::config("either --fit or --transfer-factors is required")
        })?;
        let (b, rows, cols) = read_coefficients(&dir.join("coefficients.csv"))?;
        if rows != train.predictor_names() {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!(
                    "fit predictors differ from the test data ({})",
                    predictor_diff(train.predictor_names(), &rows)
                ),
            });
        }
        if cols.len() != pops.len() {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!("fit has {} populations, data has {}", cols.len(), pops.len()),
            });
        }
        let label = read_json::<FitDocument>(&dir.join("fit.json"))
            .map(|d| d.method.name().to_string())
            .unwrap_or_else(|_| "fit".into());
        (b, label)
    };
    if let Some(l) = &args.label {
        label = l.clone();
    }

    let truth = match (&args.truth, &args.sigma) {
        (Some(t), Some(s)) => {
            let (b, rows, _) = read_coefficients(t)?;
            if rows != train.predictor_names() {
                return Err(CliError {
                    code: EXIT_DATA,
                    message: format!(
                        "truth predictors differ from the data ({})",
                        predictor_diff(train.predictor_names(), &rows)
                    ),
                });
            }
            let sigma = read_json::<SigmaDescriptor>(s)?.matrix()?;
            Some((b, sigma))
        }
        (None, None) => None,
        _ => return Err(CliError::config("--truth and --sigma must be given together")),
    };
    let report = evaluate(
        &train,
        &test,
        &estimate,
        truth.as_ref().map(|(b, s)| (b, s)),
    )?;
    write_json(&args.out.join("metrics.json"), &report)?;
    write_rows(
        &args.out.join("plot_data.csv"),
        &["method", "metric", "population", "value"],
        &plot_rows(&label, &report),
    )?;
    Ok(Outcome::Success)
}

/// Metrics of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub model_error: f64,
    pub c_index: f64,
    pub brier_q25: f64,
    pub brier_q50: f64,
    pub brier_q75: f64,
}

pub const SUMMARY_METRICS: [&str; 5] = ["model_error", "c_index", "brier_q25", "brier_q50", "brier_q75"];

impl ReplicationRow {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "model_error" => self.model_error,
            "c_index" => self.c_index,
            "brier_q25" => self.brier_q25,
            "brier_q50" => self.brier_q50,
            "brier_q75" => self.brier_q75,
            _ => f64::NAN,
        }
    }
}

/// Mean and standard error of a sample (SE is zero for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Settings of one benchmark run.
#[derive(Debug, Clone)]
pub struct BenchmarkPlan {
    pub spec: SimulationSpec,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub settings: SolverSettings,
    /// `Some((s_grid, r_grid, folds))` tunes `lrcox` by cross-validation.
    pub lrcox_cv: Option<(Vec<usize>, Vec<usize>, usize)>,
}

/// Runs one replication of every method; failures are returned per method.
pub fn run_replication(
    plan: &BenchmarkPlan,
    replication: usize,
) -> crate::Result<Vec<(Method, std::result::Result<ReplicationRow, String>)>> {
    let mut spec = plan.spec.clone();
    spec.seed = plan.spec.seed.wrapping_add(replication as u64);
    let bench = generate_benchmark(&spec)?;
    let mut settings = plan.settings.clone();
    settings.rank = Some(spec.r_star);
    settings.sparsity = Some(spec.s_star);
    let mut out = Vec::new();
    for &method in &plan.methods {
        let row = (|| -> std::result::Result<ReplicationRow, String> {
            let mut config = settings
                .fit_config(spec.p, spec.populations)
                .map_err(|e| e.message)?;
            if method == Method::Lrcox {
                if let Some((s_grid, r_grid, folds)) = &plan.lrcox_cv {
                    let cv = CvConfig::new(*folds, s_grid.clone(), r_grid.clone(), spec.seed);
                    let sel = select(&bench.train, &cv, &config).map_err(|e| e.to_string())?;
                    config.constraints = ConstraintPair {
                        max_rank: sel.selected_rank,
                        max_rows: sel.selected_sparsity,
                    };
                }
            }
            let fit = run_method(
                method,
                &config,
                &settings.method_options(),
                &bench.train,
                Some(&bench.validation),
            )
            .map_err(|e| e.to_string())?;
            let report = evaluate(
                &bench.train,
                &bench.test,
                &fit.estimate,
                Some((&bench.truth.b_star, &bench.truth.sigma)),
            )
            .map_err(|e| e.to_string())?;
            let brier = report.brier.ok_or("Brier score unavailable")?;
            Ok(ReplicationRow {
                replication,
                seed: spec.seed,
                method,
                model_error: report.model_error.unwrap_or(f64::NAN),
                c_index: report.c_index.unwrap_or(f64::NAN),
                brier_q25: brier.q25,
                brier_q50: brier.q50,
                brier_q75: brier.q75,
            })
        })();
        out.push((method, row));
    }
    Ok(out)
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<Outcome> {
    let spec = args.sim.resolve()?;
    let settings = args.solver.resolve()?;
    settings.fit_config(spec.p, spec.populations)?;
    if args.replications == 0 {
        return Err(CliError::config("--replications must be positive"));
    }
    let lrcox_cv = args.lrcox_cv.then(|| {
        let s_grid = args.s_grid.clone().unwrap_or_else(|| vec![spec.s_star]);
        let r_grid = args.r_grid.clone().unwrap_or_else(|| vec![spec.r_star]);
        (s_grid, r_grid, args.folds)
    });
    let plan = BenchmarkPlan {
        spec,
        replications: args.replications,
        methods: args.methods.clone(),
        settings,
        lrcox_cv,
    };
    let results = (0..plan.replications)
        .into_par_iter()
        .map(|rep| run_replication(&plan, rep))
        .collect::<crate::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut failures: Vec<(Method, usize)> = plan.methods.iter().map(|&m| (m, 0)).collect();
    for (rep, per_method) in results.into_iter().enumerate() {
        for (method, r) in per_method {
            match r {
                Ok(row) => rows.push(row),
                Err(e) => {
                    log::warn!("replication {rep}, method {method}: {e}");
                    if let Some(f) = failures.iter_mut().find(|f| f.0 == method) {
                        f.1 += 1;
                    }
                }
            }
        }
    }
    let f = crate::io::format_float;
    let rep_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                r.seed.to_string(),
                r.method.name().to_string(),
                f(r.model_error),
                f(r.c_index),
                f(r.brier_q25),
                f(r.brier_q50),
                f(r.brier_q75),
            ]
        })
        .collect();
    write_rows(
        &args.out.join("replications.csv"),
        &["replication", "seed", "method", "model_error", "c_index", "brier_q25", "brier_q50", "brier_q75"],
        &rep_rows,
    )?;
    let mut summary = Vec::new();
    for &(method, failed) in &failures {
        let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == method).collect();
        if mine.is_empty() {
            continue;
        }
        for metric in SUMMARY_METRICS {
            let vals: Vec<f64> = mine.iter().map(|r| r.metric(metric)).collect();
            let (mean, se) = mean_se(&vals);
            summary.push(vec![
                method.name().to_string(),
                metric.to_string(),
                f(mean),
                f(se),
                f(mean - 2.0 * se),
                f(mean + 2.0 * se),
                vals.len().to_string(),
                failed.to_string(),
            ]);
        }
    }
    write_rows(
        &args.out.join("summary.csv"),
        &["method", "metric", "mean", "se", "lower", "upper", "replications", "failures"],
        &summary,
    )?;
    write_json(&args.out.join("spec.json"), &plan.spec)?;
    write_json(&args.out.join("settings.json"), &plan.settings)?;
    Ok(Outcome::Success)
}
