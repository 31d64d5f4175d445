//! Convex relaxation (nuclear norm + row-group lasso) and the separate
//! per-population penalized estimators used as baselines.
//!
//! The convex program
//!
//! ```text
//! min_B  -l(B) + lambda ||B||_* + gamma ||B||_{1,2}
//! ```
//!
//! is solved by three-operator splitting with a backtracking line search on the
//! smooth term. The likelihood is unscaled here, whereas the separate
//! estimators minimize `n^-1 (-l_j(b)) + lambda_j pen(b)`; tuning grids of the
//! two families are therefore not comparable.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::likelihood::{
    coefficient_hessian, fit_cox_newton, neg_loglik_gradient, partial_loglik, population_derivatives,
    population_loglik, TieMode,
};
use crate::matrix::{ordered_svd, project_rank, CoefficientMatrix};
use crate::solver::{mm_update_population, Curvature};

fn check_threshold(name: &'static str, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LrCoxError::invalid(name, format!("must be nonnegative, got {t}")));
    }
    Ok(())
}

pub(crate) fn nuclear_prox_matrix(b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if t == 0.0 {
        return b.clone();
    }
    let (u, sigma, v) = ordered_svd(b);
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for k in 0..sigma.len() {
        let s = sigma[k] - t;
        if s > 0.0 {
            out.ger(s, &u.column(k), &v.column(k), 1.0);
        }
    }
    out
}

pub(crate) fn rowgroup_prox_matrix(b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let mut out = b.clone();
    if t == 0.0 {
        return out;
    }
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
        row *= scale;
    }
    out
}

/// Singular-value soft-thresholding: `U max(D - t, 0) V'`.
pub fn prox_nuclear(b: &CoefficientMatrix, t: f64) -> Result<CoefficientMatrix> {
    check_threshold("t * lambda", t)?;
    CoefficientMatrix::new(nuclear_prox_matrix(b.as_matrix(), t))
}

/// Row-wise group soft-thresholding: each row scaled by `max(0, 1 - t/||row||)`.
pub fn prox_rowgroup(b: &CoefficientMatrix, t: f64) -> Result<CoefficientMatrix> {
    check_threshold("t * gamma", t)?;
    CoefficientMatrix::new(rowgroup_prox_matrix(b.as_matrix(), t))
}

pub fn nuclear_norm(b: &DMatrix<f64>) -> f64 {
    ordered_svd(b).1.sum()
}

pub fn rowgroup_norm(b: &DMatrix<f64>) -> f64 {
    b.row_iter().map(|r| r.norm()).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexConfig {
    pub lambda_nuc: f64,
    pub gamma_row: f64,
    /// Fixed step; `None` selects backtracking from an initial unit step.
    pub step_size: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl ConvexConfig {
    pub fn new(lambda_nuc: f64, gamma_row: f64) -> Self {
        Self {
            lambda_nuc,
            gamma_row,
            step_size: None,
            max_iters: 20_000,
            rel_tol: 1e-8,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda_nuc >= 0.0) || !self.lambda_nuc.is_finite() {
            out.push(format!("lambda must be nonnegative, got {}", self.lambda_nuc));
        }
        if !(self.gamma_row >= 0.0) || !self.gamma_row.is_finite() {
            out.push(format!("gamma must be nonnegative, got {}", self.gamma_row));
        }
        if let Some(t) = self.step_size {
            if !(t > 0.0) || !t.is_finite() {
                out.push(format!("step size must be positive, got {t}"));
            }
        }
        if self.max_iters == 0 {
            out.push("max_iters must be positive".into());
        }
        if !(self.rel_tol > 0.0) {
            out.push(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LrCoxError::invalid("convex config", problems.join("; ")))
        }
    }

    /// `-l(B) + lambda ||B||_* + gamma ||B||_{1,2}`.
    pub fn objective(&self, data: &SurvivalDataset, b: &CoefficientMatrix, tie: TieMode) -> Result<f64> {
        let m = b.as_matrix();
        Ok(-partial_loglik(data, b, tie)?
            + self.lambda_nuc * nuclear_norm(m)
            + self.gamma_row * rowgroup_norm(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexTermination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ConvexFit {
    pub estimate: CoefficientMatrix,
    /// Objective after every iteration (index 0 is the starting point).
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Final relative fixed-point residual.
    pub residual: f64,
    pub step: f64,
    pub termination: ConvexTermination,
}

#[derive(Clone, Copy)]
enum Prox {
    Identity,
    Nuclear(f64),
    Row(f64),
}

impl Prox {
    fn apply(self, b: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
        match self {
            Prox::Identity => b.clone(),
            Prox::Nuclear(l) => nuclear_prox_matrix(b, step * l),
            Prox::Row(g) => rowgroup_prox_matrix(b, step * g),
        }
    }
}

fn smooth(data: &SurvivalDataset, b: &DMatrix<f64>, tie: TieMode) -> Result<(f64, DMatrix<f64>)> {
    neg_loglik_gradient(data, &CoefficientMatrix::new(b.clone())?, tie)
}

fn smooth_value(data: &SurvivalDataset, b: &DMatrix<f64>, tie: TieMode) -> Option<f64> {
    let coef = CoefficientMatrix::new(b.clone()).ok()?;
    partial_loglik(data, &coef, tie).ok().map(|l| -l)
}

pub fn fit_convex(data: &SurvivalDataset, config: &ConvexConfig, tie: TieMode) -> Result<ConvexFit> {
    fit_convex_from(data, config, tie, &CoefficientMatrix::zeros(data.p(), data.num_populations()))
}

/// Three-operator splitting started at `init`.
///
/// The first proximal slot (where the line search is checked) holds the
/// active penalty when only one is positive; the iteration then reduces to
/// proximal gradient descent and the objective trace is monotone. With both
/// penalties active the nuclear prox comes first and the row prox second.
pub fn fit_convex_from(
    data: &SurvivalDataset,
    config: &ConvexConfig,
    tie: TieMode,
    init: &CoefficientMatrix,
) -> Result<ConvexFit> {
    config.validate()?;
    if init.p() != data.p() || init.populations() != data.num_populations() {
        return Err(LrCoxError::DimensionMismatch(
            "initial coefficients do not match the data".into(),
        ));
    }
    let (first, second) = match (config.lambda_nuc > 0.0, config.gamma_row > 0.0) {
        (true, true) => (Prox::Nuclear(config.lambda_nuc), Prox::Row(config.gamma_row)),
        (true, false) => (Prox::Nuclear(config.lambda_nuc), Prox::Identity),
        (false, true) => (Prox::Row(config.gamma_row), Prox::Identity),
        (false, false) => (Prox::Identity, Prox::Identity),
    };
    let single = matches!(second, Prox::Identity);
    let backtrack = config.step_size.is_none();
    let mut step = config.step_size.unwrap_or(1.0);

    let objective = |b: &DMatrix<f64>, f: f64| {
        f + config.lambda_nuc * nuclear_norm(b) + config.gamma_row * rowgroup_norm(b)
    };
    let mut z = init.as_matrix().clone();
    let mut u = DMatrix::zeros(z.nrows(), z.ncols());
    let (mut fz, mut grad) = smooth(data, &z, tie)?;
    let mut trace = vec![objective(&z, fz)];
    let mut residual = f64::INFINITY;
    let mut termination = ConvexTermination::MaxIterations;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        let (x, fx) = loop {
            let x = first.apply(&(&z - (&u + &grad) * step), step);
            let fx = smooth_value(data, &x, tie);
            if !backtrack {
                match fx {
                    Some(v) => break (x, v),
                    None => {
                        return Err(LrCoxError::NonFiniteObjective {
                            rho: 0.0,
                            iteration: it,
                        })
                    }
                }
            }
            let diff = &x - &z;
            let ok = fx.is_some_and(|v| {
                v <= fz + grad.dot(&diff) + diff.norm_squared() / (2.0 * step) + 1e-12 * fz.abs()
            });
            if ok {
                break (x, fx.unwrap());
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(LrCoxError::NonFiniteObjective {
                    rho: 0.0,
                    iteration: it,
                });
            }
        };
        let z_new = second.apply(&(&x + &u * step), step);
        u += (&x - &z_new) / step;
        residual = (&x - &z).norm() / z.norm().max(1.0);

        let (f_new, g_new) = if single {
            (fx, smooth(data, &z_new, tie)?.1)
        } else {
            smooth(data, &z_new, tie)?
        };
        z = z_new;
        fz = f_new;
        grad = g_new;
        let obj = objective(&z, fz);
        if !obj.is_finite() {
            return Err(LrCoxError::NonFiniteObjective {
                rho: 0.0,
                iteration: it,
            });
        }
        trace.push(obj);
        if residual < config.rel_tol {
            termination = ConvexTermination::Converged;
            break;
        }
        // Pure proximal-gradient steps may safely try a longer step next time.
        if single && backtrack {
            step *= 1.25;
        }
    }
    log::debug!(
        "convex fit: {iterations} iterations, residual {residual:.3e}, step {step:.3e}"
    );
    Ok(ConvexFit {
        estimate: CoefficientMatrix::new(z)?,
        trace,
        iterations,
        residual,
        step,
        termination,
    })
}

/// Penalty of the separate estimators:
/// `pen_alpha(b) = (1 - alpha)/2 ||b||^2 + alpha ||b||_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Penalty {
    Ridge,
    Lasso,
    ElasticNet { alpha: f64 },
}

/// Mixing weight used for the elastic-net baseline.
pub const ENET_ALPHA: f64 = 0.5;

impl Penalty {
    pub fn alpha(self) -> f64 {
        match self {
            Penalty::Ridge => 0.0,
            Penalty::Lasso => 1.0,
            Penalty::ElasticNet { alpha } => alpha,
        }
    }

    pub fn value(self, b: &DVector<f64>) -> f64 {
        let a = self.alpha();
        0.5 * (1.0 - a) * b.norm_squared() + a * b.lp_norm(1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateConfig {
    pub penalty: Penalty,
    pub lambdas: Vec<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl SeparateConfig {
    pub fn new(penalty: Penalty, lambdas: Vec<f64>) -> Self {
        Self {
            penalty,
            lambdas,
            max_iters: 10_000,
            rel_tol: 1e-10,
        }
    }

    pub fn validate(&self, populations: usize) -> Result<()> {
        let mut problems = Vec::new();
        if let Penalty::ElasticNet { alpha } = self.penalty {
            if !(alpha > 0.0 && alpha < 1.0) {
                problems.push(format!("elastic-net alpha must lie in (0, 1), got {alpha}"));
            }
        }
        if self.lambdas.len() != populations {
            problems.push(format!(
                "{} lambdas given for {populations} populations",
                self.lambdas.len()
            ));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            problems.push(format!("lambdas must be nonnegative, got {l}"));
        }
        if self.max_iters == 0 {
            problems.push("max_iters must be positive".into());
        }
        if !(self.rel_tol > 0.0) {
            problems.push(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LrCoxError::invalid("separate config", problems.join("; ")))
        }
    }
}

/// `n^-1 (-l(b)) + lambda pen(b)` for one population.
pub fn separate_objective(
    pop: &Population,
    b: &DVector<f64>,
    penalty: Penalty,
    lambda: f64,
    tie: TieMode,
) -> Result<f64> {
    let eta = pop.x() * b;
    Ok(-population_loglik(pop, &eta, tie)? / pop.n() as f64 + lambda * penalty.value(b))
}

/// Gradient of `n^-1 (-l)` at `b`.
fn scaled_gradient(pop: &Population, b: &DVector<f64>, tie: TieMode) -> Result<(f64, DVector<f64>)> {
    let eta = pop.x() * b;
    let d = population_derivatives(pop, &eta, tie)?;
    let n = pop.n() as f64;
    Ok((d.value / n, pop.x().tr_mul(&d.gradient_eta) / n))
}

fn ridge_population(
    pop: &Population,
    lambda: f64,
    tie: TieMode,
    max_iters: usize,
    rel_tol: f64,
    warm: DVector<f64>,
) -> Result<DVector<f64>> {
    if lambda == 0.0 {
        return fit_cox_newton(pop, 0.0, tie, 200, 1e-12);
    }
    // n^-1(-l) + lambda/2 ||b||^2 is n^-1 times -l + (n lambda / 2) ||b||^2,
    // which the rho = 0 update minimizes with ridge weight n lambda.
    let ridge = pop.n() as f64 * lambda;
    let zero = DVector::zeros(pop.p());
    let mut b = warm;
    let mut current = separate_objective(pop, &b, Penalty::Ridge, lambda, tie)?;
    for _ in 0..max_iters {
        let proposal = mm_update_population(pop, &b, &zero, 0.0, ridge, Curvature::Diagonal, tie)?;
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-10 {
            let cand = &b + (&proposal - &b) * step;
            if let Ok(v) = separate_objective(pop, &cand, Penalty::Ridge, lambda, tie) {
                if v <= current {
                    accepted = Some((cand, v));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else { break };
        let change = (&next - &b).norm();
        let drop = current - value;
        b = next;
        current = value;
        if drop <= rel_tol * (1.0 + current.abs()) && change <= rel_tol.sqrt() * (1.0 + b.norm()) {
            break;
        }
    }
    Ok(b)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal Newton for the lasso and elastic-net penalties: each step
/// minimizes the second-order model of the smooth part plus the L1 term by
/// coordinate descent, then backtracks on the true objective.
fn l1_population(
    pop: &Population,
    penalty: Penalty,
    lambda: f64,
    tie: TieMode,
    max_iters: usize,
    rel_tol: f64,
    warm: DVector<f64>,
) -> Result<DVector<f64>> {
    if lambda == 0.0 {
        return fit_cox_newton(pop, 0.0, tie, 200, 1e-12);
    }
    let alpha = penalty.alpha();
    let l2 = lambda * (1.0 - alpha);
    let l1 = lambda * alpha;
    let n = pop.n() as f64;
    let p = pop.p();
    let objective = |b: &DVector<f64>| separate_objective(pop, b, penalty, lambda, tie);

    let mut b = warm;
    let mut current = objective(&b)?;
    for _ in 0..max_iters.min(500) {
        let eta = pop.x() * &b;
        let d = population_derivatives(pop, &eta, tie)?;
        let g = pop.x().tr_mul(&d.gradient_eta) / n + &b * l2;
        let mut h = coefficient_hessian(pop, &eta, tie)? / n;
        for k in 0..p {
            h[(k, k)] += l2 + 1e-12;
        }
        // Coordinate descent on g'(beta - b) + 1/2 (beta - b)' H (beta - b) + l1 ||beta||_1.
        let mut beta = b.clone();
        let mut slope = g.clone();
        for _ in 0..1000 {
            let mut biggest = 0.0_f64;
            for k in 0..p {
                let hkk = h[(k, k)];
                let old = beta[k];
                let new = soft_threshold(hkk * old - slope[k], l1) / hkk;
                if new != old {
                    let delta = new - old;
                    slope.axpy(delta, &h.column(k), 1.0);
                    beta[k] = new;
                    biggest = biggest.max(delta.abs() * hkk.sqrt());
                }
            }
            if biggest <= 1e-13 * (1.0 + beta.norm()) {
                break;
            }
        }
        let dir = &beta - &b;
        let decrease = g.dot(&dir) + l1 * (beta.lp_norm(1) - b.lp_norm(1));
        if dir.norm() <= rel_tol * (1.0 + b.norm()) || decrease >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &b + &dir * t;
            if let Ok(v) = objective(&cand) {
                if v <= current + 1e-4 * t * decrease {
                    accepted = Some((cand, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, value)) = accepted else { break };
        let step = (&next - &b).norm();
        b = next;
        current = value;
        if step <= rel_tol * (1.0 + b.norm()) {
            break;
        }
    }
    Ok(b)
}

/// Fits one population's penalized model, optionally warm-started.
pub fn fit_separate_population(
    pop: &Population,
    penalty: Penalty,
    lambda: f64,
    tie: TieMode,
    max_iters: usize,
    rel_tol: f64,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LrCoxError::invalid("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let start = warm.cloned().unwrap_or_else(|| DVector::zeros(pop.p()));
    match penalty {
        Penalty::Ridge => ridge_population(pop, lambda, tie, max_iters, rel_tol, start),
        _ => l1_population(pop, penalty, lambda, tie, max_iters, rel_tol, start),
    }
}

/// Column j minimizes `n_j^-1 (-l_j(b)) + lambda_j pen(b)`.
pub fn fit_separate(data: &SurvivalDataset, config: &SeparateConfig, tie: TieMode) -> Result<CoefficientMatrix> {
    config.validate(data.num_populations())?;
    let columns = data
        .populations()
        .par_iter()
        .zip(config.lambdas.par_iter())
        .map(|(pop, &lambda)| {
            fit_separate_population(pop, config.penalty, lambda, tie, config.max_iters, config.rel_tol, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(data.p(), data.num_populations());
    for (j, c) in columns.iter().enumerate() {
        out.set_column(j, c);
    }
    CoefficientMatrix::new(out)
}

/// Nearest rank-`r` matrix to a separate fit.
pub fn project_separate(b_hat: &CoefficientMatrix, r: usize) -> Result<CoefficientMatrix> {
    project_rank(b_hat, r)
}

pub const LAMBDA_GRID_POINTS: usize = 50;
pub const LAMBDA_GRID_RATIO: f64 = 1e-4;

/// `lambda_max` of the separate estimator: the smallest lambda whose solution
/// is zero for penalties with an L1 part. Ridge has no such point; its grid
/// starts where the lasso grid would with alpha = 0.001.
pub fn lambda_max(pop: &Population, penalty: Penalty, tie: TieMode) -> Result<f64> {
    let (_, g) = scaled_gradient(pop, &DVector::zeros(pop.p()), tie)?;
    let gmax = g.amax();
    Ok(match penalty {
        Penalty::Ridge => gmax / 1e-3,
        _ => gmax / penalty.alpha(),
    })
}

/// `count` log-spaced values from `hi` down to `hi * ratio`.
pub fn log_grid(hi: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), (hi * ratio).ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Held-out deviance `-2 l(b)` on a validation population.
pub fn validation_deviance(pop: &Population, b: &DVector<f64>, tie: TieMode) -> Result<f64> {
    Ok(-2.0 * population_loglik(pop, &(pop.x() * b), tie)?)
}

#[derive(Debug, Clone)]
pub struct SeparateTuning {
    pub estimate: CoefficientMatrix,
    pub lambdas: Vec<f64>,
    pub deviances: Vec<f64>,
}

/// Per-population lambda chosen on a validation set over a warm-started
/// 50-point path.
pub fn tune_separate(
    train: &SurvivalDataset,
    validation: &SurvivalDataset,
    penalty: Penalty,
    tie: TieMode,
) -> Result<SeparateTuning> {
    if train.num_populations() != validation.num_populations() || train.p() != validation.p() {
        return Err(LrCoxError::DimensionMismatch(
            "training and validation data must agree on p and J".into(),
        ));
    }
    let picks = train
        .populations()
        .par_iter()
        .zip(validation.populations().par_iter())
        .map(|(tr, va)| -> Result<(DVector<f64>, f64, f64)> {
            let grid = log_grid(lambda_max(tr, penalty, tie)?, LAMBDA_GRID_RATIO, LAMBDA_GRID_POINTS);
            let mut warm = DVector::zeros(tr.p());
            let mut best: Option<(DVector<f64>, f64, f64)> = None;
            for &lambda in &grid {
                warm = fit_separate_population(tr, penalty, lambda, tie, 10_000, 1e-9, Some(&warm))?;
                let dev = validation_deviance(va, &warm, tie)?;
                if best.as_ref().is_none_or(|b| dev < b.2) {
                    best = Some((warm.clone(), lambda, dev));
                }
            }
            Ok(best.expect("nonempty grid"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut est = DMatrix::zeros(train.p(), train.num_populations());
    for (j, (b, _, _)) in picks.iter().enumerate() {
        est.set_column(j, b);
    }
    Ok(SeparateTuning {
        estimate: CoefficientMatrix::new(est)?,
        lambdas: picks.iter().map(|p| p.1).collect(),
        deviances: picks.iter().map(|p| p.2).collect(),
    })
}

pub const CONVEX_GRID_POINTS: usize = 7;

#[derive(Debug, Clone)]
pub struct ConvexTuning {
    pub fit: ConvexFit,
    pub lambda_nuc: f64,
    pub gamma_row: f64,
    pub deviance: f64,
}

/// 7 x 7 log-spaced (lambda, gamma) grid chosen by total validation deviance.
/// Grid maxima are the values at which each penalty alone zeroes the solution:
/// the spectral norm and the largest row norm of the gradient at zero.
pub fn tune_convex(
    train: &SurvivalDataset,
    validation: &SurvivalDataset,
    tie: TieMode,
    max_iters: usize,
) -> Result<ConvexTuning> {
    let (_, g) = neg_loglik_gradient(train, &CoefficientMatrix::zeros(train.p(), train.num_populations()), tie)?;
    let lam_max = ordered_svd(&g).1.max();
    let gam_max = g.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let lams = log_grid(lam_max, LAMBDA_GRID_RATIO, CONVEX_GRID_POINTS);
    let gams = log_grid(gam_max, LAMBDA_GRID_RATIO, CONVEX_GRID_POINTS);
    let mut best: Option<ConvexTuning> = None;
    for &lambda in &lams {
        let mut warm = CoefficientMatrix::zeros(train.p(), train.num_populations());
        for &gamma in &gams {
            let mut cfg = ConvexConfig::new(lambda, gamma);
            cfg.max_iters = max_iters;
            cfg.rel_tol = 1e-6;
            let fit = fit_convex_from(train, &cfg, tie, &warm)?;
            warm = fit.estimate.clone();
            let dev = -2.0 * partial_loglik(validation, &fit.estimate, tie)?;
            if best.as_ref().is_none_or(|b| dev < b.deviance) {
                best = Some(ConvexTuning {
                    fit,
                    lambda_nuc: lambda,
                    gamma_row: gamma,
                    deviance: dev,
                });
            }
        }
    }
    Ok(best.expect("nonempty grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(r: usize, c: usize, v: &[f64]) -> CoefficientMatrix {
        CoefficientMatrix::new(DMatrix::from_row_slice(r, c, v)).unwrap()
    }

    #[test]
    fn nuclear_prox_examples() {
        let b = mat(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let out = prox_nuclear(&b, 1.0).unwrap();
        assert_relative_eq!(out.as_matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        assert_eq!(prox_nuclear(&b, 0.0).unwrap().as_matrix(), b.as_matrix());
        assert_eq!(prox_nuclear(&b, 3.0).unwrap().as_matrix().amax(), 0.0);
        assert!(prox_nuclear(&b, -1.0).is_err());
    }

    #[test]
    fn rowgroup_prox_examples() {
        let b = mat(2, 2, &[1.2, 1.6, 0.0, 0.0]);
        let out = prox_rowgroup(&b, 0.5).unwrap();
        assert_relative_eq!(out.as_matrix()[(0, 0)], 0.9, epsilon = 1e-15);
        assert_relative_eq!(out.as_matrix()[(0, 1)], 1.2, epsilon = 1e-15);
        assert_eq!(out.as_matrix().row(1).amax(), 0.0);
        assert_eq!(prox_rowgroup(&b, 0.0).unwrap().as_matrix(), b.as_matrix());
        assert_eq!(prox_rowgroup(&b, 2.0).unwrap().as_matrix().amax(), 0.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(2.0, 1e-4, 50);
        assert_eq!(g.len(), 50);
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(g[49], 2e-4, epsilon = 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(ConvexConfig::new(-1.0, 0.0).validate().is_err());
        let cfg = SeparateConfig::new(Penalty::ElasticNet { alpha: 1.5 }, vec![0.1]);
        assert!(cfg.validate(2).is_err());
        assert!(SeparateConfig::new(Penalty::Lasso, vec![0.1, 0.2]).validate(2).is_ok());
    }
}
