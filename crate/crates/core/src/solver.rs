//! Penalty-method solver for the rank- and row-constrained penalized Cox
//! estimator.
//!
//! For fixed `rho` the inner loop minimizes
//!
//! ```text
//! F_rho(B) = -l(B) + mu ||B||_F^2 + rho/2 dist(B, C_r)^2 + rho/2 dist(B, A_s)^2
//! ```
//!
//! by majorize-minimize: both distance terms are replaced by squared distances
//! to the current projections and `-l` by a second-order expansion in the
//! linear predictors with diagonal curvature. Each column update is then a
//! weighted ridge solve. The outer loop raises `rho` geometrically,
//! warm-starting each inner solve at the previous one, until both squared
//! distances fall below `feas_tol`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::likelihood::{linear_predictors, partial_loglik, population_derivatives, TieMode};
use crate::matrix::{
    factorize, rank_projection, ridge_regularized_solve, rowsparse_projection, top_rows,
    CoefficientMatrix, ConstraintPair, Factorization,
};

/// Curvature entries below this are raised to it before `W^-1` is formed.
pub const HESSIAN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "phi")]
pub enum HessianMode {
    /// `W = Diag[grad^2 f(eta)]`.
    TaylorDiagonal,
    /// `W = phi I`. With `None`, phi is the largest Hessian-diagonal entry
    /// over all populations at the start of each inner solve.
    UniformBound(Option<f64>),
}

/// Curvature used by a single column update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curvature {
    Diagonal,
    Uniform(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub mu: f64,
    pub constraints: ConstraintPair,
    pub rho0: f64,
    pub incr_factor: f64,
    pub k_max: usize,
    pub feas_tol: f64,
    pub obj_tol: f64,
    pub max_rho_steps: usize,
    pub hessian_mode: HessianMode,
    pub tie_mode: TieMode,
}

impl FitConfig {
    pub fn new(constraints: ConstraintPair, mu: f64) -> Self {
        Self {
            mu,
            constraints,
            rho0: 5.0,
            incr_factor: 1.2,
            k_max: 10,
            feas_tol: 1e-6,
            obj_tol: 1e-8,
            max_rho_steps: 200,
            hessian_mode: HessianMode::TaylorDiagonal,
            tie_mode: TieMode::StandardBreslow,
        }
    }

    /// Every violated bound, one message each.
    pub fn problems(&self, p: usize, populations: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            out.push(format!("mu must be nonnegative and finite, got {}", self.mu));
        }
        if let Err(e) = self.constraints.validate(p, populations) {
            out.push(e.to_string());
        }
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            out.push(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.incr_factor > 1.0) || !self.incr_factor.is_finite() {
            out.push(format!("incr_factor must exceed 1, got {}", self.incr_factor));
        }
        if self.k_max == 0 {
            out.push("k_max must be positive".into());
        }
        if !(self.feas_tol > 0.0) {
            out.push(format!("feas_tol must be positive, got {}", self.feas_tol));
        }
        if !(self.obj_tol > 0.0) {
            out.push(format!("obj_tol must be positive, got {}", self.obj_tol));
        }
        if self.max_rho_steps == 0 {
            out.push("max_rho_steps must be positive".into());
        }
        if let HessianMode::UniformBound(Some(phi)) = self.hessian_mode {
            if !(phi > 0.0) || !phi.is_finite() {
                out.push(format!("phi must be positive, got {phi}"));
            }
        }
        out
    }

    pub fn validate(&self, p: usize, populations: usize) -> Result<()> {
        let problems = self.problems(p, populations);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LrCoxError::invalid("fit config", problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rho: f64,
    pub iteration: usize,
    pub objective: f64,
    pub dist_rank: f64,
    pub dist_rows: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    FeasibilityMet,
    RhoCapHit,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Exactly feasible estimate (after the final hard projection).
    pub estimate: CoefficientMatrix,
    pub factorization: Factorization,
    pub support: Vec<usize>,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    pub final_rho: f64,
    pub rho_steps: usize,
    /// Squared distances of the last penalty-method iterate, before projection.
    pub final_dist_rank: f64,
    pub final_dist_rows: f64,
    /// Frobenius norm of the change made by the final hard projection.
    pub projection_shift: f64,
}

/// `F_rho(B)` and both squared distances, plus the two projections (reused by
/// the next update).
struct Evaluation {
    objective: f64,
    dist_rank: f64,
    dist_rows: f64,
    target: DMatrix<f64>,
}

fn evaluate(
    data: &SurvivalDataset,
    b: &DMatrix<f64>,
    rho: f64,
    config: &FitConfig,
) -> Result<Evaluation> {
    let (rank_proj, dist_rank) = rank_projection(b, config.constraints.max_rank);
    let (row_proj, dist_rows) = rowsparse_projection(b, config.constraints.max_rows);
    let coef = CoefficientMatrix::new(b.clone())?;
    let neg_ll = -partial_loglik(data, &coef, config.tie_mode)?;
    let objective =
        neg_ll + config.mu * b.norm_squared() + 0.5 * rho * (dist_rank + dist_rows);
    Ok(Evaluation {
        objective,
        dist_rank,
        dist_rows,
        target: rank_proj + row_proj,
    })
}

/// `F_rho(B)` for a fixed penalty parameter.
pub fn penalty_objective(
    data: &SurvivalDataset,
    b: &CoefficientMatrix,
    rho: f64,
    config: &FitConfig,
) -> Result<f64> {
    Ok(evaluate(data, b.as_matrix(), rho, config)?.objective)
}

/// Closed-form column update
/// `(X'WX + (2 rho + mu) I)^-1 (X'W z + rho * target)` with
/// `z = X b - W^-1 grad f(X b)`. The ridge term corresponds to a penalty of
/// `(mu / 2) ||b||^2` in the surrogate.
pub fn mm_update_population(
    pop: &Population,
    b: &DVector<f64>,
    target: &DVector<f64>,
    rho: f64,
    mu: f64,
    curvature: Curvature,
    tie: TieMode,
) -> Result<DVector<f64>> {
    if b.len() != pop.p() || target.len() != pop.p() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "coefficient and target columns must have length {}",
            pop.p()
        )));
    }
    if !(rho >= 0.0) || !(mu >= 0.0) {
        return Err(LrCoxError::invalid("rho/mu", "must be nonnegative"));
    }
    let eta = pop.x() * b;
    let d = population_derivatives(pop, &eta, tie)?;
    let w = match curvature {
        Curvature::Diagonal => d.hessian_diag_eta.map(|h| h.max(HESSIAN_FLOOR)),
        Curvature::Uniform(phi) => DVector::from_element(pop.n(), phi),
    };
    // X'W z = X'(W eta - grad)
    let working = w.component_mul(&eta) - &d.gradient_eta;
    let rhs = pop.x().tr_mul(&working) + target * rho;
    ridge_regularized_solve(pop.x(), &w, &rhs, 2.0 * rho + mu)
}

/// Uniform curvature bound at `b`: the largest Hessian-diagonal entry over all
/// populations (at least the floor).
pub fn uniform_curvature_bound(
    data: &SurvivalDataset,
    b: &CoefficientMatrix,
    tie: TieMode,
) -> Result<f64> {
    let etas = linear_predictors(data, b)?;
    let mut phi = HESSIAN_FLOOR;
    for (pop, eta) in data.populations().iter().zip(&etas) {
        let d = population_derivatives(pop, eta, tie)?;
        phi = d.hessian_diag_eta.iter().cloned().fold(phi, f64::max);
    }
    Ok(phi)
}

fn check_shape(data: &SurvivalDataset, b: &CoefficientMatrix) -> Result<()> {
    if b.p() != data.p() || b.populations() != data.num_populations() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "initial coefficients are {}x{}, data is p = {}, J = {}",
            b.p(),
            b.populations(),
            data.p(),
            data.num_populations()
        )));
    }
    Ok(())
}

/// Majorize-minimize iterations at fixed `rho`.
///
/// The returned trace holds the starting point as iteration 0 followed by one
/// entry per update; it is empty when `k_max = 0`.
pub fn mm_inner_solve(
    data: &SurvivalDataset,
    config: &FitConfig,
    b_init: &CoefficientMatrix,
    rho: f64,
) -> Result<(CoefficientMatrix, Vec<TraceEntry>)> {
    check_shape(data, b_init)?;
    config.constraints.validate(data.p(), data.num_populations())?;
    let mut trace = Vec::new();
    if config.k_max == 0 {
        return Ok((b_init.clone(), trace));
    }
    let curvature = match config.hessian_mode {
        HessianMode::TaylorDiagonal => Curvature::Diagonal,
        HessianMode::UniformBound(Some(phi)) => Curvature::Uniform(phi),
        HessianMode::UniformBound(None) => {
            Curvature::Uniform(uniform_curvature_bound(data, b_init, config.tie_mode)?)
        }
    };
    // The surrogate carries (mu/2)||b||^2 per column, so 2 mu matches the
    // mu ||B||_F^2 term of the objective.
    let ridge = 2.0 * config.mu;

    let mut b = b_init.as_matrix().clone();
    let mut eval = evaluate(data, &b, rho, config)?;
    if !eval.objective.is_finite() {
        return Err(LrCoxError::NonFiniteObjective { rho, iteration: 0 });
    }
    trace.push(TraceEntry {
        rho,
        iteration: 0,
        objective: eval.objective,
        dist_rank: eval.dist_rank,
        dist_rows: eval.dist_rows,
    });

    for k in 1..=config.k_max {
        let columns = data
            .populations()
            .par_iter()
            .enumerate()
            .map(|(j, pop)| {
                mm_update_population(
                    pop,
                    &b.column(j).into_owned(),
                    &eval.target.column(j).into_owned(),
                    rho,
                    ridge,
                    curvature,
                    config.tie_mode,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut next = DMatrix::zeros(b.nrows(), b.ncols());
        for (j, col) in columns.iter().enumerate() {
            next.set_column(j, col);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(LrCoxError::NonFiniteObjective { rho, iteration: k });
        }
        let next_eval = match evaluate(data, &next, rho, config) {
            Ok(e) if e.objective.is_finite() => e,
            _ => return Err(LrCoxError::NonFiniteObjective { rho, iteration: k }),
        };
        trace.push(TraceEntry {
            rho,
            iteration: k,
            objective: next_eval.objective,
            dist_rank: next_eval.dist_rank,
            dist_rows: next_eval.dist_rows,
        });
        let change = (next_eval.objective - eval.objective).abs();
        let scale = 1.0 + eval.objective.abs();
        b = next;
        eval = next_eval;
        if change <= config.obj_tol * scale {
            break;
        }
    }
    Ok((CoefficientMatrix::new(b)?, trace))
}

/// Zero all but the `s` largest rows, then take the best rank-`r`
/// approximation of the surviving rows. The result satisfies both
/// constraints exactly.
pub fn hard_project(b: &CoefficientMatrix, constraints: ConstraintPair) -> Result<CoefficientMatrix> {
    constraints.validate(b.p(), b.populations())?;
    let rows = top_rows(b.as_matrix(), constraints.max_rows);
    let reduced = b.as_matrix().select_rows(rows.iter());
    let r = constraints.max_rank.min(reduced.nrows()).min(reduced.ncols());
    let (low_rank, _) = rank_projection(&reduced, r);
    let mut out = DMatrix::zeros(b.p(), b.populations());
    for (i, &l) in rows.iter().enumerate() {
        out.set_row(l, &low_rank.row(i));
    }
    CoefficientMatrix::new(out)
}

/// Penalty method from the zero matrix.
pub fn fit(data: &SurvivalDataset, config: &FitConfig) -> Result<FitResult> {
    fit_from(
        data,
        config,
        &CoefficientMatrix::zeros(data.p(), data.num_populations()),
    )
}

/// Penalty method from a given starting matrix (warm start).
pub fn fit_from(
    data: &SurvivalDataset,
    config: &FitConfig,
    init: &CoefficientMatrix,
) -> Result<FitResult> {
    config.validate(data.p(), data.num_populations())?;
    check_shape(data, init)?;
    let mut b = init.clone();
    let mut rho = config.rho0;
    let mut trace = Vec::new();
    let mut termination = Termination::RhoCapHit;
    let mut steps = 0;
    let (mut dist_rank, mut dist_rows) = (f64::INFINITY, f64::INFINITY);

    while steps < config.max_rho_steps {
        let (next, block) = mm_inner_solve(data, config, &b, rho)?;
        steps += 1;
        b = next;
        let last = block.last().expect("k_max > 0 gives a nonempty trace");
        dist_rank = last.dist_rank;
        dist_rows = last.dist_rows;
        trace.extend(block);
        if dist_rank < config.feas_tol && dist_rows < config.feas_tol {
            termination = Termination::FeasibilityMet;
            break;
        }
        if steps < config.max_rho_steps {
            rho *= config.incr_factor;
        }
    }

    let estimate = hard_project(&b, config.constraints)?;
    let projection_shift = (estimate.as_matrix() - b.as_matrix()).norm();
    log::debug!(
        "penalty method finished after {steps} rho steps (rho = {rho:.4e}, {termination:?}); \
         final projection moved the estimate by {projection_shift:.3e}"
    );
    let factorization = factorize(&estimate, config.constraints.max_rank)?;
    let support = estimate.support();
    Ok(FitResult {
        estimate,
        factorization,
        support,
        trace,
        termination,
        final_rho: rho,
        rho_steps: steps,
        final_dist_rank: dist_rank,
        final_dist_rows: dist_rows,
        projection_shift,
    })
}

/// One cell of a tuning path.
#[derive(Debug)]
pub struct PathCell {
    pub sparsity: usize,
    pub rank: usize,
    pub result: Result<FitResult>,
}

/// Fits every `(s, r)` pair. For each `s`, the first (largest) rank starts from
/// zero and each following rank starts from the previous rank's estimate.
pub fn fit_path(
    data: &SurvivalDataset,
    config: &FitConfig,
    s_grid: &[usize],
    r_grid: &[usize],
) -> Result<Vec<PathCell>> {
    if s_grid.is_empty() || r_grid.is_empty() {
        return Err(LrCoxError::invalid("grid", "s and r grids must be nonempty"));
    }
    if r_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(LrCoxError::invalid("r_grid", "must be strictly decreasing"));
    }
    let zero = CoefficientMatrix::zeros(data.p(), data.num_populations());
    let mut cells = Vec::with_capacity(s_grid.len() * r_grid.len());
    for &s in s_grid {
        let mut warm: Option<CoefficientMatrix> = None;
        for &r in r_grid {
            let mut cell_config = config.clone();
            cell_config.constraints = ConstraintPair {
                max_rank: r,
                max_rows: s,
            };
            let init = warm.as_ref().unwrap_or(&zero);
            let result = fit_from(data, &cell_config, init);
            warm = result.as_ref().ok().map(|f| f.estimate.clone());
            cells.push(PathCell {
                sparsity: s,
                rank: r,
                result,
            });
        }
    }
    Ok(cells)
}
