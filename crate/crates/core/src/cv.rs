//! K-fold selection of `(s, r)` by the cross-validated linear-predictor score.
//!
//! Held-out linear predictors from every fold are pooled per population and
//! scored against full-population risk sets:
//!
//! ```text
//! score = sum_j w_j sum_i delta_ji [phi_ji - log sum_{k in R_ji} exp(phi_jk)]
//! ```

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::likelihood::{population_loglik, TieMode};
use crate::matrix::CoefficientMatrix;
use crate::solver::{fit_path, FitConfig, Termination};

pub const MAX_FOLD_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `w_j = 1`.
    #[default]
    Unit,
    /// `w_j = 1 / n_j`.
    InverseSize,
}

impl WeightMode {
    pub fn weights(self, data: &SurvivalDataset) -> Vec<f64> {
        data.populations()
            .iter()
            .map(|p| match self {
                WeightMode::Unit => 1.0,
                WeightMode::InverseSize => 1.0 / p.n() as f64,
            })
            .collect()
    }
}

impl std::str::FromStr for WeightMode {
    type Err = LrCoxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" | "one" => Ok(WeightMode::Unit),
            "inverse-size" | "inverse-n" => Ok(WeightMode::InverseSize),
            _ => Err(LrCoxError::invalid(
                "weights",
                format!("expected `unit` or `inverse-size`, got `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub s_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
    pub weights: WeightMode,
    pub seed: u64,
}

impl CvConfig {
    pub fn new(folds: usize, s_grid: Vec<usize>, r_grid: Vec<usize>, seed: u64) -> Self {
        Self {
            folds,
            s_grid,
            r_grid,
            weights: WeightMode::Unit,
            seed,
        }
    }

    pub fn problems(&self, data: &SurvivalDataset) -> Vec<String> {
        let mut out = Vec::new();
        let min_n = data.sizes().into_iter().min().unwrap_or(0);
        if self.folds < 2 || self.folds > min_n {
            out.push(format!(
                "folds must lie in [2, {min_n}] (smallest population), got {}",
                self.folds
            ));
        }
        if self.s_grid.is_empty() || self.r_grid.is_empty() {
            out.push("s and r grids must be nonempty".into());
        }
        let upper_r = data.p().min(data.num_populations());
        if let Some(s) = self.s_grid.iter().find(|&&s| s == 0 || s > data.p()) {
            out.push(format!("sparsity {s} outside [1, {}]", data.p()));
        }
        if let Some(r) = self.r_grid.iter().find(|&&r| r == 0 || r > upper_r) {
            out.push(format!("rank {r} outside [1, {upper_r}]"));
        }
        out
    }
}

/// Fold label of every subject, per population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub labels: Vec<Vec<usize>>,
}

impl FoldAssignment {
    /// Per-population indices outside fold `k`.
    pub fn complement(&self, k: usize) -> Vec<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| (0..l.len()).filter(|&i| l[i] != k).collect())
            .collect()
    }

    pub fn members(&self, k: usize) -> Vec<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| (0..l.len()).filter(|&i| l[i] == k).collect())
            .collect()
    }
}

fn complements_have_events(pop: &Population, labels: &[usize], k: usize) -> bool {
    (0..k).all(|fold| (0..pop.n()).any(|i| labels[i] != fold && pop.status()[i]))
}

/// Random near-equal partition of each population into `k` folds, such that
/// every fold's complement keeps at least one event. Population j draws from
/// its own ChaCha stream so assignments do not depend on other populations.
pub fn assign_folds(data: &SurvivalDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(LrCoxError::invalid("folds", format!("need at least 2, got {k}")));
    }
    let mut labels = Vec::with_capacity(data.num_populations());
    for (j, pop) in data.populations().iter().enumerate() {
        if pop.n() < k {
            return Err(LrCoxError::CrossValidation(format!(
                "population `{}` has {} subjects, fewer than {k} folds",
                pop.name(),
                pop.n()
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let mut found = None;
        for _ in 0..MAX_FOLD_ATTEMPTS {
            let mut perm: Vec<usize> = (0..pop.n()).collect();
            perm.shuffle(&mut rng);
            let mut lab = vec![0; pop.n()];
            for (pos, &i) in perm.iter().enumerate() {
                lab[i] = pos % k;
            }
            if complements_have_events(pop, &lab, k) {
                found = Some(lab);
                break;
            }
        }
        match found {
            Some(l) => labels.push(l),
            None => {
                return Err(LrCoxError::CrossValidation(format!(
                    "population `{}` ({} events) leaves a fold complement without events \
                     after {MAX_FOLD_ATTEMPTS} attempts",
                    pop.name(),
                    pop.events()
                )))
            }
        }
    }
    Ok(FoldAssignment { folds: k, labels })
}

/// `sum_i delta_i [phi_i - log sum_{R_i} exp(phi)]` over full-population risk
/// sets.
pub fn population_cv_score(pop: &Population, phi: &DVector<f64>) -> Result<f64> {
    population_loglik(pop, phi, TieMode::StandardBreslow)
}

/// Weighted score of pooled held-out predictors (`phi[j]` for population j).
pub fn pooled_score(data: &SurvivalDataset, phi: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
    if phi.len() != data.num_populations() || weights.len() != data.num_populations() {
        return Err(LrCoxError::DimensionMismatch(
            "one predictor vector and one weight per population required".into(),
        ));
    }
    let mut total = 0.0;
    for ((pop, f), w) in data.populations().iter().zip(phi).zip(weights) {
        total += w * population_cv_score(pop, f)?;
    }
    Ok(total)
}

/// Which fold fit produced each held-out predictor, and which subjects that
/// fit was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// `predicted_by[j][i]`: fold whose fit produced subject i's predictor.
    pub predicted_by: Vec<Vec<usize>>,
    /// `trained_on[k][j]`: population-j indices passed to fold k's fit.
    pub trained_on: Vec<Vec<Vec<usize>>>,
}

impl Provenance {
    /// True when no held-out predictor came from a fit that saw its subject.
    pub fn fold_exclusive(&self) -> bool {
        self.predicted_by.iter().enumerate().all(|(j, by)| {
            by.iter().enumerate().all(|(i, &k)| {
                k < self.trained_on.len() && self.trained_on[k][j].binary_search(&i).is_err()
            })
        })
    }
}

fn fold_predictions(
    data: &SurvivalDataset,
    folds: &FoldAssignment,
    estimates: &[CoefficientMatrix],
) -> (Vec<DVector<f64>>, Vec<Vec<usize>>) {
    let mut phi: Vec<DVector<f64>> = data.sizes().iter().map(|&n| DVector::zeros(n)).collect();
    let mut by: Vec<Vec<usize>> = data.sizes().iter().map(|&n| vec![usize::MAX; n]).collect();
    for (k, est) in estimates.iter().enumerate() {
        for (j, pop) in data.populations().iter().enumerate() {
            let b = est.column(j);
            for i in (0..pop.n()).filter(|&i| folds.labels[j][i] == k) {
                phi[j][i] = pop.x().row(i).transpose().dot(&b);
                by[j][i] = k;
            }
        }
    }
    (phi, by)
}

/// Score of a single `(s, r)` cell.
pub fn cv_score(
    data: &SurvivalDataset,
    folds: &FoldAssignment,
    s: usize,
    r: usize,
    config: &FitConfig,
    weights: &[f64],
) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.constraints.max_rows = s;
    cfg.constraints.max_rank = r;
    let estimates = (0..folds.folds)
        .into_par_iter()
        .map(|k| {
            let train = data.subset(&folds.complement(k))?;
            crate::solver::fit(&train, &cfg).map(|f| f.estimate)
        })
        .collect::<Result<Vec<_>>>()?;
    let (phi, _) = fold_predictions(data, folds, &estimates);
    pooled_score(data, &phi, weights)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldDiagnostic {
    pub fold: usize,
    pub sparsity: usize,
    pub rank: usize,
    pub termination: Option<Termination>,
    pub rho_steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    /// Ascending sparsity levels (rows of `scores`).
    pub s_grid: Vec<usize>,
    /// Ascending ranks (columns of `scores`).
    pub r_grid: Vec<usize>,
    /// `None` marks a cell where some fold fit failed (scored as -infinity).
    pub scores: Vec<Vec<Option<f64>>>,
    pub selected_sparsity: usize,
    pub selected_rank: usize,
    pub best_score: f64,
    pub weights: Vec<f64>,
    pub folds: FoldAssignment,
    pub diagnostics: Vec<FoldDiagnostic>,
    /// Provenance of the held-out predictors of every cell, in row-major
    /// `(s, r)` order.
    #[serde(skip)]
    pub provenance: Vec<Provenance>,
}

impl CvResult {
    pub fn score(&self, s: usize, r: usize) -> Option<f64> {
        let a = self.s_grid.iter().position(|&v| v == s)?;
        let b = self.r_grid.iter().position(|&v| v == r)?;
        self.scores[a][b]
    }
}

/// Cell maximizing the score; ties go to smaller `s`, then smaller `r`.
/// Cells are visited in ascending order so only strict improvements move the
/// choice.
pub fn argmax_cell(scores: &[Vec<Option<f64>>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (a, row) in scores.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, _, bv)| v > bv) {
                    best = Some((a, b, v));
                }
            }
        }
    }
    best
}

fn normalized(grid: &[usize]) -> Vec<usize> {
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

/// Evaluates every grid cell, running one warm-started path per fold.
pub fn select(data: &SurvivalDataset, cv: &CvConfig, config: &FitConfig) -> Result<CvResult> {
    let problems = cv.problems(data);
    if !problems.is_empty() {
        return Err(LrCoxError::invalid("cv config", problems.join("; ")));
    }
    let s_grid = normalized(&cv.s_grid);
    let r_grid = normalized(&cv.r_grid);
    let r_desc: Vec<usize> = r_grid.iter().rev().cloned().collect();
    let folds = assign_folds(data, cv.folds, cv.seed)?;
    let weights = cv.weights.weights(data);

    // paths[k][cell] with cells in (s ascending, r descending) order.
    let paths = (0..folds.folds)
        .into_par_iter()
        .map(|k| -> Result<(Vec<Vec<usize>>, Vec<crate::solver::PathCell>)> {
            let idx = folds.complement(k);
            let train = data.subset(&idx)?;
            Ok((idx, fit_path(&train, config, &s_grid, &r_desc)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores = vec![vec![None; r_grid.len()]; s_grid.len()];
    let mut provenance = Vec::with_capacity(s_grid.len() * r_grid.len());
    let mut diagnostics = Vec::new();
    for (a, &s) in s_grid.iter().enumerate() {
        for (b, &r) in r_grid.iter().enumerate() {
            let cell = a * r_grid.len() + (r_grid.len() - 1 - b);
            let mut estimates = Vec::with_capacity(folds.folds);
            for (k, (_, path)) in paths.iter().enumerate() {
                let pc = &path[cell];
                debug_assert!(pc.sparsity == s && pc.rank == r);
                match &pc.result {
                    Ok(f) => {
                        diagnostics.push(FoldDiagnostic {
                            fold: k,
                            sparsity: s,
                            rank: r,
                            termination: Some(f.termination),
                            rho_steps: f.rho_steps,
                            error: None,
                        });
                        estimates.push(f.estimate.clone());
                    }
                    Err(e) => diagnostics.push(FoldDiagnostic {
                        fold: k,
                        sparsity: s,
                        rank: r,
                        termination: None,
                        rho_steps: 0,
                        error: Some(e.to_string()),
                    }),
                }
            }
            if estimates.len() < folds.folds {
                log::warn!("cell (s = {s}, r = {r}) failed in at least one fold; scored as -inf");
                provenance.push(Provenance {
                    predicted_by: Vec::new(),
                    trained_on: Vec::new(),
                });
                continue;
            }
            let (phi, by) = fold_predictions(data, &folds, &estimates);
            scores[a][b] = match pooled_score(data, &phi, &weights) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("cell (s = {s}, r = {r}) score failed: {e}");
                    None
                }
            };
            provenance.push(Provenance {
                predicted_by: by,
                trained_on: paths.iter().map(|(idx, _)| idx.clone()).collect(),
            });
        }
    }
    let (a, b, best) = argmax_cell(&scores).ok_or_else(|| {
        LrCoxError::CrossValidation("every grid cell failed".into())
    })?;
    Ok(CvResult {
        selected_sparsity: s_grid[a],
        selected_rank: r_grid[b],
        best_score: best,
        s_grid,
        r_grid,
        scores,
        weights,
        folds,
        diagnostics,
        provenance,
    })
}
