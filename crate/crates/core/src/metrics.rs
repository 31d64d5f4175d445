//! Evaluation metrics: model error, concordance, Brier score with a Breslow
//! baseline, and transfer of learned factors to new populations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::likelihood::{fit_cox_newton, TieMode};
use crate::matrix::CoefficientMatrix;

/// Lower sample quantile: the order statistic at index `floor(q (n - 1))`.
pub fn quantile_lower(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx]
}

/// `tr{(B_hat - B*)' Sigma (B_hat - B*)}`.
pub fn model_error(
    b_hat: &CoefficientMatrix,
    b_star: &CoefficientMatrix,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    if b_hat.p() != b_star.p() || b_hat.populations() != b_star.populations() {
        return Err(LrCoxError::DimensionMismatch(
            "estimate and truth must have the same shape".into(),
        ));
    }
    if sigma.nrows() != b_hat.p() || sigma.ncols() != b_hat.p() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "Sigma must be {p}x{p}",
            p = b_hat.p()
        )));
    }
    if (sigma - sigma.transpose()).amax() > 1e-10 {
        return Err(LrCoxError::invalid("sigma", "must be symmetric"));
    }
    let delta = b_hat.as_matrix() - b_star.as_matrix();
    Ok((delta.transpose() * sigma * &delta).trace())
}

/// Concordance for uncensored data with strict inequalities:
/// `sum_{i,k} 1(y_i > y_k) 1(eta_i < eta_k) / sum_{i,k} 1(y_i > y_k)`.
/// Tied predictors earn no credit. `None` when all times are equal.
pub fn c_index_uncensored(times: &[f64], eta: &[f64]) -> Option<f64> {
    assert_eq!(times.len(), eta.len(), "times and predictors must align");
    let mut num = 0u64;
    let mut den = 0u64;
    for i in 0..times.len() {
        for k in 0..times.len() {
            if times[i] > times[k] {
                den += 1;
                if eta[i] < eta[k] {
                    num += 1;
                }
            }
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harrell's concordance under right censoring. A pair is usable when the
/// shorter time is an observed failure; tied predictors earn half credit.
/// `None` when no pair is usable.
pub fn c_index_censored(times: &[f64], status: &[bool], eta: &[f64]) -> Option<f64> {
    assert!(times.len() == status.len() && times.len() == eta.len());
    let mut concordant = 0.0;
    let mut usable = 0u64;
    for i in 0..times.len() {
        if !status[i] {
            continue;
        }
        for k in 0..times.len() {
            if times[i] < times[k] {
                usable += 1;
                if eta[i] > eta[k] {
                    concordant += 1.0;
                } else if eta[i] == eta[k] {
                    concordant += 0.5;
                }
            }
        }
    }
    (usable > 0).then(|| concordant / usable as f64)
}

/// Cumulative baseline hazard as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub jump_times: Vec<f64>,
    pub increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BaselineHazard {
    pub fn cumulative_at(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&u| u <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// `S(t | x) = exp(-H0(t) exp(eta))`.
    pub fn survival(&self, t: f64, eta: f64) -> f64 {
        (-self.cumulative_at(t) * eta.exp()).exp()
    }
}

/// Breslow estimator: `H0(t) = sum_{event times u <= t} d_u / sum_{k in R(u)} exp(x_k' b)`.
pub fn breslow_baseline(pop: &Population, b: &DVector<f64>) -> Result<BaselineHazard> {
    if b.len() != pop.p() {
        return Err(LrCoxError::DimensionMismatch(
            "coefficient length must equal the number of predictors".into(),
        ));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LrCoxError::NonFinite("baseline coefficients"));
    }
    let eta = pop.x() * b;
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m = if m.is_finite() { m } else { 0.0 };
    let order = pop.descending_order();
    let mut risk = 0.0;
    let mut jumps = Vec::new();
    for g in pop.groups() {
        for &k in &order[g.start..g.end] {
            risk += (eta[k] - m).exp();
        }
        if g.events > 0 {
            jumps.push((g.time, g.events as f64 * (-m).exp() / risk));
        }
    }
    jumps.reverse();
    let mut acc = 0.0;
    let cumulative = jumps
        .iter()
        .map(|&(_, inc)| {
            acc += inc;
            acc
        })
        .collect();
    Ok(BaselineHazard {
        jump_times: jumps.iter().map(|j| j.0).collect(),
        increments: jumps.iter().map(|j| j.1).collect(),
        cumulative,
    })
}

/// `mean_i {1(y_i > t) - S_hat(t | x_i)}^2` given predicted survival values.
pub fn brier_from_survival(times: &[f64], survival_at_t: &[f64], t: f64) -> f64 {
    assert_eq!(times.len(), survival_at_t.len());
    let n = times.len() as f64;
    times
        .iter()
        .zip(survival_at_t)
        .map(|(&y, &s)| {
            let alive = if y > t { 1.0 } else { 0.0 };
            (alive - s).powi(2)
        })
        .sum::<f64>()
        / n
}

/// Brier score of one population's test data at time `t`.
pub fn brier_score(
    test: &Population,
    b: &DVector<f64>,
    baseline: &BaselineHazard,
    t: f64,
) -> f64 {
    let eta = test.x() * b;
    let surv: Vec<f64> = eta.iter().map(|&e| baseline.survival(t, e)).collect();
    brier_from_survival(test.time(), &surv, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierQuantiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMetrics {
    pub name: String,
    pub c_index: Option<f64>,
    pub c_index_censored: Option<f64>,
    pub brier: Option<BrierQuantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_error: Option<f64>,
    /// Mean over populations of the strict uncensored C-index (when the test
    /// data are uncensored) or of Harrell's C otherwise.
    pub c_index: Option<f64>,
    pub c_index_censored: Option<f64>,
    /// Mean over populations; absent when the test data are censored.
    pub brier: Option<BrierQuantiles>,
    pub per_population: Vec<PopulationMetrics>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Metrics of `b_hat` on `test`, with the baseline hazard estimated on `train`.
pub fn evaluate(
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    b_hat: &CoefficientMatrix,
    truth: Option<(&CoefficientMatrix, &DMatrix<f64>)>,
) -> Result<MetricReport> {
    if train.num_populations() != test.num_populations()
        || b_hat.populations() != test.num_populations()
        || b_hat.p() != test.p()
        || train.p() != test.p()
    {
        return Err(LrCoxError::DimensionMismatch(
            "training data, test data and coefficients must agree on p and J".into(),
        ));
    }
    let mut per_population = Vec::with_capacity(test.num_populations());
    for (j, (tr, te)) in train.populations().iter().zip(test.populations()).enumerate() {
        let b = b_hat.column(j);
        let eta: Vec<f64> = (te.x() * &b).iter().cloned().collect();
        let uncensored = te.events() == te.n();
        let harrell = c_index_censored(te.time(), te.status(), &eta);
        let c_index = if uncensored {
            c_index_uncensored(te.time(), &eta)
        } else {
            harrell
        };
        let brier = if uncensored {
            let baseline = breslow_baseline(tr, &b)?;
            let at = |q: f64| brier_score(te, &b, &baseline, quantile_lower(te.time(), q));
            Some(BrierQuantiles {
                q25: at(0.25),
                q50: at(0.5),
                q75: at(0.75),
            })
        } else {
            log::warn!(
                "population `{}`: test outcomes are censored; Brier score skipped",
                te.name()
            );
            None
        };
        per_population.push(PopulationMetrics {
            name: te.name().to_string(),
            c_index,
            c_index_censored: harrell,
            brier,
        });
    }
    let brier = if per_population.iter().all(|m| m.brier.is_some()) {
        let n = per_population.len() as f64;
        let sum = |f: fn(&BrierQuantiles) -> f64| {
            per_population.iter().map(|m| f(m.brier.as_ref().unwrap())).sum::<f64>() / n
        };
        Some(BrierQuantiles {
            q25: sum(|b| b.q25),
            q50: sum(|b| b.q50),
            q75: sum(|b| b.q75),
        })
    } else {
        None
    };
    let model_error = match truth {
        Some((b_star, sigma)) => Some(model_error(b_hat, b_star, sigma)?),
        None => None,
    };
    Ok(MetricReport {
        model_error,
        c_index: mean_of(per_population.iter().map(|m| m.c_index)),
        c_index_censored: mean_of(per_population.iter().map(|m| m.c_index_censored)),
        brier,
        per_population,
    })
}

/// Ridge weight for the low-dimensional refit; only guards collinear factors.
pub const TRANSFER_RIDGE: f64 = 1e-6;

/// Cox models fitted on factor scores `x' U` for populations not used to
/// learn `U`.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub factors: DMatrix<f64>,
    pub fingerprint: u64,
    pub population_names: Vec<String>,
    pub coefficients: Vec<DVector<f64>>,
}

/// FNV-1a over the bit patterns of a matrix's entries and shape.
pub fn matrix_fingerprint(m: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed((m.nrows() as u64).to_le_bytes());
    feed((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        feed(v.to_bits().to_le_bytes());
    }
    h
}

impl TransferModel {
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.factors
    }

    /// Linear predictors `x' U b_j` for test covariates of population `j`.
    pub fn predict(&self, j: usize, x: &DMatrix<f64>) -> DVector<f64> {
        self.transform(x) * &self.coefficients[j]
    }

    /// The same coefficients expressed on the original predictors, `U b_j`.
    pub fn coefficient_matrix(&self) -> Result<CoefficientMatrix> {
        let mut out = DMatrix::zeros(self.factors.nrows(), self.coefficients.len());
        for (j, b) in self.coefficients.iter().enumerate() {
            out.set_column(j, &(&self.factors * b));
        }
        CoefficientMatrix::new(out)
    }
}

/// Projects each population's covariates onto the factors `U` and fits a
/// standard Cox model on the scores. `factor_predictors` names the rows of `U`
/// and must match the dataset's predictor order.
pub fn factor_transfer(
    factors: &DMatrix<f64>,
    factor_predictors: &[String],
    train: &SurvivalDataset,
    tie: TieMode,
) -> Result<TransferModel> {
    if factor_predictors != train.predictor_names() {
        let diff: Vec<String> = factor_predictors
            .iter()
            .zip(train.predictor_names())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| format!("row {i}: `{a}` vs `{b}`"))
            .take(10)
            .collect();
        return Err(LrCoxError::Data(format!(
            "factor predictors do not match the dataset ({} vs {} names; {})",
            factor_predictors.len(),
            train.p(),
            diff.join(", ")
        )));
    }
    if factors.nrows() != train.p() || factors.ncols() == 0 || factors.ncols() > train.p() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "factor matrix is {}x{}, need p = {} rows and 1..=p columns",
            factors.nrows(),
            factors.ncols(),
            train.p()
        )));
    }
    let coefficients = train
        .populations()
        .iter()
        .map(|pop| {
            let scores = pop.with_covariates(pop.x() * factors)?;
            fit_cox_newton(&scores, TRANSFER_RIDGE, tie, 100, 1e-10)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferModel {
        factors: factors.clone(),
        fingerprint: matrix_fingerprint(factors),
        population_names: train
            .populations()
            .iter()
            .map(|p| p.name().to_string())
            .collect(),
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn model_error_examples() {
        let b = CoefficientMatrix::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        let zero = CoefficientMatrix::zeros(2, 1);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.7, 1.0]);
        assert_relative_eq!(model_error(&b, &zero, &sigma).unwrap(), 3.4, epsilon = 1e-14);
        assert_eq!(model_error(&b, &b, &sigma).unwrap(), 0.0);
        let eye = DMatrix::identity(2, 2);
        assert_relative_eq!(model_error(&b, &zero, &eye).unwrap(), 2.0);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.6, 1.0]);
        assert!(model_error(&b, &zero, &asym).is_err());
    }

    #[test]
    fn strict_concordance_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_eq!(c_index_uncensored(&y, &neg), Some(1.0));
        assert_eq!(c_index_uncensored(&y, &y), Some(0.0));
        assert_eq!(c_index_uncensored(&y, &[0.3; 4]), Some(0.0));
    }

    #[test]
    fn harrell_examples() {
        let c = c_index_censored(&[1.0, 2.0, 3.0], &[true, true, false], &[3.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(c, 2.0 / 3.0);
        assert_eq!(c_index_censored(&[1.0, 2.0], &[false, false], &[0.0, 1.0]), None);
        let y = [1.0, 2.0, 3.0];
        assert_eq!(c_index_censored(&y, &[true; 3], &[-1.0, -2.0, -3.0]), Some(1.0));
        assert_eq!(c_index_censored(&y, &[true; 3], &[0.0; 3]), Some(0.5));
    }

    #[test]
    fn breslow_increments_and_survival() {
        let pop = Population::new("b", vec![1.0, 2.0, 3.0], vec![true; 3], DMatrix::zeros(3, 1)).unwrap();
        let base = breslow_baseline(&pop, &DVector::zeros(1)).unwrap();
        assert_eq!(base.jump_times, vec![1.0, 2.0, 3.0]);
        assert_relative_eq!(base.increments[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(base.increments[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(base.increments[2], 1.0, epsilon = 1e-15);
        assert_eq!(base.survival(0.5, 3.0), 1.0);
        let mut prev = 1.0;
        for t in [0.0, 0.9, 1.0, 1.5, 2.0, 2.5, 3.0, 10.0] {
            let s = base.survival(t, 0.4);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_from_survival(&[5.0, 6.0], &[1.0, 1.0], 2.0), 0.0);
        assert_relative_eq!(brier_from_survival(&[1.0, 6.0], &[0.5, 0.5], 2.0), 0.25);
        assert_relative_eq!(brier_from_survival(&[1.0, 3.0], &[0.2, 0.9], 2.0), 0.025, epsilon = 1e-15);
    }

    #[test]
    fn quantiles_use_lower_order_statistic() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0, 6.0];
        assert_eq!(quantile_lower(&v, 0.5), 3.0);
        assert_eq!(quantile_lower(&v, 0.25), 2.0);
        assert_eq!(quantile_lower(&v, 1.0), 6.0);
    }

    #[test]
    fn transfer_rejects_mismatched_predictors() {
        let pop = Population::new("a", vec![1.0, 2.0], vec![true, true], DMatrix::zeros(2, 2)).unwrap();
        let data = SurvivalDataset::with_default_names(vec![pop]).unwrap();
        let u = DMatrix::identity(2, 1);
        let err = factor_transfer(&u, &["x1".into(), "y2".into()], &data, TieMode::StandardBreslow);
        assert!(matches!(err, Err(LrCoxError::Data(_))));
    }
}
