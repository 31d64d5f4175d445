//! Breslow partial log-likelihood and its derivatives in linear-predictor space.
//!
//! For population j with linear predictors `eta = X b`, write
//! `f(eta) = -l(b)`. Each distinct event time `t` with `d_t` tied failures
//! contributes `c_t * log S_t - sum_{events at t} eta_i`, where
//! `S_t = sum_{k : y_k >= t} exp(eta_k)`. The weight is `c_t = d_t` for the
//! usual Breslow approximation and `c_t = d_t^2` when every tied event carries
//! its own `d_t` multiplier ([`TieMode::PerEventWeight`]). The two agree when
//! there are no tied event times.
//!
//! All risk-set sums are accumulated in a single pass over subjects in
//! descending time, after shifting `eta` by its maximum.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::matrix::CoefficientMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieMode {
    /// `d_t * log S_t` per distinct event time.
    #[default]
    StandardBreslow,
    /// `d_t * log S_t` per tied event, i.e. `d_t^2 * log S_t` per time.
    PerEventWeight,
}

impl TieMode {
    fn weight(self, d: usize) -> f64 {
        match self {
            TieMode::StandardBreslow => d as f64,
            TieMode::PerEventWeight => (d * d) as f64,
        }
    }
}

impl std::str::FromStr for TieMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard-breslow" | "breslow" => Ok(TieMode::StandardBreslow),
            "per-event-weight" | "literal" => Ok(TieMode::PerEventWeight),
            other => Err(format!(
                "unknown tie mode `{other}` (expected standard-breslow or per-event-weight)"
            )),
        }
    }
}

/// Value, gradient and Hessian diagonal of `f(eta) = -l` for one population.
#[derive(Debug, Clone)]
pub struct LikelihoodDerivatives {
    pub value: f64,
    pub gradient_eta: DVector<f64>,
    pub hessian_diag_eta: DVector<f64>,
}

fn check_eta(pop: &Population, eta: &DVector<f64>) -> Result<()> {
    if eta.len() != pop.n() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "population `{}` has {} subjects but {} linear predictors",
            pop.name(),
            pop.n(),
            eta.len()
        )));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(LrCoxError::NonFinite("linear predictors"));
    }
    Ok(())
}

fn shifted_exp(eta: &DVector<f64>) -> (f64, DVector<f64>) {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m = if m.is_finite() { m } else { 0.0 };
    (m, eta.map(|v| (v - m).exp()))
}

/// Partial log-likelihood `l` of one population at linear predictors `eta`.
pub fn population_loglik(pop: &Population, eta: &DVector<f64>, tie: TieMode) -> Result<f64> {
    check_eta(pop, eta)?;
    let (m, e) = shifted_exp(eta);
    let order = pop.descending_order();
    let status = pop.status();
    let mut risk = 0.0;
    let mut ll = 0.0;
    for g in pop.groups() {
        let mut event_eta = 0.0;
        for &k in &order[g.start..g.end] {
            risk += e[k];
            if status[k] {
                event_eta += eta[k];
            }
        }
        if g.events > 0 {
            ll += event_eta - tie.weight(g.events) * (risk.ln() + m);
        }
    }
    Ok(ll)
}

/// Value, gradient and Hessian diagonal of `-l` with respect to `eta`, in O(n).
pub fn population_derivatives(
    pop: &Population,
    eta: &DVector<f64>,
    tie: TieMode,
) -> Result<LikelihoodDerivatives> {
    check_eta(pop, eta)?;
    let (m, e) = shifted_exp(eta);
    let order = pop.descending_order();
    let status = pop.status();
    let groups = pop.groups();

    let mut risk_sums = vec![0.0; groups.len()];
    let mut risk = 0.0;
    let mut value = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        let mut event_eta = 0.0;
        for &k in &order[g.start..g.end] {
            risk += e[k];
            if status[k] {
                event_eta += eta[k];
            }
        }
        risk_sums[gi] = risk;
        if g.events > 0 {
            value += tie.weight(g.events) * (risk.ln() + m) - event_eta;
        }
    }

    let n = pop.n();
    let mut gradient = DVector::zeros(n);
    let mut hessian = DVector::zeros(n);
    let mut first = 0.0;
    let mut second = 0.0;
    for (gi, g) in groups.iter().enumerate().rev() {
        if g.events > 0 {
            let c = tie.weight(g.events);
            first += c / risk_sums[gi];
            second += c / (risk_sums[gi] * risk_sums[gi]);
        }
        for &k in &order[g.start..g.end] {
            let ek = e[k];
            gradient[k] = ek * first - if status[k] { 1.0 } else { 0.0 };
            hessian[k] = (ek * first - ek * ek * second).max(0.0);
        }
    }

    Ok(LikelihoodDerivatives {
        value,
        gradient_eta: gradient,
        hessian_diag_eta: hessian,
    })
}

fn check_dims(data: &SurvivalDataset, b: &CoefficientMatrix) -> Result<()> {
    if b.p() != data.p() || b.populations() != data.num_populations() {
        return Err(LrCoxError::DimensionMismatch(format!(
            "coefficients are {}x{} but data has p = {} and J = {}",
            b.p(),
            b.populations(),
            data.p(),
            data.num_populations()
        )));
    }
    Ok(())
}

/// `eta_(j) = X_(j) b_(j)` for every population.
pub fn linear_predictors(data: &SurvivalDataset, b: &CoefficientMatrix) -> Result<Vec<DVector<f64>>> {
    check_dims(data, b)?;
    Ok(data
        .populations()
        .iter()
        .enumerate()
        .map(|(j, pop)| pop.x() * b.as_matrix().column(j))
        .collect())
}

/// Partial log-likelihood summed over populations (fixed population order).
pub fn partial_loglik(data: &SurvivalDataset, b: &CoefficientMatrix, tie: TieMode) -> Result<f64> {
    let etas = linear_predictors(data, b)?;
    let parts = data
        .populations()
        .par_iter()
        .zip(etas.par_iter())
        .map(|(pop, eta)| population_loglik(pop, eta, tie))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = parts.iter().sum();
    if !total.is_finite() {
        return Err(LrCoxError::NonFinite("partial log-likelihood"));
    }
    Ok(total)
}

pub fn derivatives_eta(
    data: &SurvivalDataset,
    etas: &[DVector<f64>],
    tie: TieMode,
) -> Result<Vec<LikelihoodDerivatives>> {
    if etas.len() != data.num_populations() {
        return Err(LrCoxError::DimensionMismatch(
            "one linear-predictor vector per population is required".into(),
        ));
    }
    data.populations()
        .par_iter()
        .zip(etas.par_iter())
        .map(|(pop, eta)| population_derivatives(pop, eta, tie))
        .collect()
}

/// `-l(B) + mu * ||B||_F^2`.
pub fn penalized_objective(
    data: &SurvivalDataset,
    b: &CoefficientMatrix,
    mu: f64,
    tie: TieMode,
) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(LrCoxError::invalid("mu", format!("must be nonnegative, got {mu}")));
    }
    Ok(-partial_loglik(data, b, tie)? + mu * b.frobenius_sq())
}

/// Value of `-l(B)` and its gradient with respect to `B` (p x J).
pub fn neg_loglik_gradient(
    data: &SurvivalDataset,
    b: &CoefficientMatrix,
    tie: TieMode,
) -> Result<(f64, DMatrix<f64>)> {
    let etas = linear_predictors(data, b)?;
    let derivs = derivatives_eta(data, &etas, tie)?;
    let mut grad = DMatrix::zeros(data.p(), data.num_populations());
    let mut value = 0.0;
    for (j, (pop, d)) in data.populations().iter().zip(&derivs).enumerate() {
        grad.set_column(j, &pop.x().tr_mul(&d.gradient_eta));
        value += d.value;
    }
    Ok((value, grad))
}

/// Full Hessian of `-l` with respect to the coefficients, `X' H X`, built from
/// suffix sums over the risk sets in O(n p^2).
pub fn coefficient_hessian(pop: &Population, eta: &DVector<f64>, tie: TieMode) -> Result<DMatrix<f64>> {
    check_eta(pop, eta)?;
    let p = pop.p();
    let (_, e) = shifted_exp(eta);
    let x = pop.x();
    let order = pop.descending_order();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut hess = DMatrix::zeros(p, p);
    for g in pop.groups() {
        for &k in &order[g.start..g.end] {
            let xk = x.row(k).transpose();
            s0 += e[k];
            s1.axpy(e[k], &xk, 1.0);
            s2.ger(e[k], &xk, &xk, 1.0);
        }
        if g.events > 0 {
            let c = tie.weight(g.events);
            let mean = &s1 / s0;
            hess += &s2 * (c / s0);
            hess.ger(-c, &mean, &mean, 1.0);
        }
    }
    Ok(hess)
}

/// Newton's method with step halving for `-l(b) + mu ||b||^2` on one population.
/// With `mu = 0` this is the maximum partial likelihood estimator.
pub fn fit_cox_newton(
    pop: &Population,
    mu: f64,
    tie: TieMode,
    max_iters: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let p = pop.p();
    let objective = |b: &DVector<f64>| -> Result<f64> {
        let eta = pop.x() * b;
        Ok(-population_loglik(pop, &eta, tie)? + mu * b.norm_squared())
    };
    let mut b = DVector::zeros(p);
    let mut current = objective(&b)?;
    for _ in 0..max_iters {
        let eta = pop.x() * &b;
        let d = population_derivatives(pop, &eta, tie)?;
        let grad = pop.x().tr_mul(&d.gradient_eta) + &b * (2.0 * mu);
        let mut hess = coefficient_hessian(pop, &eta, tie)?;
        for k in 0..p {
            hess[(k, k)] += 2.0 * mu;
        }
        let step = hess
            .cholesky()
            .ok_or(LrCoxError::Singular("Cox information matrix"))?
            .solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &b - &step * t;
            let value = objective(&candidate)?;
            if value <= current + 1e-12 * (1.0 + current.abs()) {
                b = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.norm() * t <= tol * (1.0 + b.norm()) {
            break;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pop(times: &[f64], status: &[bool], x: &[f64], p: usize) -> Population {
        Population::new(
            "t",
            times.to_vec(),
            status.to_vec(),
            DMatrix::from_row_slice(times.len(), p, x),
        )
        .unwrap()
    }

    #[test]
    fn all_events_zero_coefficients() {
        let pop = pop(&[1.0, 2.0, 3.0], &[true; 3], &[0.3, -1.0, 2.0], 1);
        let eta = DVector::zeros(3);
        let ll = population_loglik(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert_relative_eq!(ll, -(3.0f64.ln() + 2.0f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(ll, -1.791759469228055, epsilon = 1e-12);
    }

    #[test]
    fn two_subject_value_and_gradient() {
        let pop = pop(&[1.0, 2.0], &[true, true], &[0.0, 0.0], 1);
        let eta = DVector::from_vec(vec![2.0f64.ln(), 0.0]);
        let ll = population_loglik(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert_relative_eq!(ll, 2.0f64.ln() - 3.0f64.ln(), epsilon = 1e-12);
        let d = population_derivatives(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert_relative_eq!(d.value, -ll, epsilon = 1e-12);
        assert_relative_eq!(d.gradient_eta[0], -1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(d.gradient_eta[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn no_events_means_zero_gradient() {
        let pop = pop(&[1.0, 2.0, 3.0], &[false; 3], &[0.1, 0.2, 0.3], 1);
        let eta = DVector::from_vec(vec![0.5, -0.2, 1.0]);
        let d = population_derivatives(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.gradient_eta.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tie_modes_differ_only_with_tied_events() {
        let tied = pop(&[1.0, 1.0, 2.0], &[true, true, true], &[0.0; 3], 1);
        let eta = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let a = population_loglik(&tied, &eta, TieMode::StandardBreslow).unwrap();
        let b = population_loglik(&tied, &eta, TieMode::PerEventWeight).unwrap();
        let s1: f64 = eta.iter().map(|v| v.exp()).sum();
        let s2 = 0.4f64.exp();
        assert_relative_eq!(a, 0.1 + 0.4 - 2.0 * s1.ln() - s2.ln(), epsilon = 1e-12);
        assert_relative_eq!(b, 0.1 + 0.4 - 4.0 * s1.ln() - s2.ln(), epsilon = 1e-12);

        let free = pop(&[1.0, 1.5, 2.0], &[true, true, false], &[0.0; 3], 1);
        let a = population_loglik(&free, &eta, TieMode::StandardBreslow).unwrap();
        let b = population_loglik(&free, &eta, TieMode::PerEventWeight).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_predictors_do_not_overflow() {
        let pop = pop(&[1.0, 2.0, 3.0], &[true; 3], &[0.0; 3], 1);
        let eta = DVector::from_vec(vec![800.0, 790.0, 805.0]);
        let ll = population_loglik(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert!(ll.is_finite());
        let shifted = eta.add_scalar(-800.0);
        let ll2 = population_loglik(&pop, &shifted, TieMode::StandardBreslow).unwrap();
        assert_relative_eq!(ll, ll2, epsilon = 1e-9);
    }

    #[test]
    fn penalized_objective_examples() {
        let p = pop(&[1.0, 2.0, 3.0], &[true, false, true], &[0.5, 1.0, -0.3, 0.2, 0.0, 1.0], 2);
        let data = SurvivalDataset::with_default_names(vec![p]).unwrap();
        let zero = CoefficientMatrix::zeros(2, 1);
        let ll0 = partial_loglik(&data, &zero, TieMode::StandardBreslow).unwrap();
        assert_eq!(penalized_objective(&data, &zero, 3.0, TieMode::StandardBreslow).unwrap(), -ll0);
        let b = CoefficientMatrix::new(DMatrix::from_row_slice(2, 1, &[0.3, -0.2])).unwrap();
        let f0 = penalized_objective(&data, &b, 0.0, TieMode::StandardBreslow).unwrap();
        let f1 = penalized_objective(&data, &b, 0.5, TieMode::StandardBreslow).unwrap();
        assert_relative_eq!(f0, -partial_loglik(&data, &b, TieMode::StandardBreslow).unwrap());
        assert!(f1 > f0);
        assert!(penalized_objective(&data, &b, -1.0, TieMode::StandardBreslow).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = pop(&[1.0, 2.0], &[true, true], &[0.0, 0.0], 1);
        let data = SurvivalDataset::with_default_names(vec![p]).unwrap();
        let b = CoefficientMatrix::zeros(2, 1);
        assert!(matches!(
            partial_loglik(&data, &b, TieMode::StandardBreslow),
            Err(LrCoxError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn coefficient_hessian_matches_finite_differences() {
        let p = pop(
            &[3.0, 1.0, 2.0, 2.0, 5.0, 4.0],
            &[true, true, false, true, true, false],
            &[0.1, 1.0, -0.5, 0.3, 0.7, -0.2, 1.2, 0.0, -1.0, 0.4, 0.2, 0.9],
            2,
        );
        let b = DVector::from_vec(vec![0.3, -0.4]);
        let grad = |b: &DVector<f64>| {
            let eta = p.x() * b;
            p.x().tr_mul(&population_derivatives(&p, &eta, TieMode::StandardBreslow).unwrap().gradient_eta)
        };
        let h = coefficient_hessian(&p, &(p.x() * &b), TieMode::StandardBreslow).unwrap();
        let step = 1e-6;
        for k in 0..2 {
            let mut up = b.clone();
            up[k] += step;
            let mut down = b.clone();
            down[k] -= step;
            let col = (grad(&up) - grad(&down)) / (2.0 * step);
            for l in 0..2 {
                assert_relative_eq!(h[(l, k)], col[l], epsilon = 1e-6);
            }
        }
    }
}
