mod common;

use common::*;
use lrcox::likelihood::{
    coefficient_hessian, fit_cox_newton, neg_loglik_gradient, partial_loglik, population_derivatives,
    population_loglik,
};
use lrcox::{CoefficientMatrix, TieMode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const MODES: [TieMode; 2] = [TieMode::StandardBreslow, TieMode::PerEventWeight];

#[test]
fn value_matches_direct_summation_with_ties() {
    let mut r = rng(1);
    for trial in 0..30 {
        let pop = random_population(&mut r, "a", 25 + trial, 3, trial % 2 == 0);
        let eta = DVector::from_fn(pop.n(), |i, _| ((i * 7 + trial) % 11) as f64 * 0.3 - 1.5);
        for tie in MODES {
            let fast = population_loglik(&pop, &eta, tie).unwrap();
            let slow = brute_pop_loglik(&pop, &eta, tie);
            assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()), "{tie:?}: {fast} vs {slow}");
            let d = population_derivatives(&pop, &eta, tie).unwrap();
            assert!((d.value + slow).abs() <= 1e-10 * (1.0 + slow.abs()));
        }
    }
}

#[test]
fn tie_modes_coincide_without_ties() {
    let mut r = rng(2);
    let pop = random_population(&mut r, "a", 40, 2, false);
    let eta = pop.x() * DVector::from_vec(vec![0.4, -0.2]);
    let a = population_loglik(&pop, &eta, TieMode::StandardBreslow).unwrap();
    let b = population_loglik(&pop, &eta, TieMode::PerEventWeight).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn eta_derivatives_match_finite_differences() {
    let mut r = rng(3);
    for trial in 0..10 {
        let pop = random_population(&mut r, "a", 30, 2, trial % 2 == 1);
        let eta = pop.x() * DVector::from_vec(vec![0.5, -0.3]);
        for tie in MODES {
            let d = population_derivatives(&pop, &eta, tie).unwrap();
            let f = |e: &DVector<f64>| -brute_pop_loglik(&pop, e, tie);
            let h = 1e-5;
            for i in 0..pop.n() {
                let mut up = eta.clone();
                up[i] += h;
                let mut dn = eta.clone();
                dn[i] -= h;
                let g = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((d.gradient_eta[i] - g).abs() <= 1e-6 * g.abs().max(1.0));
                let h2 = 1e-3;
                let mut up2 = eta.clone();
                up2[i] += h2;
                let mut dn2 = eta.clone();
                dn2[i] -= h2;
                let hd = (f(&up2) - 2.0 * f(&eta) + f(&dn2)) / (h2 * h2);
                assert!((d.hessian_diag_eta[i] - hd).abs() <= 1e-4 * hd.abs().max(1.0));
            }
        }
    }
}

#[test]
fn coefficient_gradient_and_hessian_match_direct_sums() {
    let mut r = rng(4);
    for trial in 0..5 {
        let pop = random_population(&mut r, "a", 35, 4, trial % 2 == 0);
        let b = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.0]);
        let eta = pop.x() * &b;
        let (g, h) = brute_grad_hess(&pop, &b);
        let d = population_derivatives(&pop, &eta, TieMode::StandardBreslow).unwrap();
        let fast_g = pop.x().tr_mul(&d.gradient_eta);
        assert!((fast_g - &g).amax() < 1e-10);
        let fast_h = coefficient_hessian(&pop, &eta, TieMode::StandardBreslow).unwrap();
        assert!((fast_h - &h).amax() < 1e-10);
    }
}

#[test]
fn dataset_gradient_stacks_population_gradients() {
    let mut r = rng(5);
    let data = random_dataset(&mut r, &[20, 30, 25], 3, true);
    let b = CoefficientMatrix::new(gaussian_matrix(&mut r, 3, 3) * 0.2).unwrap();
    let (value, grad) = neg_loglik_gradient(&data, &b, TieMode::StandardBreslow).unwrap();
    let total = partial_loglik(&data, &b, TieMode::StandardBreslow).unwrap();
    assert!((value + total).abs() < 1e-10);
    for (j, pop) in data.populations().iter().enumerate() {
        let (g, _) = brute_grad_hess(pop, &b.column(j));
        assert!((grad.column(j) - g).amax() < 1e-10);
    }
}

#[test]
fn newton_solver_matches_independent_newton() {
    let mut r = rng(6);
    for mu in [0.0, 0.5] {
        let pop = random_population(&mut r, "a", 60, 3, false);
        let fast = fit_cox_newton(&pop, mu, TieMode::StandardBreslow, 100, 1e-12).unwrap();
        let slow = newton_ridge(&pop, mu);
        assert!((fast - slow).amax() < 1e-8);
    }
}

#[test]
fn rejects_mismatched_predictors() {
    let mut r = rng(7);
    let pop = random_population(&mut r, "a", 10, 2, false);
    assert!(population_loglik(&pop, &DVector::zeros(9), TieMode::StandardBreslow).is_err());
    let mut eta = DVector::zeros(10);
    eta[3] = f64::NAN;
    assert!(population_derivatives(&pop, &eta, TieMode::StandardBreslow).is_err());
    let data = random_dataset(&mut r, &[10, 10], 2, false);
    let wrong = CoefficientMatrix::new(DMatrix::zeros(3, 2)).unwrap();
    assert!(partial_loglik(&data, &wrong, TieMode::StandardBreslow).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_invariance(seed in 0u64..1000, shift in -50.0f64..50.0, literal in any::<bool>()) {
        let mut r = rng(seed);
        let pop = random_population(&mut r, "a", 15, 2, true);
        let tie = if literal { TieMode::PerEventWeight } else { TieMode::StandardBreslow };
        let eta = pop.x() * DVector::from_vec(vec![1.0, -2.0]);
        let a = population_loglik(&pop, &eta, tie).unwrap();
        let b = population_loglik(&pop, &eta.add_scalar(shift), tie).unwrap();
        // Standard weights cancel a common shift; squared tie weights leave
        // `shift * sum over events of (1 - d_i)` behind.
        let expected = match tie {
            TieMode::StandardBreslow => 0.0,
            TieMode::PerEventWeight => {
                let d = pop.tie_counts();
                let excess: f64 = (0..pop.n())
                    .filter(|&i| pop.status()[i])
                    .map(|i| 1.0 - d[i] as f64)
                    .sum();
                shift * excess
            }
        };
        prop_assert!((b - a - expected).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn loglik_is_nonpositive_and_hessian_diag_nonnegative(seed in 0u64..1000, scale in 0.0f64..20.0) {
        let mut r = rng(seed);
        let pop = random_population(&mut r, "a", 12, 3, seed % 2 == 0);
        let eta = pop.x() * DVector::from_vec(vec![scale, -scale, 0.5 * scale]);
        let d = population_derivatives(&pop, &eta, TieMode::StandardBreslow).unwrap();
        prop_assert!(d.value >= -1e-12);
        prop_assert!(d.hessian_diag_eta.iter().all(|&h| h >= 0.0));
        // The eta-gradient sums to zero under the standard tie weights.
        prop_assert!(d.gradient_eta.sum().abs() <= 1e-9 * (1.0 + d.gradient_eta.amax()));
    }
}
