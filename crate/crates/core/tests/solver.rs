mod common;

use common::*;
use lrcox::likelihood::penalized_objective;
use lrcox::matrix::{distance_squared, ConstraintSet};
use lrcox::sim::{generate_benchmark, SimulationSpec};
use lrcox::solver::{fit_from, fit_path, mm_inner_solve, penalty_objective};
use lrcox::{fit, CoefficientMatrix, ConstraintPair, FitConfig, HessianMode, Termination, TieMode};
use nalgebra::DMatrix;

fn small_spec(seed: u64) -> SimulationSpec {
    SimulationSpec {
        populations: 4,
        kappa_grid: vec![2000.0, 2010.0, 2020.0, 2030.0],
        n_pattern: vec![60, 90],
        n_validation: 20,
        n_test: 50,
        p: 10,
        r_star: 2,
        s_star: 4,
        seed,
        ..SimulationSpec::default()
    }
}

#[test]
fn uniform_bound_inner_solve_descends() {
    for seed in 0..5 {
        let bench = generate_benchmark(&small_spec(seed)).unwrap();
        let mut config = FitConfig::new(ConstraintPair::new(2, 4, 10, 4).unwrap(), 0.1);
        config.hessian_mode = HessianMode::UniformBound(None);
        config.k_max = 25;
        let init = CoefficientMatrix::new(DMatrix::from_element(10, 4, 0.05)).unwrap();
        for rho in [5.0, 50.0] {
            let (_, trace) = mm_inner_solve(&bench.train, &config, &init, rho).unwrap();
            assert!(trace.len() > 1);
            for w in trace.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-10, "{} -> {}", w[0].objective, w[1].objective);
            }
        }
    }
}

#[test]
fn trace_objective_matches_penalty_objective() {
    let bench = generate_benchmark(&small_spec(1)).unwrap();
    let config = FitConfig::new(ConstraintPair::new(2, 4, 10, 4).unwrap(), 0.1);
    let init = CoefficientMatrix::zeros(10, 4);
    let (b, trace) = mm_inner_solve(&bench.train, &config, &init, 5.0).unwrap();
    let direct = penalty_objective(&bench.train, &b, 5.0, &config).unwrap();
    let last = trace.last().unwrap();
    assert!((last.objective - direct).abs() < 1e-9 * (1.0 + direct.abs()));
    let smooth = penalized_objective(&bench.train, &b, 0.1, TieMode::StandardBreslow).unwrap();
    let dr = distance_squared(&b, ConstraintSet::Rank(2)).unwrap();
    let ds = distance_squared(&b, ConstraintSet::RowSparse(4)).unwrap();
    assert!((direct - smooth - 2.5 * (dr + ds)).abs() < 1e-9 * (1.0 + direct.abs()));
    assert_eq!(trace[0].iteration, 0);
}

#[test]
fn feasible_fits_satisfy_bounds() {
    let bench = generate_benchmark(&small_spec(2)).unwrap();
    let pair = ConstraintPair::new(2, 4, 10, 4).unwrap();
    let config = FitConfig::new(pair, 0.1);
    let f = fit(&bench.train, &config).unwrap();
    assert_eq!(f.termination, Termination::FeasibilityMet);
    assert!(f.final_dist_rank < config.feas_tol && f.final_dist_rows < config.feas_tol);
    assert!(f.support.len() <= 4);
    assert!(f.estimate.numerical_rank(1e-10) <= 2);
    assert!(f.factorization.rank <= 2);
    assert!(sup_norm(&(f.factorization.reconstruct() - f.estimate.as_matrix())) < 1e-10);
    assert!(f.projection_shift < 1e-2);
}

#[test]
fn rho_cap_is_reported() {
    let bench = generate_benchmark(&small_spec(3)).unwrap();
    let mut config = FitConfig::new(ConstraintPair::new(1, 2, 10, 4).unwrap(), 0.1);
    config.max_rho_steps = 2;
    let f = fit(&bench.train, &config).unwrap();
    assert_eq!(f.termination, Termination::RhoCapHit);
    assert_eq!(f.rho_steps, 2);
    assert!((f.final_rho - 5.0 * 1.2).abs() < 1e-12);
    // Still exactly feasible after the final projection.
    assert!(f.support.len() <= 2 && f.estimate.numerical_rank(1e-10) <= 1);
}

#[test]
fn unconstrained_fit_matches_per_population_newton() {
    let mut r = rng(20);
    let data = random_dataset(&mut r, &[50, 50, 50], 5, false);
    let mut config = FitConfig::new(ConstraintPair::unconstrained(5, 3), 0.05);
    config.k_max = 500;
    config.obj_tol = 1e-15;
    let f = fit(&data, &config).unwrap();
    for (j, pop) in data.populations().iter().enumerate() {
        let oracle = newton_ridge(pop, 0.05);
        assert!((f.estimate.column(j) - oracle).amax() < 1e-4);
    }
}

#[test]
fn path_matches_cold_start_constraints() {
    let bench = generate_benchmark(&small_spec(4)).unwrap();
    let config = FitConfig::new(ConstraintPair::new(1, 1, 10, 4).unwrap(), 0.1);
    let cells = fit_path(&bench.train, &config, &[3, 5], &[3, 2, 1]).unwrap();
    assert_eq!(cells.len(), 6);
    for c in &cells {
        let f = c.result.as_ref().unwrap();
        assert!(f.support.len() <= c.sparsity);
        assert!(f.estimate.numerical_rank(1e-10) <= c.rank);
    }
    assert!(fit_path(&bench.train, &config, &[3], &[1, 2]).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bench = generate_benchmark(&small_spec(5)).unwrap();
    let mut config = FitConfig::new(ConstraintPair { max_rank: 5, max_rows: 3 }, -1.0);
    config.incr_factor = 1.0;
    let problems = config.problems(10, 4);
    assert_eq!(problems.len(), 3, "{problems:?}");
    assert!(fit(&bench.train, &config).is_err());
    let ok = FitConfig::new(ConstraintPair::new(1, 3, 10, 4).unwrap(), 0.1);
    assert!(fit_from(&bench.train, &ok, &CoefficientMatrix::zeros(9, 4)).is_err());
}

#[test]
fn per_event_tie_mode_runs() {
    let mut r = rng(21);
    let data = random_dataset(&mut r, &[40, 40], 3, true);
    let mut config = FitConfig::new(ConstraintPair::new(1, 2, 3, 2).unwrap(), 0.1);
    config.tie_mode = TieMode::PerEventWeight;
    let f = fit(&data, &config).unwrap();
    assert!(f.estimate.as_matrix().iter().all(|v| v.is_finite()));
}
