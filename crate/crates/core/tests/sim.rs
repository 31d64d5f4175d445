use lrcox::sim::*;
use nalgebra::DMatrix;

fn spec(seed: u64) -> SimulationSpec {
    SimulationSpec {
        p: 30,
        s_star: 8,
        r_star: 2,
        seed,
        ..SimulationSpec::default()
    }
}

#[test]
fn gompertz_inversion_round_trips() {
    let s = spec(1);
    let truth = generate_truth(&s).unwrap();
    for j in [0, 5, 11] {
        let draw = draw_latent(&s, &truth, Split::Train, j, 500);
        let phi = s.gompertz_rate(j);
        for i in 0..500 {
            let t = draw.times[i];
            assert!(t.is_finite() && t > 0.0);
            let u = gompertz_survival(t, draw.eta[i], s.alpha, phi);
            assert!((u - draw.uniforms[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn unit_time_closed_form() {
    let s = SimulationSpec::default();
    let phi = s.gompertz_rate(3);
    let u = (-(phi / s.alpha) * s.alpha.exp_m1()).exp();
    assert!((gompertz_time(u, 0.0, s.alpha, phi) - 1.0).abs() < 1e-9);
}

#[test]
fn larger_risk_gives_earlier_failure() {
    let s = SimulationSpec::default();
    let phi = s.gompertz_rate(0);
    for u in [0.01, 0.3, 0.5, 0.9, 0.999] {
        let early = gompertz_time(u, 1.0, s.alpha, phi);
        let late = gompertz_time(u, -1.0, s.alpha, phi);
        assert!(early < late);
    }
}

#[test]
fn truth_has_requested_structure() {
    for seed in 0..5 {
        let s = spec(seed);
        let t = generate_truth(&s).unwrap();
        let vtv = t.v_star.transpose() * &t.v_star;
        assert!((vtv - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert_eq!(t.support.len(), 8);
        assert_eq!(t.b_star.support(), t.support);
        let (lo, hi) = (2f64.sqrt() / 2.0, 8f64.sqrt() / 2.0);
        for &l in &t.support {
            for k in 0..2 {
                let v = t.u_star[(l, k)].abs();
                assert!(v >= lo && v <= hi);
            }
        }
        assert!(t.b_star.numerical_rank(1e-10) <= 2);
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = generate_benchmark(&spec(7)).unwrap();
    let b = generate_benchmark(&spec(7)).unwrap();
    let c = generate_benchmark(&spec(8)).unwrap();
    assert_eq!(a.truth.b_star, b.truth.b_star);
    for j in 0..12 {
        assert_eq!(a.train.population(j).time(), b.train.population(j).time());
        assert_eq!(a.test.population(j).x(), b.test.population(j).x());
    }
    assert_ne!(a.train.population(0).time(), c.train.population(0).time());
}

#[test]
fn splits_have_requested_sizes_and_censoring() {
    let b = generate_benchmark(&spec(9)).unwrap();
    for j in 0..12 {
        assert_eq!(b.train.population(j).n(), [100, 200, 300][j % 3]);
        assert_eq!(b.validation.population(j).n(), 150);
        assert_eq!(b.test.population(j).n(), 1000);
        assert_eq!(b.test.population(j).events(), 1000);
        let frac = b.train.population(j).censored_fraction();
        assert!(frac > 0.0 && frac < 1.0);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(1);
    s.s_star = 31;
    s.r_star = 0;
    s.tau = 0.9;
    assert!(s.problems().len() >= 3);
    assert!(generate_benchmark(&s).is_err());
}
