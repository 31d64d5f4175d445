//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use lrcox::{Population, SurvivalDataset, TieMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random population; times are drawn from a small grid when `ties` is set.
pub fn random_population(rng: &mut impl Rng, name: &str, n: usize, p: usize, ties: bool) -> Population {
    let x = gaussian_matrix(rng, n, p) * 0.5;
    let time: Vec<f64> = (0..n)
        .map(|_| {
            if ties {
                f64::from(rng.random_range(1..=(n as u32 / 3).max(2)))
            } else {
                rng.random_range(0.01..10.0)
            }
        })
        .collect();
    let mut status: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    status[0] = true;
    Population::new(name, time, status, x).unwrap()
}

pub fn random_dataset(rng: &mut impl Rng, sizes: &[usize], p: usize, ties: bool) -> SurvivalDataset {
    let pops = sizes
        .iter()
        .enumerate()
        .map(|(j, &n)| random_population(rng, &format!("pop{j}"), n, p, ties))
        .collect();
    SurvivalDataset::with_default_names(pops).unwrap()
}

/// Partial log-likelihood by direct summation over events and risk sets.
pub fn brute_loglik(time: &[f64], status: &[bool], eta: &[f64], tie: TieMode) -> f64 {
    let n = time.len();
    let mut ll = 0.0;
    for i in 0..n {
        if !status[i] {
            continue;
        }
        let risk: f64 = (0..n).filter(|&k| time[k] >= time[i]).map(|k| eta[k].exp()).sum();
        let tied = (0..n).filter(|&k| status[k] && time[k] == time[i]).count() as f64;
        let weight = match tie {
            TieMode::StandardBreslow => 1.0,
            TieMode::PerEventWeight => tied,
        };
        ll += eta[i] - weight * risk.ln();
    }
    ll
}

pub fn brute_pop_loglik(pop: &Population, eta: &DVector<f64>, tie: TieMode) -> f64 {
    brute_loglik(pop.time(), pop.status(), eta.as_slice(), tie)
}

/// Gradient of `-l` with respect to the linear predictors, by direct summation.
pub fn brute_grad_eta(time: &[f64], status: &[bool], eta: &[f64], tie: TieMode) -> DVector<f64> {
    let n = time.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        if !status[i] {
            continue;
        }
        let tied = (0..n).filter(|&k| status[k] && time[k] == time[i]).count() as f64;
        let weight = match tie {
            TieMode::StandardBreslow => 1.0,
            TieMode::PerEventWeight => tied,
        };
        let risk: f64 = (0..n).filter(|&k| time[k] >= time[i]).map(|k| eta[k].exp()).sum();
        g[i] -= 1.0;
        for k in (0..n).filter(|&k| time[k] >= time[i]) {
            g[k] += weight * eta[k].exp() / risk;
        }
    }
    g
}

/// Gradient and Hessian of the standard Breslow `-l(b)` in coefficient space,
/// by direct summation (weighted means and covariances over each risk set).
pub fn brute_grad_hess(pop: &Population, b: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (pop.n(), pop.p());
    let x = pop.x();
    let eta = x * b;
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..n {
        if !pop.status()[i] {
            continue;
        }
        let risk: Vec<usize> = (0..n).filter(|&k| pop.time()[k] >= pop.time()[i]).collect();
        let w: Vec<f64> = risk.iter().map(|&k| eta[k].exp()).collect();
        let total: f64 = w.iter().sum();
        let mut mean = DVector::zeros(p);
        for (&k, &wk) in risk.iter().zip(&w) {
            mean += x.row(k).transpose() * (wk / total);
        }
        g += &mean - x.row(i).transpose();
        for (&k, &wk) in risk.iter().zip(&w) {
            let d = x.row(k).transpose() - &mean;
            h += &d * d.transpose() * (wk / total);
        }
    }
    (g, h)
}

/// Newton's method for `-l(b) + mu ||b||^2` using the brute-force derivatives.
pub fn newton_ridge(pop: &Population, mu: f64) -> DVector<f64> {
    let p = pop.p();
    let obj = |b: &DVector<f64>| -brute_pop_loglik(pop, &(pop.x() * b), TieMode::StandardBreslow) + mu * b.norm_squared();
    let mut b = DVector::zeros(p);
    for _ in 0..100 {
        let (g, h) = brute_grad_hess(pop, &b);
        let g = g + &b * (2.0 * mu);
        let h = h + DMatrix::identity(p, p) * (2.0 * mu);
        let step = h.lu().solve(&g).unwrap();
        let mut t = 1.0;
        let f0 = obj(&b);
        while obj(&(&b - &step * t)) > f0 && t > 1e-12 {
            t *= 0.5;
        }
        b -= &step * t;
        if step.norm() * t < 1e-13 {
            break;
        }
    }
    b
}

/// Best rank-r approximation through the eigen-decomposition of `B'B`.
pub fn eigen_rank_projection(b: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = b.transpose() * b;
    let se = eig.symmetric_eigen();
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    idx.sort_by(|&a, &c| se.eigenvalues[c].total_cmp(&se.eigenvalues[a]));
    let mut proj = DMatrix::zeros(b.ncols(), b.ncols());
    for &k in idx.iter().take(r) {
        let v = se.eigenvectors.column(k);
        proj += v * v.transpose();
    }
    b * proj
}

/// Best s-row-sparse approximation by searching every support of size `s`.
pub fn exhaustive_rowsparse(b: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let p = b.nrows();
    let mut best: Option<(f64, u32)> = None;
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize != s {
            continue;
        }
        let kept: f64 = (0..p)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| b.row(i).norm_squared())
            .sum();
        if best.is_none_or(|(v, _)| kept > v) {
            best = Some((kept, mask));
        }
    }
    let mask = best.map(|b| b.1).unwrap_or(0);
    let mut out = b.clone();
    for i in 0..p {
        if mask & (1 << i) == 0 {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

pub fn sup_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
