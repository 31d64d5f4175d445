//! Synthetic multi-population survival data: AR(1) Gaussian covariates,
//! a low-rank row-sparse coefficient matrix, Gompertz-baseline Cox failure
//! times drawn by inverse CDF, and exponential censoring calibrated to a
//! quantile of the generated failure times.
//!
//! Randomness comes from ChaCha20 keyed by the spec's seed, with a separate
//! stream per (split, population, purpose), so resizing one population leaves
//! every other population's draws untouched.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{default_predictor_names, Population, SurvivalDataset};
use crate::error::{LrCoxError, Result};
use crate::matrix::CoefficientMatrix;
use crate::metrics::quantile_lower;

/// Euler-Mascheroni constant, truncated to four digits as in the original
/// generator's parameterization.
const EULER_GAMMA_4: f64 = 0.5772;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub populations: usize,
    /// Training sizes, repeated cyclically over populations.
    pub n_pattern: Vec<usize>,
    pub n_validation: usize,
    pub n_test: usize,
    pub p: usize,
    pub r_star: usize,
    pub s_star: usize,
    /// Gompertz shape.
    pub alpha: f64,
    /// Per-population baseline scale parameters.
    pub kappa_grid: Vec<f64>,
    /// Censoring quantile base.
    pub tau: f64,
    pub corr_decay: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            populations: 12,
            n_pattern: vec![100, 200, 300],
            n_validation: 150,
            n_test: 1000,
            p: 250,
            r_star: 3,
            s_star: 20,
            alpha: std::f64::consts::PI / (600.0 * 6f64.sqrt()),
            kappa_grid: default_kappa_grid(12),
            tau: 0.35,
            corr_decay: 0.7,
            seed: 1,
        }
    }
}

/// `2000, 2010, ...` with one entry per population.
pub fn default_kappa_grid(populations: usize) -> Vec<f64> {
    (0..populations).map(|j| 2000.0 + 10.0 * j as f64).collect()
}

impl SimulationSpec {
    /// Changes the number of populations, regenerating the default kappa grid.
    pub fn with_populations(mut self, populations: usize) -> Self {
        self.populations = populations;
        self.kappa_grid = default_kappa_grid(populations);
        self
    }

    pub fn train_size(&self, j: usize) -> usize {
        self.n_pattern[j % self.n_pattern.len()]
    }

    pub fn size(&self, split: Split, j: usize) -> usize {
        match split {
            Split::Train => self.train_size(j),
            Split::Validation => self.n_validation,
            Split::Test => self.n_test,
        }
    }

    /// Every invalid field, named.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.populations == 0 {
            out.push("populations: must be positive".into());
        }
        if self.p == 0 {
            out.push("p: must be positive".into());
        }
        if self.n_pattern.is_empty() || self.n_pattern.iter().any(|&n| n < 2) {
            out.push("n_pattern: needs at least one size, each >= 2".into());
        }
        if self.n_validation < 2 {
            out.push("n_validation: must be at least 2".into());
        }
        if self.n_test < 2 {
            out.push("n_test: must be at least 2".into());
        }
        if self.r_star == 0 || self.r_star > self.p.min(self.populations) {
            out.push(format!(
                "r_star: must lie in [1, min(p, J)] = [1, {}]",
                self.p.min(self.populations)
            ));
        }
        if self.s_star == 0 || self.s_star > self.p {
            out.push(format!("s_star: must lie in [1, p] = [1, {}]", self.p));
        }
        if self.s_star < self.r_star {
            out.push("s_star: must be at least r_star for B* to reach rank r_star".into());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            out.push("alpha: must be positive".into());
        }
        if self.kappa_grid.len() != self.populations {
            out.push(format!(
                "kappa_grid: has {} entries, expected one per population ({})",
                self.kappa_grid.len(),
                self.populations
            ));
        }
        if self.kappa_grid.iter().any(|k| !k.is_finite()) {
            out.push("kappa_grid: entries must be finite".into());
        }
        if !(self.tau > 0.0 && self.tau + 0.2 < 1.0) {
            out.push(format!("tau: must satisfy 0 < tau and tau + 0.2 < 1, got {}", self.tau));
        }
        if !(self.corr_decay > -1.0 && self.corr_decay < 1.0) {
            out.push("corr_decay: must lie in (-1, 1)".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LrCoxError::invalid("simulation spec", problems.join("; ")))
        }
    }

    /// `phi_j = alpha * exp(-0.5772 - alpha * kappa_j)`.
    pub fn gompertz_rate(&self, j: usize) -> f64 {
        self.alpha * (-EULER_GAMMA_4 - self.alpha * self.kappa_grid[j]).exp()
    }

    /// Quantile level used for the censoring mean of a population of size `n`.
    pub fn censoring_level(&self, n: usize) -> f64 {
        if n < 300 {
            self.tau
        } else {
            self.tau + 0.2
        }
    }

    /// `Sigma_{st} = corr_decay^{|s - t|}`.
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |s, t| {
            self.corr_decay.powi((s as i32 - t as i32).abs())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub b_star: CoefficientMatrix,
    pub support: Vec<usize>,
    pub u_star: DMatrix<f64>,
    pub v_star: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const TRUTH_STREAM: u64 = 0;

fn population_stream(seed: u64, split: Split, j: usize, censoring: bool) -> ChaCha20Rng {
    let id = 1 + (split.index() << 32) + ((j as u64) << 1) + u64::from(censoring);
    stream(seed, id)
}

/// `B* = U V'` with `s_star` nonzero rows of `U` (entries uniform on
/// `[-sqrt(8)/r, -sqrt(2)/r] U [sqrt(2)/r, sqrt(8)/r]`) and semi-orthogonal
/// `V` (J x r) from the QR factor of a Gaussian matrix.
pub fn generate_truth(spec: &SimulationSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = stream(spec.seed, TRUTH_STREAM);
    let (p, r, jn) = (spec.p, spec.r_star, spec.populations);

    let mut rows: Vec<usize> = (0..p).collect();
    for i in 0..spec.s_star {
        let k = rng.random_range(i..p);
        rows.swap(i, k);
    }
    let mut support = rows[..spec.s_star].to_vec();
    support.sort_unstable();

    let (lo, hi) = (2f64.sqrt() / r as f64, 8f64.sqrt() / r as f64);
    let mut u = DMatrix::zeros(p, r);
    for &l in &support {
        for k in 0..r {
            let magnitude = rng.random_range(lo..=hi);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            u[(l, k)] = sign * magnitude;
        }
    }

    let gaussian = DMatrix::from_fn(jn, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = gaussian.qr().q().columns(0, r).into_owned();

    let b_star = CoefficientMatrix::new(&u * v.transpose())?;
    Ok(GroundTruth {
        b_star,
        support,
        u_star: u,
        v_star: v,
        sigma: spec.covariance(),
    })
}

/// Gompertz-Cox failure time for uniform draw `u` and linear predictor `eta`:
/// `T = log{1 - (alpha/phi) log(u) exp(-eta)} / alpha`.
pub fn gompertz_time(u: f64, eta: f64, alpha: f64, phi: f64) -> f64 {
    (-(alpha / phi) * u.ln() * (-eta).exp()).ln_1p() / alpha
}

/// `S(t | x) = exp{-(phi/alpha)(e^{alpha t} - 1) e^{eta}}`.
pub fn gompertz_survival(t: f64, eta: f64, alpha: f64, phi: f64) -> f64 {
    (-(phi / alpha) * (alpha * t).exp_m1() * eta.exp()).exp()
}

/// One population's latent draw before censoring.
#[derive(Debug, Clone)]
pub struct LatentDraw {
    pub x: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub uniforms: Vec<f64>,
    pub times: Vec<f64>,
}

/// AR(1) covariates `x_t = c x_{t-1} + sqrt(1 - c^2) z_t`, which have
/// covariance exactly `c^{|s-t|}`.
fn ar1_row<R: Rng>(rng: &mut R, p: usize, decay: f64) -> Vec<f64> {
    let innovation = (1.0 - decay * decay).sqrt();
    let mut row = Vec::with_capacity(p);
    let mut prev = 0.0;
    for t in 0..p {
        let z: f64 = rng.sample(StandardNormal);
        let v = if t == 0 { z } else { decay * prev + innovation * z };
        row.push(v);
        prev = v;
    }
    row
}

pub fn draw_latent(
    spec: &SimulationSpec,
    truth: &GroundTruth,
    split: Split,
    j: usize,
    n: usize,
) -> LatentDraw {
    let mut rng = population_stream(spec.seed, split, j, false);
    let phi = spec.gompertz_rate(j);
    let b = truth.b_star.as_matrix().column(j);
    let mut x = DMatrix::zeros(n, spec.p);
    let mut uniforms = Vec::with_capacity(n);
    for i in 0..n {
        let row = ar1_row(&mut rng, spec.p, spec.corr_decay);
        for (t, v) in row.into_iter().enumerate() {
            x[(i, t)] = v;
        }
        uniforms.push(Open01.sample(&mut rng));
    }
    let eta = &x * b;
    let times = uniforms
        .iter()
        .zip(eta.iter())
        .map(|(&u, &e)| gompertz_time(u, e, spec.alpha, phi))
        .collect();
    LatentDraw {
        x,
        eta,
        uniforms,
        times,
    }
}

fn population_name(j: usize) -> String {
    format!("pop{:02}", j + 1)
}

/// Uncensored draws for every population of `split`.
pub fn sample_survival(
    spec: &SimulationSpec,
    truth: &GroundTruth,
    split: Split,
) -> Result<SurvivalDataset> {
    spec.validate()?;
    let pops = (0..spec.populations)
        .map(|j| {
            let draw = draw_latent(spec, truth, split, j, spec.size(split, j));
            let n = draw.times.len();
            Population::new(population_name(j), draw.times, vec![true; n], draw.x)
        })
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(pops, default_predictor_names(spec.p))
}

/// Exponential censoring with mean equal to the `tau` (or `tau + 0.2` when
/// `n >= 300`) lower sample quantile of each population's failure times.
pub fn apply_censoring(
    data: &SurvivalDataset,
    spec: &SimulationSpec,
    split: Split,
) -> Result<SurvivalDataset> {
    if !(spec.tau > 0.0 && spec.tau + 0.2 < 1.0) {
        return Err(LrCoxError::invalid(
            "tau",
            format!("must satisfy 0 < tau and tau + 0.2 < 1, got {}", spec.tau),
        ));
    }
    let pops = data
        .populations()
        .iter()
        .enumerate()
        .map(|(j, pop)| {
            let mut rng = population_stream(spec.seed, split, j, true);
            let level = spec.censoring_level(pop.n());
            let mean = quantile_lower(pop.time(), level);
            let exp = Exp::new(1.0 / mean).map_err(|e| {
                LrCoxError::Data(format!("censoring distribution for `{}`: {e}", pop.name()))
            })?;
            let mut time = Vec::with_capacity(pop.n());
            let mut status = Vec::with_capacity(pop.n());
            for &t in pop.time() {
                let c: f64 = exp.sample(&mut rng);
                time.push(t.min(c));
                status.push(t <= c);
            }
            Population::new(pop.name(), time, status, pop.x().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(pops, data.predictor_names().to_vec())
}

/// Draws one split; the test split is left uncensored.
pub fn sample_dataset(
    spec: &SimulationSpec,
    truth: &GroundTruth,
    split: Split,
) -> Result<SurvivalDataset> {
    let raw = sample_survival(spec, truth, split)?;
    match split {
        Split::Test => Ok(raw),
        _ => apply_censoring(&raw, spec, split),
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: SurvivalDataset,
    pub validation: SurvivalDataset,
    pub test: SurvivalDataset,
    pub truth: GroundTruth,
}

pub fn generate_benchmark(spec: &SimulationSpec) -> Result<Benchmark> {
    let truth = generate_truth(spec)?;
    Ok(Benchmark {
        train: sample_dataset(spec, &truth, Split::Train)?,
        validation: sample_dataset(spec, &truth, Split::Validation)?,
        test: sample_dataset(spec, &truth, Split::Test)?,
        truth,
    })
}
