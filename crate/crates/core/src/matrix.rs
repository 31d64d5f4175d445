//! Dense matrix kernels shared by the solvers: the two constraint projections,
//! squared distances to the constraint sets, and ridge-regularized weighted
//! least-squares solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LrCoxError, Result};

/// A `p x J` coefficient matrix: one column of log-hazard ratios per population.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DMatrix<f64>);

impl CoefficientMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(LrCoxError::DimensionMismatch(
                "coefficient matrix must have at least one row and one column".into(),
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LrCoxError::NonFinite("coefficient matrix"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(p: usize, j: usize) -> Self {
        Self(DMatrix::zeros(p.max(1), j.max(1)))
    }

    /// Number of predictors (rows).
    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    /// Number of populations (columns).
    pub fn populations(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Indices of rows with at least one nonzero entry.
    pub fn support(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&l| self.0.row(l).iter().any(|&v| v != 0.0))
            .collect()
    }

    /// Number of singular values above `tol * max(1, sigma_max)`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let (_, sv, _) = ordered_svd(&self.0);
        let top = sv.iter().cloned().fold(0.0_f64, f64::max).max(1.0);
        sv.iter().filter(|&&s| s > tol * top).count()
    }
}

/// Rank constraint `r` and row-sparsity constraint `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintPair {
    pub max_rank: usize,
    pub max_rows: usize,
}

impl ConstraintPair {
    pub fn new(max_rank: usize, max_rows: usize, p: usize, populations: usize) -> Result<Self> {
        let pair = Self { max_rank, max_rows };
        pair.validate(p, populations)?;
        Ok(pair)
    }

    /// Both constraints vacuous.
    pub fn unconstrained(p: usize, populations: usize) -> Self {
        Self {
            max_rank: p.min(populations),
            max_rows: p,
        }
    }

    pub fn validate(&self, p: usize, populations: usize) -> Result<()> {
        check_rank_bound(self.max_rank, p, populations)?;
        check_row_bound(self.max_rows, p)
    }
}

/// Constraint set for distance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    /// Matrices of rank at most `r`.
    Rank(usize),
    /// Matrices with at most `s` nonzero rows.
    RowSparse(usize),
}

/// `B = U diag(D) W'` with orthonormal `U` (p x r) and `W` (J x r).
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub left_factors: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right_factors: DMatrix<f64>,
    pub rank: usize,
}

impl Factorization {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.left_factors * DMatrix::from_diagonal(&self.singular_values);
        scaled * self.right_factors.transpose()
    }

    /// The factor loadings `D W'` (r x J).
    pub fn loadings(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.singular_values) * self.right_factors.transpose()
    }
}

fn check_rank_bound(r: usize, p: usize, populations: usize) -> Result<()> {
    let upper = p.min(populations);
    if r == 0 || r > upper {
        return Err(LrCoxError::invalid(
            "rank",
            format!("must lie in [1, {upper}], got {r}"),
        ));
    }
    Ok(())
}

fn check_row_bound(s: usize, p: usize) -> Result<()> {
    if s == 0 || s > p {
        return Err(LrCoxError::invalid(
            "sparsity",
            format!("must lie in [1, {p}], got {s}"),
        ));
    }
    Ok(())
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided Jacobi SVD of a tall matrix (`m >= n`): orthogonalizes the columns
/// by plane rotations, which keeps every singular value to high relative
/// accuracy even when the matrix is nearly rank deficient.
fn jacobi_svd_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (mat, rows) in [(&mut w, m), (&mut v, n)] {
                    for r in 0..rows {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|k| w.column(k).norm()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let sigma = DVector::from_iterator(n, idx.iter().map(|&k| norms[k]));
    let v = v.select_columns(idx.iter());
    let mut u = DMatrix::zeros(m, n);
    let top = sigma.iter().cloned().fold(0.0, f64::max);
    for (c, &k) in idx.iter().enumerate() {
        if norms[k] > top * f64::EPSILON * (m as f64) && norms[k] > 0.0 {
            u.set_column(c, &(w.column(k) / norms[k]));
        }
    }
    complete_orthonormal(&mut u, &sigma, top * f64::EPSILON * (m as f64));
    (u, sigma, v)
}

/// Replaces the columns of `u` whose singular value is negligible by unit
/// vectors orthogonal to all other columns (Gram-Schmidt on the standard basis).
fn complete_orthonormal(u: &mut DMatrix<f64>, sigma: &DVector<f64>, tol: f64) {
    let (m, n) = u.shape();
    let mut basis = 0;
    for c in 0..n {
        if sigma[c] > tol && sigma[c] > 0.0 {
            continue;
        }
        while basis < m {
            let mut cand = DVector::zeros(m);
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for o in 0..n {
                    if o != c && u.column(o).norm_squared() > 0.5 {
                        let proj = u.column(o).dot(&cand);
                        cand.axpy(-proj, &u.column(o), 1.0);
                    }
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(c, &(cand / norm));
                break;
            }
        }
    }
}

/// Thin SVD with singular values in nonincreasing order and each left singular
/// vector signed so that its largest-magnitude entry is nonnegative.
pub(crate) fn ordered_svd(b: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (mut u, sigma, mut v) = if b.nrows() >= b.ncols() {
        jacobi_svd_tall(b)
    } else {
        let (v, sigma, u) = jacobi_svd_tall(&b.transpose());
        (u, sigma, v)
    };
    for k in 0..sigma.len() {
        let mut pivot = 0;
        for i in 1..u.nrows() {
            if u[(i, k)].abs() > u[(pivot, k)].abs() {
                pivot = i;
            }
        }
        if u[(pivot, k)] < 0.0 {
            u.column_mut(k).neg_mut();
            v.column_mut(k).neg_mut();
        }
    }
    (u, sigma, v)
}

/// Truncated factorization keeping at most `r` components with strictly
/// positive singular values.
pub fn factorize(b: &CoefficientMatrix, r: usize) -> Result<Factorization> {
    check_rank_bound(r, b.p(), b.populations())?;
    let (u, sigma, v) = ordered_svd(b.as_matrix());
    let top = sigma.iter().cloned().fold(0.0, f64::max);
    let keep = sigma
        .iter()
        .take(r)
        .filter(|&&s| s > 0.0 && s > 1e-14 * top)
        .count();
    Ok(Factorization {
        left_factors: u.columns(0, keep).into_owned(),
        singular_values: sigma.rows(0, keep).into_owned(),
        right_factors: v.columns(0, keep).into_owned(),
        rank: keep,
    })
}

/// Nearest matrix (Frobenius) of rank at most `r`, together with the squared
/// distance to it (the sum of the discarded squared singular values).
pub(crate) fn rank_projection(b: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, f64) {
    let kmax = b.nrows().min(b.ncols());
    if r >= kmax {
        return (b.clone(), 0.0);
    }
    let (u, sigma, v) = ordered_svd(b);
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for k in 0..r {
        out.ger(sigma[k], &u.column(k), &v.column(k), 1.0);
    }
    let dist = sigma.iter().skip(r).map(|s| s * s).sum();
    (out, dist)
}

/// Indices of the `s` rows with largest Euclidean norm; ties keep lower indices.
pub(crate) fn top_rows(b: &DMatrix<f64>, s: usize) -> Vec<usize> {
    let norms: Vec<f64> = (0..b.nrows()).map(|l| b.row(l).norm_squared()).collect();
    let mut idx: Vec<usize> = (0..b.nrows()).collect();
    idx.sort_by(|&a, &c| norms[c].total_cmp(&norms[a]).then(a.cmp(&c)));
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

pub(crate) fn rowsparse_projection(b: &DMatrix<f64>, s: usize) -> (DMatrix<f64>, f64) {
    if s >= b.nrows() {
        return (b.clone(), 0.0);
    }
    let keep = top_rows(b, s);
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    let mut kept = vec![false; b.nrows()];
    for &l in &keep {
        out.set_row(l, &b.row(l));
        kept[l] = true;
    }
    let dist = (0..b.nrows())
        .filter(|&l| !kept[l])
        .map(|l| b.row(l).norm_squared())
        .sum();
    (out, dist)
}

/// Projection onto the set of matrices of rank at most `r` (truncated SVD).
pub fn project_rank(b: &CoefficientMatrix, r: usize) -> Result<CoefficientMatrix> {
    check_rank_bound(r, b.p(), b.populations())?;
    Ok(CoefficientMatrix(rank_projection(b.as_matrix(), r).0))
}

/// Zeroes every row except the `s` with the largest Euclidean norms.
pub fn project_rowsparse(b: &CoefficientMatrix, s: usize) -> Result<CoefficientMatrix> {
    check_row_bound(s, b.p())?;
    Ok(CoefficientMatrix(rowsparse_projection(b.as_matrix(), s).0))
}

/// Squared Frobenius distance from `b` to the given constraint set.
pub fn distance_squared(b: &CoefficientMatrix, set: ConstraintSet) -> Result<f64> {
    match set {
        ConstraintSet::Rank(r) => {
            check_rank_bound(r, b.p(), b.populations())?;
            Ok(rank_projection(b.as_matrix(), r).1)
        }
        ConstraintSet::RowSparse(s) => {
            check_row_bound(s, b.p())?;
            Ok(rowsparse_projection(b.as_matrix(), s).1)
        }
    }
}

/// Which factorization `ridge_regularized_solve` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    /// `p x p` Cholesky of `X'WX + lambda I`.
    Direct,
    /// `n x n` Cholesky of `W^-1 + X X' / lambda` via the Woodbury identity.
    Woodbury,
    /// Direct when `p <= n`, Woodbury otherwise.
    Auto,
}

/// Solves `(X'WX + lambda I) beta = rhs`.
pub fn ridge_regularized_solve(
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    ridge_solve_with(x, weights, rhs, lambda, SolvePath::Auto)
}

pub fn ridge_solve_with(
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
    path: SolvePath,
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if weights.len() != n || rhs.len() != p {
        return Err(LrCoxError::DimensionMismatch(format!(
            "X is {n}x{p}, weights have length {}, rhs has length {}",
            weights.len(),
            rhs.len()
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LrCoxError::invalid(
            "lambda",
            format!("must be positive and finite, got {lambda}"),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(LrCoxError::invalid(
            "weights",
            "all weights must be strictly positive and finite",
        ));
    }
    if x.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(LrCoxError::NonFinite("ridge solve inputs"));
    }
    let use_woodbury = match path {
        SolvePath::Direct => false,
        SolvePath::Woodbury => true,
        SolvePath::Auto => p > n,
    };
    if use_woodbury {
        woodbury_solve(x, weights, rhs, lambda)
    } else {
        weighted_normal_solve(x, weights, rhs, lambda)
    }
}

/// Direct path; `lambda = 0` is permitted (unpenalized Newton steps).
pub(crate) fn weighted_normal_solve(
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let mut sx = x.clone();
    for (i, mut row) in sx.row_iter_mut().enumerate() {
        row *= weights[i].sqrt();
    }
    let mut gram = sx.tr_mul(&sx);
    for k in 0..gram.nrows() {
        gram[(k, k)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or(LrCoxError::Singular("X'WX + lambda I"))?;
    Ok(chol.solve(rhs))
}

fn woodbury_solve(
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let mut inner = x * x.transpose();
    inner /= lambda;
    for i in 0..inner.nrows() {
        inner[(i, i)] += 1.0 / weights[i];
    }
    let chol = inner
        .cholesky()
        .ok_or(LrCoxError::Singular("W^-1 + X X' / lambda"))?;
    let projected = (x * rhs) / lambda;
    let correction = x.tr_mul(&chol.solve(&projected));
    Ok((rhs - correction) / lambda)
}
