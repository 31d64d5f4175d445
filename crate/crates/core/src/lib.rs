//! Sparse reduced-rank Cox regression across multiple populations.
//!
//! Each population `j` has its own coefficient vector `b_j`; the columns are
//! stacked into a `p x J` matrix `B` that is constrained to rank at most `r`
//! and to at most `s` nonzero rows, and estimated by maximizing the summed
//! Breslow partial likelihood with a small ridge term. See [`solver`] for the
//! penalty method, [`convex`] for the convex relaxation and separate
//! baselines, [`cv`] for tuning and [`metrics`] for evaluation.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod convex;
pub mod cv;
pub mod data;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod matrix;
pub mod methods;
pub mod metrics;
pub mod sim;
pub mod solver;

pub use data::{Population, SurvivalDataset};
pub use error::{LrCoxError, Result};
pub use likelihood::TieMode;
pub use matrix::{CoefficientMatrix, ConstraintPair, Factorization};
pub use methods::Method;
pub use solver::{fit, FitConfig, FitResult, HessianMode, Termination};
