//! Dispatch over the estimators compared in benchmarks.

use serde::{Deserialize, Serialize};

use crate::convex::{
    fit_separate, project_separate, tune_convex, tune_separate, ConvexConfig, Penalty,
    SeparateConfig, ENET_ALPHA,
};
use crate::data::SurvivalDataset;
use crate::error::{LrCoxError, Result};
use crate::matrix::CoefficientMatrix;
use crate::solver::{fit, FitConfig, FitResult, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Method {
    Lrcox,
    Convex,
    SepRidge,
    SepLasso,
    SepEnet,
    ProjSepRidge,
    ProjSepLasso,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lrcox => "lrcox",
            Method::Convex => "convex",
            Method::SepRidge => "sep-ridge",
            Method::SepLasso => "sep-lasso",
            Method::SepEnet => "sep-enet",
            Method::ProjSepRidge => "proj-sep-ridge",
            Method::ProjSepLasso => "proj-sep-lasso",
        }
    }

    pub fn penalty(self) -> Option<Penalty> {
        match self {
            Method::SepRidge | Method::ProjSepRidge => Some(Penalty::Ridge),
            Method::SepLasso | Method::ProjSepLasso => Some(Penalty::Lasso),
            Method::SepEnet => Some(Penalty::ElasticNet { alpha: ENET_ALPHA }),
            _ => None,
        }
    }

    pub fn projected(self) -> bool {
        matches!(self, Method::ProjSepRidge | Method::ProjSepLasso)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the tuning parameters of a method were set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Tuning {
    Constraints { sparsity: usize, rank: usize },
    Fixed { lambda: f64, gamma: Option<f64> },
    ValidationSeparate { lambdas: Vec<f64>, deviances: Vec<f64> },
    ValidationConvex { lambda: f64, gamma: f64, deviance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOptions {
    /// Fixed lambda for separate / convex fits; tuned on validation data if absent.
    pub lambda: Option<f64>,
    /// Fixed gamma for the convex fit.
    pub gamma: Option<f64>,
    pub convex_max_iters: usize,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            gamma: None,
            convex_max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub estimate: CoefficientMatrix,
    /// Rank used for the exported factorization.
    pub rank: usize,
    pub tuning: Tuning,
    pub termination: Option<Termination>,
    pub fit: Option<FitResult>,
}

/// Runs `method`. `config` supplies the constraints for `lrcox`, the rank for
/// the projected methods and the tie mode for all methods.
pub fn run_method(
    method: Method,
    config: &FitConfig,
    options: &MethodOptions,
    train: &SurvivalDataset,
    validation: Option<&SurvivalDataset>,
) -> Result<MethodFit> {
    let tie = config.tie_mode;
    let full_rank = train.p().min(train.num_populations());
    let need_validation = || {
        validation.ok_or_else(|| {
            LrCoxError::invalid(
                "lambda",
                format!("{method} needs --lambda or validation files in the manifest"),
            )
        })
    };
    match method {
        Method::Lrcox => {
            let f = fit(train, config)?;
            Ok(MethodFit {
                method,
                estimate: f.estimate.clone(),
                rank: config.constraints.max_rank,
                tuning: Tuning::Constraints {
                    sparsity: config.constraints.max_rows,
                    rank: config.constraints.max_rank,
                },
                termination: Some(f.termination),
                fit: Some(f),
            })
        }
        Method::Convex => {
            let (estimate, tuning) = match (options.lambda, options.gamma) {
                (Some(lambda), Some(gamma)) => {
                    let mut cfg = ConvexConfig::new(lambda, gamma);
                    cfg.max_iters = options.convex_max_iters;
                    let f = crate::convex::fit_convex(train, &cfg, tie)?;
                    (f.estimate, Tuning::Fixed { lambda, gamma: Some(gamma) })
                }
                (None, None) => {
                    let t = tune_convex(train, need_validation()?, tie, options.convex_max_iters)?;
                    let tuning = Tuning::ValidationConvex {
                        lambda: t.lambda_nuc,
                        gamma: t.gamma_row,
                        deviance: t.deviance,
                    };
                    (t.fit.estimate, tuning)
                }
                _ => {
                    return Err(LrCoxError::invalid(
                        "lambda/gamma",
                        "the convex method needs both --lambda and --gamma, or neither",
                    ))
                }
            };
            Ok(MethodFit {
                method,
                estimate,
                rank: full_rank,
                tuning,
                termination: None,
                fit: None,
            })
        }
        _ => {
            let penalty = method.penalty().expect("separate method");
            let (mut estimate, tuning) = match options.lambda {
                Some(lambda) => {
                    let cfg = SeparateConfig::new(penalty, vec![lambda; train.num_populations()]);
                    (fit_separate(train, &cfg, tie)?, Tuning::Fixed { lambda, gamma: None })
                }
                None => {
                    let t = tune_separate(train, need_validation()?, penalty, tie)?;
                    let tuning = Tuning::ValidationSeparate {
                        lambdas: t.lambdas,
                        deviances: t.deviances,
                    };
                    (t.estimate, tuning)
                }
            };
            let rank = if method.projected() {
                estimate = project_separate(&estimate, config.constraints.max_rank)?;
                config.constraints.max_rank
            } else {
                full_rank
            };
            Ok(MethodFit {
                method,
                estimate,
                rank,
                tuning,
                termination: None,
                fit: None,
            })
        }
    }
}
