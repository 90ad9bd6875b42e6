use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ar1_log_det, ar1_precision, Ar1Params, PcPrior, SpdeOperator, SpdeParams};
use crate::sparse::{CscMatrix, SymbolicCholesky};

/// Latent block role, which also fixes its position in the latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Fixed effects `β`.
    Fixed,
    /// Spline coefficients `ψ`.
    Spline,
    /// Spatial field `θ`.
    Spatial,
    /// Spatio-temporal field `φ`.
    SpatioTemporal,
}

/// Prior of one latent block and the hyperparameters it owns.
#[derive(Debug, Clone)]
pub enum LatentPrior {
    /// Independent Gaussian with fixed precision.
    Fixed { precision: f64 },
    /// Stationary AR(1) over `len` coefficients; hyperparameters `[log τ, atanh ρ]`.
    Ar1 {
        len: usize,
        precision_prior: PcPrior,
        correlation_prior: PcPrior,
    },
    /// SPDE Matérn field; hyperparameters `[log r, log σ]`.
    Spde {
        operator: Arc<SpdeOperator>,
        range_prior: PcPrior,
        sd_prior: PcPrior,
    },
    /// SPDE field evolving as AR(1) with unit innovation scale over `periods`
    /// time points; hyperparameters `[log r, log σ, atanh ρ]`.
    SpdeAr1 {
        operator: Arc<SpdeOperator>,
        periods: usize,
        range_prior: PcPrior,
        sd_prior: PcPrior,
        correlation_prior: PcPrior,
    },
}

impl LatentPrior {
    pub fn dim(&self, fixed_dim: usize) -> usize {
        match self {
            LatentPrior::Fixed { .. } => fixed_dim,
            LatentPrior::Ar1 { len, .. } => *len,
            LatentPrior::Spde { operator, .. } => operator.dim(),
            LatentPrior::SpdeAr1 { operator, periods, .. } => operator.dim() * periods,
        }
    }

    pub fn hyper_names(&self) -> &'static [&'static str] {
        match self {
            LatentPrior::Fixed { .. } => &[],
            LatentPrior::Ar1 { .. } => &["log_precision", "atanh_rho"],
            LatentPrior::Spde { .. } => &["log_range", "log_sd"],
            LatentPrior::SpdeAr1 { periods, .. } if *periods < 2 => &["log_range", "log_sd"],
            LatentPrior::SpdeAr1 { .. } => &["log_range", "log_sd", "atanh_rho"],
        }
    }

    pub fn num_hyper(&self) -> usize {
        self.hyper_names().len()
    }
}

fn spde_params(h: &[f64]) -> Result<SpdeParams> {
    SpdeParams::new(h[0].exp(), h[1].exp())
}

fn ar1_params(log_tau: f64, atanh_rho: f64) -> Result<Ar1Params> {
    Ar1Params::new(atanh_rho.tanh(), log_tau.exp())
}

/// Block prior evaluated at one hyperparameter setting.
pub(crate) struct BlockEvaluation {
    pub precision: CscMatrix,
    pub log_det: f64,
    /// Log hyperprior density on the unconstrained scale (Jacobian included).
    pub log_hyperprior: f64,
}

/// Precomputed, pattern-stable evaluator for one block.
#[derive(Debug)]
pub(crate) struct BlockEvaluator {
    pub prior: LatentPrior,
    pub dim: usize,
    spatial_symbolic: Option<Arc<SymbolicCholesky>>,
}

impl BlockEvaluator {
    pub fn new(prior: LatentPrior, dim: usize) -> Result<Self> {
        let spatial_symbolic = match &prior {
            LatentPrior::Spde { operator, .. } | LatentPrior::SpdeAr1 { operator, .. } => {
                let q = operator.precision(&SpdeParams::new(1.0, 1.0)?);
                Some(SymbolicCholesky::analyze(&q)?)
            }
            _ => None,
        };
        Ok(Self {
            prior,
            dim,
            spatial_symbolic,
        })
    }

    fn spatial(&self, operator: &SpdeOperator, p: &SpdeParams) -> Result<(CscMatrix, f64)> {
        let q = operator.precision(p);
        let sym = self.spatial_symbolic.as_ref().expect("spatial block has a symbolic factor");
        let log_det = sym.factorize(&q)?.log_det();
        Ok((q, log_det))
    }

    pub fn evaluate(&self, h: &[f64]) -> Result<BlockEvaluation> {
        match &self.prior {
            LatentPrior::Fixed { precision } => {
                let n = self.dim;
                Ok(BlockEvaluation {
                    precision: CscMatrix::diagonal(&vec![*precision; n]),
                    log_det: n as f64 * precision.ln(),
                    log_hyperprior: 0.0,
                })
            }
            LatentPrior::Ar1 {
                len,
                precision_prior,
                correlation_prior,
            } => {
                let p = ar1_params(h[0], h[1])?;
                let lp = precision_prior.log_density(p.tau) + h[0]
                    + correlation_prior.log_density(p.rho)
                    + (1.0 - p.rho * p.rho).ln();
                Ok(BlockEvaluation {
                    precision: ar1_precision(*len, &p)?,
                    log_det: ar1_log_det(*len, &p),
                    log_hyperprior: lp,
                })
            }
            LatentPrior::Spde {
                operator,
                range_prior,
                sd_prior,
            } => {
                let p = spde_params(h)?;
                let (q, log_det) = self.spatial(operator, &p)?;
                Ok(BlockEvaluation {
                    precision: q,
                    log_det,
                    log_hyperprior: range_prior.log_density(p.range) + h[0] + sd_prior.log_density(p.sd) + h[1],
                })
            }
            LatentPrior::SpdeAr1 {
                operator,
                periods,
                range_prior,
                sd_prior,
                correlation_prior,
            } => {
                let p = spde_params(h)?;
                let (qs, ld_s) = self.spatial(operator, &p)?;
                let mut lp = range_prior.log_density(p.range) + h[0] + sd_prior.log_density(p.sd) + h[1];
                if *periods < 2 {
                    return Ok(BlockEvaluation {
                        precision: qs,
                        log_det: ld_s,
                        log_hyperprior: lp,
                    });
                }
                let ar = ar1_params(0.0, h[2])?;
                lp += correlation_prior.log_density(ar.rho) + (1.0 - ar.rho * ar.rho).ln();
                let qt = ar1_precision(*periods, &ar)?;
                let k = operator.dim() as f64;
                Ok(BlockEvaluation {
                    precision: qt.kron(&qs),
                    log_det: k * ar1_log_det(*periods, &ar) + *periods as f64 * ld_s,
                    log_hyperprior: lp,
                })
            }
        }
    }

    /// Natural-scale values of the block's hyperparameters.
    pub fn natural(&self, h: &[f64]) -> Vec<(String, f64)> {
        let names: &[&str] = match &self.prior {
            LatentPrior::Fixed { .. } => &[],
            LatentPrior::Ar1 { .. } => &["precision", "rho"],
            LatentPrior::Spde { .. } => &["range", "sd"],
            LatentPrior::SpdeAr1 { .. } => &["range", "sd", "rho"],
        };
        names
            .iter()
            .zip(h)
            .map(|(n, &v)| (n.to_string(), to_natural(n, v)))
            .collect()
    }
}

pub(crate) fn to_natural(name: &str, v: f64) -> f64 {
    if name.contains("rho") {
        v.tanh()
    } else {
        v.exp()
    }
}

pub(crate) fn check_block_dim(name: &str, design: &CscMatrix, dim: usize, n: usize) -> Result<()> {
    if design.ncols() != dim || design.nrows() != n {
        return Err(Error::Dimension(format!(
            "block {name}: projector is {}x{}, expected {n}x{dim}",
            design.nrows(),
            design.ncols()
        )));
    }
    Ok(())
}
