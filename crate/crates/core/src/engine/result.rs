use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BlockKind, StructuralForm};
use crate::error::{Error, Result};
use crate::likelihoods::FamilySpec;
use crate::sparse::{CholeskyFactor, CscMatrix, SymbolicCholesky, Triplets};

pub const FIT_SCHEMA_VERSION: u32 = 1;

/// Location of one latent block inside the latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl BlockLayout {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Natural-scale summary of one hyperparameter. The interval maps the
/// Gaussian approximation on the unconstrained scale through the link,
/// so it is approximate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSummary {
    pub name: String,
    pub mode: f64,
    pub lower_95: f64,
    pub upper_95: f64,
    pub approximate: bool,
}

pub(crate) struct FitParts {
    pub form: StructuralForm,
    pub family: FamilySpec,
    pub hyper_names: Vec<String>,
    pub natural: Vec<(String, f64)>,
    pub hyper_mode: Vec<f64>,
    pub hyper_covariance: DMatrix<f64>,
    pub blocks: Vec<BlockLayout>,
    pub latent_mode: Vec<f64>,
    pub latent_precision: CscMatrix,
    pub factor: CholeskyFactor,
    pub log_marginal: f64,
    pub per_observation_loglik: Vec<Option<f64>>,
    pub warnings: Vec<String>,
    pub hessian_projected: bool,
    pub evaluations: usize,
}

/// Fitted model: hyperparameter mode and covariance, latent Gaussian
/// approximation and per-observation log-likelihoods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub form: StructuralForm,
    pub family: FamilySpec,
    pub hyper_names: Vec<String>,
    pub hyper_mode: Vec<f64>,
    pub hyper_covariance: Vec<Vec<f64>>,
    pub hyper_summary: Vec<HyperSummary>,
    pub blocks: Vec<BlockLayout>,
    pub latent_mode: Vec<f64>,
    pub latent_precision: Triplets,
    pub log_marginal: f64,
    pub per_observation_loglik: Vec<Option<f64>>,
    pub warnings: Vec<String>,
    pub hessian_projected: bool,
    pub evaluations: usize,
    #[serde(skip)]
    factor: OnceLock<CholeskyFactor>,
}

impl FitResult {
    pub(crate) fn new(p: FitParts) -> Self {
        let d = p.hyper_mode.len();
        let hyper_summary = p
            .natural
            .iter()
            .enumerate()
            .map(|(i, (name, mode))| {
                let sd = p.hyper_covariance[(i, i)].max(0.0).sqrt();
                let map = |v: f64| super::blocks::to_natural(name, v);
                let (a, b) = (map(p.hyper_mode[i] - 1.96 * sd), map(p.hyper_mode[i] + 1.96 * sd));
                HyperSummary {
                    name: name.clone(),
                    mode: *mode,
                    lower_95: a.min(b),
                    upper_95: a.max(b),
                    approximate: true,
                }
            })
            .collect();
        let factor = OnceLock::new();
        let _ = factor.set(p.factor);
        Self {
            schema_version: FIT_SCHEMA_VERSION,
            form: p.form,
            family: p.family,
            hyper_names: p.hyper_names,
            hyper_covariance: (0..d)
                .map(|i| (0..d).map(|j| p.hyper_covariance[(i, j)]).collect())
                .collect(),
            hyper_mode: p.hyper_mode,
            hyper_summary,
            blocks: p.blocks,
            latent_mode: p.latent_mode,
            latent_precision: p.latent_precision.to_triplets(),
            log_marginal: p.log_marginal,
            per_observation_loglik: p.per_observation_loglik,
            warnings: p.warnings,
            hessian_projected: p.hessian_projected,
            evaluations: p.evaluations,
            factor,
        }
    }

    /// Cholesky factor of the latent posterior precision, rebuilt on first
    /// use after deserialisation.
    pub fn factor(&self) -> Result<&CholeskyFactor> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let q = CscMatrix::from_triplet_record(&self.latent_precision)?;
        if q.nrows() != self.latent_mode.len() || q.ncols() != self.latent_mode.len() {
            return Err(Error::Dimension("latent precision does not match the latent mode".into()));
        }
        let f = SymbolicCholesky::analyze(&q)?.factorize(&q)?;
        Ok(self.factor.get_or_init(|| f))
    }

    pub fn block(&self, kind: BlockKind) -> Option<&BlockLayout> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    /// Posterior mode of the coefficients of a block.
    pub fn block_mode(&self, kind: BlockKind) -> Option<&[f64]> {
        self.block(kind).map(|b| &self.latent_mode[b.range()])
    }

    /// Fixed-effect coefficient by label.
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        let b = self.block(BlockKind::Fixed)?;
        let j = b.labels.iter().position(|l| l == label)?;
        Some(self.latent_mode[b.offset + j])
    }

    /// Posterior standard deviations of the given latent entries.
    pub fn latent_sd(&self, indices: &[usize]) -> Result<Vec<f64>> {
        Ok(self.factor()?.inverse_diagonal(indices).into_iter().map(f64::sqrt).collect())
    }

    /// Natural-scale hyperparameter mode by name (for example `spatial.range`).
    pub fn hyper(&self, name: &str) -> Option<f64> {
        self.hyper_summary.iter().find(|s| s.name == name).map(|s| s.mode)
    }

    pub fn total_loglik(&self) -> f64 {
        self.per_observation_loglik.iter().flatten().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: FitResult = serde_json::from_str(s)?;
        if fit.schema_version != FIT_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "fit schema version {} is not supported (expected {FIT_SCHEMA_VERSION})",
                fit.schema_version
            )));
        }
        Ok(fit)
    }
}
