//! Latent Gaussian model assembly and empirical-Bayes Laplace inference.
//!
//! The latent vector is ordered `[β | ψ | θ | φ]` (fixed effects, spline
//! coefficients, spatial field, spatio-temporal field), keeping only the
//! blocks present in the model.

mod blocks;
mod optim;
mod result;

pub use blocks::{BlockKind, LatentPrior};
pub use optim::{nelder_mead, nearest_spd, NelderMeadOptions, NelderMeadResult};
pub use result::{BlockLayout, FitResult, HyperSummary, FIT_SCHEMA_VERSION};

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use blocks::{check_block_dim, BlockEvaluator};

use crate::error::{Error, Result};
use crate::likelihoods::{Family, FamilySpec};
use crate::sparse::{CholeskyFactor, CscMatrix, SymbolicCholesky};

/// Prior precision of the fixed effects, i.e. `N(0, 10⁴)`.
pub const FIXED_EFFECT_PRECISION: f64 = 1e-4;
/// Rate of the exponential (Gamma(1, rate)) prior on the family dispersion.
pub const DISPERSION_PRIOR_RATE: f64 = 0.01;
/// Number of posterior draws sharing one random stream.
pub const SAMPLE_CHUNK: usize = 256;

const COVARIANCE_SKIPPED: &str = "hyperparameter covariance not computed";

/// Linear-predictor structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructuralForm {
    /// Fixed effects only.
    #[serde(rename = "baseline")]
    Baseline,
    /// Fixed effects, temporal spline and spatial field.
    #[serde(rename = "i")]
    I,
    /// Fixed effects and a spatio-temporal field.
    #[serde(rename = "ii")]
    II,
}

impl StructuralForm {
    pub fn label(&self) -> &'static str {
        match self {
            StructuralForm::Baseline => "baseline",
            StructuralForm::I => "I",
            StructuralForm::II => "II",
        }
    }
}

impl std::str::FromStr for StructuralForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "base" => Ok(StructuralForm::Baseline),
            "i" | "1" | "form1" | "form-i" => Ok(StructuralForm::I),
            "ii" | "2" | "form2" | "form-ii" => Ok(StructuralForm::II),
            other => Err(Error::invalid(format!("unknown structural form {other:?}"))),
        }
    }
}

/// One latent block: its projector onto observations, prior and initial
/// hyperparameters on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct LatentBlock {
    pub name: String,
    pub kind: BlockKind,
    pub design: CscMatrix,
    pub prior: LatentPrior,
    pub hyper_init: Vec<f64>,
    /// Coefficient labels (used for fixed effects).
    pub labels: Vec<String>,
}

impl LatentBlock {
    pub fn fixed(design: CscMatrix, labels: Vec<String>) -> Self {
        Self {
            name: "fixed".into(),
            kind: BlockKind::Fixed,
            design,
            prior: LatentPrior::Fixed {
                precision: FIXED_EFFECT_PRECISION,
            },
            hyper_init: vec![],
            labels,
        }
    }
}

/// Model description: observations, offsets, latent blocks and family.
/// `None` observations are missing and contribute nothing to the likelihood.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub y: Vec<Option<u64>>,
    pub offset: Vec<f64>,
    pub blocks: Vec<LatentBlock>,
    pub family: FamilySpec,
    pub form: StructuralForm,
    /// Starting dispersion for families that have one.
    pub dispersion_init: f64,
}

/// Hyperparameters on the unconstrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams(pub Vec<f64>);

impl HyperParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Latent mode and Gaussian approximation at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct InnerMode {
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    /// Per-observation log-likelihood at the mode (zero for missing rows).
    pub loglik: Vec<f64>,
    pub factor: CholeskyFactor,
    /// `Q*` values on the model's sparsity pattern.
    pub precision_values: Vec<f64>,
    pub iterations: usize,
    /// True when the curvature had to be clamped to keep `Q*` positive definite.
    pub clamped: bool,
    /// Penalised log posterior `Σℓ − ½xᵀQx` at the mode.
    pub objective: f64,
}

/// Laplace approximation of the hyperparameter log posterior.
#[derive(Debug, Clone)]
pub struct LaplaceEvaluation {
    pub log_marginal: f64,
    pub mode: InnerMode,
    pub prior_log_det: f64,
    pub posterior_log_det: f64,
    pub log_hyperprior: f64,
}

#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    n: usize,
    dim: usize,
    block_offsets: Vec<usize>,
    evaluators: Vec<BlockEvaluator>,
    hyper_ranges: Vec<std::ops::Range<usize>>,
    dispersion_index: Option<usize>,
    hyper_names: Vec<String>,
    design: CscMatrix,
    design_t: CscMatrix,
    pattern: CscMatrix,
    prior_positions: Vec<Vec<usize>>,
    pair_ptr: Vec<usize>,
    pair_pos: Vec<u32>,
    pair_coef: Vec<f64>,
    symbolic: Arc<SymbolicCholesky>,
    intercept: Option<usize>,
}

impl Model {
    /// Validates the specification and precomputes the sparsity structure.
    pub fn assemble(mut spec: ModelSpec) -> Result<Self> {
        let n = spec.y.len();
        if spec.offset.len() != n {
            return Err(Error::Dimension(format!(
                "offset has {} entries for {n} observations",
                spec.offset.len()
            )));
        }
        spec.family.validate()?;
        if spec.family.family.has_dispersion() && !(spec.dispersion_init > 0.0) {
            return Err(Error::invalid("dispersion starting value must be positive"));
        }
        spec.blocks.sort_by_key(|b| b.kind);
        for w in spec.blocks.windows(2) {
            if w[0].kind == w[1].kind {
                return Err(Error::invalid(format!("duplicate latent block {:?}", w[0].kind)));
            }
        }

        let mut evaluators = Vec::with_capacity(spec.blocks.len());
        let mut block_offsets = Vec::with_capacity(spec.blocks.len() + 1);
        let mut hyper_ranges = Vec::with_capacity(spec.blocks.len());
        let mut hyper_names = Vec::new();
        let mut dim = 0;
        for b in &spec.blocks {
            let bdim = b.prior.dim(b.design.ncols());
            check_block_dim(&b.name, &b.design, bdim, n)?;
            if b.hyper_init.len() != b.prior.num_hyper() {
                return Err(Error::Dimension(format!(
                    "block {}: {} initial hyperparameters for {} expected",
                    b.name,
                    b.hyper_init.len(),
                    b.prior.num_hyper()
                )));
            }
            let start = hyper_names.len();
            hyper_names.extend(b.prior.hyper_names().iter().map(|h| format!("{}.{h}", b.name)));
            hyper_ranges.push(start..hyper_names.len());
            block_offsets.push(dim);
            dim += bdim;
            evaluators.push(BlockEvaluator::new(b.prior.clone(), bdim)?);
        }
        block_offsets.push(dim);
        let dispersion_index = spec.family.family.has_dispersion().then(|| {
            hyper_names.push("log_dispersion".into());
            hyper_names.len() - 1
        });

        let parts: Vec<&CscMatrix> = spec.blocks.iter().map(|b| &b.design).collect();
        let design = if parts.is_empty() {
            CscMatrix::zeros(n, 0)
        } else {
            CscMatrix::hstack(&parts)?
        };
        let design_t = design.transpose();

        // Union pattern of the prior blocks and AᵀA.
        let init: Vec<f64> = spec.blocks.iter().flat_map(|b| b.hyper_init.iter().copied()).collect();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut block_entries: Vec<Vec<(usize, usize)>> = Vec::with_capacity(evaluators.len());
        for (k, ev) in evaluators.iter().enumerate() {
            let q = ev.evaluate(&init[hyper_ranges[k].clone()])?.precision;
            let off = block_offsets[k];
            let list: Vec<(usize, usize)> = q.iter().map(|(i, j, _)| (i + off, j + off)).collect();
            entries.extend(list.iter().map(|&(i, j)| (i, j, 0.0)));
            block_entries.push(list);
        }
        for i in 0..n {
            let (cols, _) = design_t.col(i);
            for &a in cols {
                for &b in cols {
                    entries.push((a, b, 0.0));
                }
            }
        }
        for d in 0..dim {
            entries.push((d, d, 0.0));
        }
        let pattern = CscMatrix::from_triplets(dim, dim, &entries);
        drop(entries);
        let prior_positions: Vec<Vec<usize>> = block_entries
            .iter()
            .map(|list| list.iter().map(|&(i, j)| pattern.position(i, j).expect("entry in pattern")).collect())
            .collect();
        let mut pair_ptr = Vec::with_capacity(n + 1);
        let mut pair_pos = Vec::new();
        let mut pair_coef = Vec::new();
        pair_ptr.push(0);
        for i in 0..n {
            let (cols, vals) = design_t.col(i);
            for (&a, &va) in cols.iter().zip(vals) {
                for (&b, &vb) in cols.iter().zip(vals) {
                    pair_pos.push(pattern.position(a, b).expect("entry in pattern") as u32);
                    pair_coef.push(va * vb);
                }
            }
            pair_ptr.push(pair_pos.len());
        }
        let symbolic = SymbolicCholesky::analyze(&pattern)?;
        let intercept = spec
            .blocks
            .first()
            .filter(|b| b.kind == BlockKind::Fixed && b.design.ncols() > 0)
            .map(|_| 0);

        Ok(Self {
            spec,
            n,
            dim,
            block_offsets,
            evaluators,
            hyper_ranges,
            dispersion_index,
            hyper_names,
            design,
            design_t,
            pattern,
            prior_positions,
            pair_ptr,
            pair_pos,
            pair_coef,
            symbolic,
            intercept,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_observations(&self) -> usize {
        self.n
    }

    pub fn latent_dim(&self) -> usize {
        self.dim
    }

    pub fn num_hyper(&self) -> usize {
        self.hyper_names.len()
    }

    pub fn hyper_names(&self) -> &[String] {
        &self.hyper_names
    }

    pub fn design(&self) -> &CscMatrix {
        &self.design
    }

    pub fn pattern(&self) -> &CscMatrix {
        &self.pattern
    }

    pub fn block_layout(&self) -> Vec<BlockLayout> {
        self.spec
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| BlockLayout {
                name: b.name.clone(),
                kind: b.kind,
                offset: self.block_offsets[k],
                len: self.block_offsets[k + 1] - self.block_offsets[k],
                labels: b.labels.clone(),
            })
            .collect()
    }

    pub fn initial_hyper(&self) -> HyperParams {
        let mut h: Vec<f64> = self.spec.blocks.iter().flat_map(|b| b.hyper_init.iter().copied()).collect();
        if self.dispersion_index.is_some() {
            h.push(self.spec.dispersion_init.ln());
        }
        HyperParams(h)
    }

    /// Family with the dispersion implied by `hyper`.
    pub fn family_at(&self, hyper: &HyperParams) -> FamilySpec {
        match self.dispersion_index {
            Some(i) => self.spec.family.with_dispersion(hyper.0[i].exp()),
            None => self.spec.family,
        }
    }

    /// Natural-scale hyperparameter values with readable names.
    pub fn natural_hyper(&self, hyper: &HyperParams) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, ev) in self.evaluators.iter().enumerate() {
            for (name, v) in ev.natural(&hyper.0[self.hyper_ranges[k].clone()]) {
                out.push((format!("{}.{name}", self.spec.blocks[k].name), v));
            }
        }
        if let Some(i) = self.dispersion_index {
            out.push(("dispersion".into(), hyper.0[i].exp()));
        }
        out
    }

    /// Linear predictor `offset + A x`.
    pub fn linear_predictor(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = self.spec.offset.clone();
        self.design.mul_vec_acc(x, &mut eta);
        eta
    }

    fn prior_at(&self, hyper: &HyperParams) -> Result<(Vec<f64>, f64, f64)> {
        if hyper.0.len() != self.num_hyper() {
            return Err(Error::Dimension(format!(
                "{} hyperparameters given, model has {}",
                hyper.0.len(),
                self.num_hyper()
            )));
        }
        if hyper.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite hyperparameter"));
        }
        let mut values = vec![0.0; self.pattern.nnz()];
        let mut log_det = 0.0;
        let mut log_hyperprior = 0.0;
        for (k, ev) in self.evaluators.iter().enumerate() {
            let e = ev.evaluate(&hyper.0[self.hyper_ranges[k].clone()])?;
            debug_assert_eq!(e.precision.nnz(), self.prior_positions[k].len());
            for (&pos, &v) in self.prior_positions[k].iter().zip(e.precision.values()) {
                values[pos] += v;
            }
            log_det += e.log_det;
            log_hyperprior += e.log_hyperprior;
        }
        if let Some(i) = self.dispersion_index {
            let d = hyper.0[i].exp();
            log_hyperprior += DISPERSION_PRIOR_RATE.ln() - DISPERSION_PRIOR_RATE * d + hyper.0[i];
        }
        Ok((values, log_det, log_hyperprior))
    }

    fn starting_point(&self, family: &FamilySpec) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        if let Some(j) = self.intercept {
            let (mut sy, mut so, mut m) = (0.0, 0.0, 0usize);
            for (y, o) in self.spec.y.iter().zip(&self.spec.offset) {
                if let Some(y) = y {
                    sy += *y as f64;
                    so += o;
                    m += 1;
                }
            }
            if m > 0 {
                let mean = sy / m as f64;
                x[j] = family.family.link_of_mean(mean, family.dispersion.max(1e-8)) - so / m as f64;
            }
        }
        x
    }

    fn objective(&self, family: &FamilySpec, prior: &CscMatrix, x: &[f64]) -> (f64, Vec<f64>) {
        let eta = self.linear_predictor(x);
        let mut f = 0.0;
        for (y, &e) in self.spec.y.iter().zip(&eta) {
            if let Some(y) = y {
                f += family.log_pmf_at(*y, e);
            }
        }
        let qx = prior.mul_vec(x);
        f -= 0.5 * x.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>();
        (f, eta)
    }

    fn posterior_values(&self, prior_values: &[f64], w: &[f64]) -> Vec<f64> {
        let mut values = prior_values.to_vec();
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for p in self.pair_ptr[i]..self.pair_ptr[i + 1] {
                values[self.pair_pos[p] as usize] += wi * self.pair_coef[p];
            }
        }
        values
    }

    /// Newton iterations with step halving for the latent mode.
    pub fn inner_mode(&self, hyper: &HyperParams, start: Option<&[f64]>) -> Result<InnerMode> {
        let (prior_values, _, _) = self.prior_at(hyper)?;
        self.inner_mode_with_prior(&self.family_at(hyper), &prior_values, start)
    }

    fn inner_mode_with_prior(
        &self,
        family: &FamilySpec,
        prior_values: &[f64],
        start: Option<&[f64]>,
    ) -> Result<InnerMode> {
        const MAX_ITER: usize = 50;
        const MAX_HALVINGS: usize = 30;
        const GRAD_TOL: f64 = 1e-6;

        let mut prior = self.pattern.clone();
        prior.values_mut().copy_from_slice(prior_values);
        let mut x = match start {
            Some(s) if s.len() == self.dim && s.iter().all(|v| v.is_finite()) => s.to_vec(),
            _ => self.starting_point(family),
        };
        let (mut f, mut eta) = self.objective(family, &prior, &x);
        if !f.is_finite() {
            x = self.starting_point(family);
            (f, eta) = self.objective(family, &prior, &x);
        }
        let mut grad_norm = f64::INFINITY;
        let mut d1 = vec![0.0; self.n];
        let mut d2 = vec![0.0; self.n];
        let mut loglik = vec![0.0; self.n];
        let mut polished = false;
        for iter in 0..=MAX_ITER + 1 {
            for i in 0..self.n {
                if let Some(y) = self.spec.y[i] {
                    let (l, a, b) = family.derivatives(y, eta[i]);
                    loglik[i] = l;
                    d1[i] = a;
                    d2[i] = b;
                } else {
                    loglik[i] = 0.0;
                    d1[i] = 0.0;
                    d2[i] = 0.0;
                }
            }
            let mut g = self.design_t.mul_vec(&d1);
            let qx = prior.mul_vec(&x);
            for (gi, q) in g.iter_mut().zip(&qx) {
                *gi -= q;
            }
            grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let w_clamped: Vec<f64> = d2.iter().map(|v| (-v).max(0.0)).collect();
            let converged_grad = grad_norm < GRAD_TOL;

            let values = self.posterior_values(prior_values, &w_clamped);
            let factor = self.symbolic.factorize_values(&values)?;
            let delta = factor.solve(&g);
            let decrement: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
            let converged_dec = decrement < 1e-14 * (1.0 + f.abs());
            if (converged_grad || converged_dec) && !polished && decrement.abs() < 1e-8 * (1.0 + f.abs()) {
                // A final full Newton step inside the quadratic region.
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
                let (ft, et) = self.objective(family, &prior, &trial);
                polished = true;
                if ft.is_finite() && ft >= f - 1e-12 * (1.0 + f.abs()) {
                    x = trial;
                    f = ft;
                    eta = et;
                    continue;
                }
            }
            if converged_grad || converged_dec || iter >= MAX_ITER {
                if !(converged_grad || converged_dec) {
                    return Err(Error::NewtonDiverged {
                        iterations: MAX_ITER,
                        gradient_norm: grad_norm,
                    });
                }
                return self.finish(x, eta, loglik, &d2, prior_values, factor, values, iter, f);
            }

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                let (ft, et) = self.objective(family, &prior, &trial);
                if ft.is_finite() && ft >= f {
                    x = trial;
                    f = ft;
                    eta = et;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                if decrement < 1e-8 * (1.0 + f.abs()) {
                    return self.finish(x, eta, loglik, &d2, prior_values, factor, values, iter, f);
                }
                return Err(Error::NewtonDiverged {
                    iterations: iter + 1,
                    gradient_norm: grad_norm,
                });
            }
        }
        Err(Error::NewtonDiverged {
            iterations: MAX_ITER,
            gradient_norm: grad_norm,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        x: Vec<f64>,
        eta: Vec<f64>,
        loglik: Vec<f64>,
        d2: &[f64],
        prior_values: &[f64],
        clamped_factor: CholeskyFactor,
        clamped_values: Vec<f64>,
        iterations: usize,
        objective: f64,
    ) -> Result<InnerMode> {
        let needs_true = d2.iter().any(|&v| v > 0.0);
        let (factor, values, clamped) = if needs_true {
            let w: Vec<f64> = d2.iter().map(|v| -v).collect();
            let values = self.posterior_values(prior_values, &w);
            match self.symbolic.factorize_values(&values) {
                Ok(f) => (f, values, false),
                Err(_) => (clamped_factor, clamped_values, true),
            }
        } else {
            (clamped_factor, clamped_values, false)
        };
        Ok(InnerMode {
            x,
            eta,
            loglik,
            factor,
            precision_values: values,
            iterations,
            clamped,
            objective,
        })
    }

    /// Laplace approximation of `log p(y | ω) + log p(ω)` on the unconstrained scale.
    pub fn laplace(&self, hyper: &HyperParams, start: Option<&[f64]>) -> Result<LaplaceEvaluation> {
        let (prior_values, prior_log_det, log_hyperprior) = self.prior_at(hyper)?;
        let mode = self.inner_mode_with_prior(&self.family_at(hyper), &prior_values, start)?;
        let posterior_log_det = mode.factor.log_det();
        let log_marginal = mode.objective + 0.5 * prior_log_det - 0.5 * posterior_log_det + log_hyperprior;
        if !log_marginal.is_finite() {
            return Err(Error::Optimization("non-finite log marginal".into()));
        }
        Ok(LaplaceEvaluation {
            log_marginal,
            mode,
            prior_log_det,
            posterior_log_det,
            log_hyperprior,
        })
    }

    pub fn log_marginal(&self, hyper: &HyperParams) -> Result<f64> {
        Ok(self.laplace(hyper, None)?.log_marginal)
    }

    /// Prior precision at `hyper` as a matrix on the model pattern.
    pub fn prior_precision(&self, hyper: &HyperParams) -> Result<CscMatrix> {
        let (values, _, _) = self.prior_at(hyper)?;
        let mut q = self.pattern.clone();
        q.values_mut().copy_from_slice(&values);
        Ok(q)
    }

    /// Maximises the Laplace log marginal over the hyperparameters.
    pub fn optimize(&self, init: &HyperParams, opts: &OptimizeOptions) -> Result<FitResult> {
        let d = self.num_hyper();
        let mut warnings = Vec::new();
        if d == 0 {
            let eval = self.laplace(init, None)?;
            return Ok(self.fit_result(init.clone(), DMatrix::zeros(0, 0), eval, 1, false, warnings));
        }
        let best_mode = std::cell::RefCell::new(None::<(f64, Vec<f64>)>);
        let failures = std::cell::Cell::new(0usize);
        let objective = |h: &[f64]| -> f64 {
            let start = best_mode.borrow().as_ref().map(|(_, x)| x.clone());
            match self.laplace(&HyperParams(h.to_vec()), start.as_deref()) {
                Ok(e) => {
                    let mut b = best_mode.borrow_mut();
                    if b.as_ref().map_or(true, |(v, _)| e.log_marginal > *v) {
                        *b = Some((e.log_marginal, e.mode.x.clone()));
                    }
                    -e.log_marginal
                }
                Err(_) => {
                    failures.set(failures.get() + 1);
                    f64::INFINITY
                }
            }
        };
        let nm = nelder_mead(objective, &init.0, &opts.nelder_mead);
        if !nm.value.is_finite() {
            return Err(Error::Optimization(format!(
                "all {} log-marginal evaluations failed",
                nm.evaluations
            )));
        }
        if failures.get() > 0 {
            warnings.push(format!("{} hyperparameter evaluations failed", failures.get()));
        }
        if !nm.converged {
            warnings.push(format!(
                "Nelder-Mead stopped at the evaluation limit ({})",
                opts.nelder_mead.max_evaluations
            ));
        }
        let hyper = HyperParams(nm.x.clone());
        let start = best_mode.borrow().as_ref().map(|(_, x)| x.clone());
        let eval = self.laplace(&hyper, start.as_deref())?;
        let (cov, projected) = if opts.covariance {
            self.hyper_covariance(&hyper, &eval, opts.hessian_step, &mut warnings)
        } else {
            warnings.push(COVARIANCE_SKIPPED.into());
            (DMatrix::zeros(d, d), false)
        };
        Ok(self.fit_result(hyper, cov, eval, nm.evaluations, projected, warnings))
    }

    /// Adds the hyperparameter covariance to a fit produced with
    /// `covariance: false`, keeping its mode.
    pub fn complete_covariance(&self, fit: &FitResult, opts: &OptimizeOptions) -> Result<FitResult> {
        let hyper = HyperParams(fit.hyper_mode.clone());
        let eval = self.laplace(&hyper, Some(&fit.latent_mode))?;
        let mut warnings: Vec<String> = fit
            .warnings
            .iter()
            .filter(|w| *w != COVARIANCE_SKIPPED && !w.starts_with("posterior precision uses clamped"))
            .cloned()
            .collect();
        let (cov, projected) = self.hyper_covariance(&hyper, &eval, opts.hessian_step, &mut warnings);
        Ok(self.fit_result(hyper, cov, eval, fit.evaluations, projected, warnings))
    }

    /// Inverse negative finite-difference Hessian of the log marginal at `hyper`.
    fn hyper_covariance(
        &self,
        hyper: &HyperParams,
        eval: &LaplaceEvaluation,
        h: f64,
        warnings: &mut Vec<String>,
    ) -> (DMatrix<f64>, bool) {
        let d = hyper.0.len();
        let f0 = eval.log_marginal;
        let mode_x = &eval.mode.x;
        let f_at = |v: &[f64]| self.laplace(&HyperParams(v.to_vec()), Some(mode_x)).map(|e| e.log_marginal);
        let mut hess = DMatrix::<f64>::zeros(d, d);
        let mut hess_ok = true;
        'outer: for i in 0..d {
            for j in i..d {
                let shifted = |si: f64, sj: f64| {
                    let mut v = hyper.0.clone();
                    v[i] += si;
                    v[j] += sj;
                    f_at(&v)
                };
                let val = if i == j {
                    match (shifted(h, 0.0), shifted(-h, 0.0)) {
                        (Ok(a), Ok(b)) => (a - 2.0 * f0 + b) / (h * h),
                        _ => {
                            hess_ok = false;
                            break 'outer;
                        }
                    }
                } else {
                    match (shifted(h, h), shifted(h, -h), shifted(-h, h), shifted(-h, -h)) {
                        (Ok(pp), Ok(pm), Ok(mp), Ok(mm)) => (pp - pm - mp + mm) / (4.0 * h * h),
                        _ => {
                            hess_ok = false;
                            break 'outer;
                        }
                    }
                };
                hess[(i, j)] = val;
                hess[(j, i)] = val;
            }
        }
        if !hess_ok {
            warnings.push("finite-difference Hessian evaluation failed; using unit covariance".into());
            return (DMatrix::identity(d, d), true);
        }
        let neg = -hess;
        match neg.clone().cholesky() {
            Some(c) => (c.inverse(), false),
            None => {
                warnings.push("Hessian not negative definite; covariance from nearest SPD projection".into());
                let cov = nearest_spd(&neg, 1e-6).try_inverse().unwrap_or_else(|| DMatrix::identity(d, d));
                (cov, true)
            }
        }
    }

    fn fit_result(
        &self,
        hyper: HyperParams,
        cov: DMatrix<f64>,
        eval: LaplaceEvaluation,
        evaluations: usize,
        projected: bool,
        mut warnings: Vec<String>,
    ) -> FitResult {
        if eval.mode.clamped {
            warnings.push("posterior precision uses clamped curvature (non log-concave likelihood)".into());
        }
        let mut q = self.pattern.clone();
        q.values_mut().copy_from_slice(&eval.mode.precision_values);
        let per_obs = self
            .spec
            .y
            .iter()
            .zip(&eval.mode.loglik)
            .map(|(y, &l)| y.map(|_| l))
            .collect();
        FitResult::new(result::FitParts {
            form: self.spec.form,
            family: self.family_at(&hyper),
            hyper_names: self.hyper_names.clone(),
            natural: self.natural_hyper(&hyper),
            hyper_mode: hyper.0,
            hyper_covariance: cov,
            blocks: self.block_layout(),
            latent_mode: eval.mode.x,
            latent_precision: q,
            factor: eval.mode.factor,
            log_marginal: eval.log_marginal,
            per_observation_loglik: per_obs,
            warnings,
            hessian_projected: projected,
            evaluations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub nelder_mead: NelderMeadOptions,
    pub hessian_step: f64,
    /// Computes the hyperparameter covariance from a finite-difference Hessian.
    pub covariance: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            nelder_mead: NelderMeadOptions::default(),
            hessian_step: 1e-3,
            covariance: true,
        }
    }
}

/// Validated assembly of a model specification.
pub fn assemble(spec: ModelSpec) -> Result<Model> {
    Model::assemble(spec)
}

/// Random stream for chunk `chunk` of the draws generated from `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Calls `visit(index, draw)` for `n` draws from `N(x*, Q*⁻¹)`.
pub fn for_each_posterior_draw(
    fit: &FitResult,
    n: usize,
    seed: u64,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    for chunk in 0..n.div_ceil(SAMPLE_CHUNK) {
        posterior_chunk(fit, chunk, n, seed, &mut visit)?;
    }
    Ok(())
}

/// Draws of chunk `chunk` (indices `chunk·256 .. min(n, (chunk+1)·256)`) of
/// the sequence produced by [`for_each_posterior_draw`]. Chunks are
/// independent, so they can be generated in parallel.
pub fn posterior_chunk(
    fit: &FitResult,
    chunk: usize,
    n: usize,
    seed: u64,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let factor = fit.factor()?;
    let mode = &fit.latent_mode;
    let mut z = vec![0.0; mode.len()];
    let mut rng = chunk_rng(seed, chunk as u64);
    let end = ((chunk + 1) * SAMPLE_CHUNK).min(n);
    for s in chunk * SAMPLE_CHUNK..end {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut x = factor.correlate(&z);
        for (xi, m) in x.iter_mut().zip(mode) {
            *xi += m;
        }
        visit(s, &x);
    }
    Ok(())
}

/// `n × dim` matrix of posterior draws.
pub fn sample_posterior(fit: &FitResult, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let dim = fit.latent_mode.len();
    let mut out = DMatrix::zeros(n, dim);
    for_each_posterior_draw(fit, n, seed, |s, x| {
        out.row_mut(s).copy_from_slice(x);
    })?;
    Ok(out)
}

/// Whether the family's negative log-likelihood is convex in `η`.
pub fn is_log_concave(family: Family) -> bool {
    !matches!(family, Family::GPoisson)
}

#[cfg(test)]
mod tests;
