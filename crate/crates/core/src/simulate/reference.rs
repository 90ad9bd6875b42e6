//! Dense Laplace approximation used as a reference for the sparse engine.

use nalgebra::{DMatrix, DVector};

use crate::engine::{nelder_mead, HyperParams, LatentPrior, Model, NelderMeadOptions, DISPERSION_PRIOR_RATE};
use crate::error::{Error, Result};
use crate::fields::SpdeOperator;

/// Largest latent dimension the dense reference accepts.
pub const DENSE_LIMIT: usize = 2000;

const MAX_ITER: usize = 100;

/// Dense Laplace evaluation at one hyperparameter setting.
#[derive(Debug, Clone)]
pub struct DenseLaplace {
    pub mode: Vec<f64>,
    pub prior_log_det: f64,
    pub posterior_log_det: f64,
    pub log_hyperprior: f64,
    pub log_marginal: f64,
}

/// Dense reference fit: hyperparameter mode and the Laplace evaluation there.
#[derive(Debug, Clone)]
pub struct DenseFit {
    pub hyper: Vec<f64>,
    pub laplace: DenseLaplace,
    pub evaluations: usize,
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// AR(1) precision as the inverse of the stationary covariance `ρ^|i−j| / (τ(1−ρ²))`.
fn ar1_dense(len: usize, rho: f64, tau: f64) -> Result<DMatrix<f64>> {
    let var = 1.0 / (tau * (1.0 - rho * rho));
    let cov = DMatrix::from_fn(len, len, |i, j| var * rho.powi(i.abs_diff(j) as i32));
    cov.try_inverse().ok_or_else(|| Error::invalid("singular AR(1) covariance"))
}

fn spde_dense(operator: &SpdeOperator, range: f64, sd: f64) -> DMatrix<f64> {
    let kappa = 8f64.sqrt() / range;
    let tau = 1.0 / (sd * kappa * (4.0 * std::f64::consts::PI).sqrt());
    let mass = operator.mass_diagonal();
    let g = operator.stiffness().to_dense();
    let c = DMatrix::from_diagonal(&DVector::from_vec(mass.clone()));
    let c_inv = DMatrix::from_diagonal(&DVector::from_iterator(mass.len(), mass.iter().map(|m| 1.0 / m)));
    let k2 = kappa * kappa;
    (c * (k2 * k2) + &g * (2.0 * k2) + &g * c_inv * &g) * (tau * tau)
}

/// Dense prior precision and log hyperprior at unconstrained `hyper`.
pub fn dense_prior(model: &Model, hyper: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let dim = model.latent_dim();
    let mut q = DMatrix::<f64>::zeros(dim, dim);
    let mut lp = 0.0;
    let mut offset = 0;
    let mut hi = 0;
    for block in &model.spec().blocks {
        let h = &hyper[hi..];
        let qb = match &block.prior {
            LatentPrior::Fixed { precision } => {
                let n = block.design.ncols();
                DMatrix::identity(n, n) * *precision
            }
            LatentPrior::Ar1 {
                len,
                precision_prior,
                correlation_prior,
            } => {
                let (tau, rho) = (h[0].exp(), h[1].tanh());
                lp += precision_prior.log_density(tau) + h[0];
                lp += correlation_prior.log_density(rho) + (1.0 - rho * rho).ln();
                ar1_dense(*len, rho, tau)?
            }
            LatentPrior::Spde {
                operator,
                range_prior,
                sd_prior,
            } => {
                let (r, s) = (h[0].exp(), h[1].exp());
                lp += range_prior.log_density(r) + h[0] + sd_prior.log_density(s) + h[1];
                spde_dense(operator, r, s)
            }
            LatentPrior::SpdeAr1 {
                operator,
                periods,
                range_prior,
                sd_prior,
                correlation_prior,
            } => {
                let (r, s) = (h[0].exp(), h[1].exp());
                lp += range_prior.log_density(r) + h[0] + sd_prior.log_density(s) + h[1];
                let qs = spde_dense(operator, r, s);
                if *periods < 2 {
                    qs
                } else {
                    let rho = h[2].tanh();
                    lp += correlation_prior.log_density(rho) + (1.0 - rho * rho).ln();
                    ar1_dense(*periods, rho, 1.0)?.kronecker(&qs)
                }
            }
        };
        let n = qb.nrows();
        q.view_mut((offset, offset), (n, n)).copy_from(&qb);
        offset += n;
        hi += block.prior.num_hyper();
    }
    if model.spec().family.family.has_dispersion() {
        let ld = hyper[hi];
        lp += DISPERSION_PRIOR_RATE.ln() - DISPERSION_PRIOR_RATE * ld.exp() + ld;
    }
    Ok((q, lp))
}

/// Dense Newton mode and Laplace log marginal at `hyper`.
pub fn dense_laplace(model: &Model, hyper: &[f64]) -> Result<DenseLaplace> {
    let dim = model.latent_dim();
    if dim > DENSE_LIMIT {
        return Err(Error::invalid(format!("latent dimension {dim} exceeds the dense limit {DENSE_LIMIT}")));
    }
    if hyper.len() != model.num_hyper() {
        return Err(Error::Dimension(format!("{} hyperparameters, model has {}", hyper.len(), model.num_hyper())));
    }
    let (q, log_hyperprior) = dense_prior(model, hyper)?;
    let family = model.family_at(&HyperParams(hyper.to_vec()));
    let a = model.design().to_dense();
    let spec = model.spec();
    let offset = DVector::from_column_slice(&spec.offset);
    let observed: Vec<(usize, u64)> = spec.y.iter().enumerate().filter_map(|(i, y)| y.map(|v| (i, v))).collect();

    let evaluate = |x: &DVector<f64>| {
        let eta = &a * x + &offset;
        let mut ll = 0.0;
        let mut d1 = DVector::zeros(eta.len());
        let mut w = DVector::zeros(eta.len());
        for &(i, y) in &observed {
            let (l, g, h) = family.derivatives(y, eta[i]);
            ll += l;
            d1[i] = g;
            w[i] = -h;
        }
        let objective = ll - 0.5 * x.dot(&(&q * x));
        (objective, d1, w)
    };
    let hessian = |w: &DVector<f64>| {
        let mut h = q.clone();
        h += a.transpose() * DMatrix::from_diagonal(w) * &a;
        h
    };

    let mut x = DVector::<f64>::zeros(dim);
    let (mut f, mut d1, mut w) = evaluate(&x);
    for _ in 0..MAX_ITER {
        let grad = a.transpose() * &d1 - &q * &x;
        let wc = w.map(|v| v.max(0.0));
        let chol = hessian(&wc)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: f64::NAN })?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &step * t;
            let (fc, dc, wc2) = evaluate(&cand);
            if fc.is_finite() && fc >= f - 1e-12 * (1.0 + f.abs()) {
                x = cand;
                f = fc;
                d1 = dc;
                w = wc2;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < 1e-13 {
            break;
        }
    }
    let prior_log_det = log_det_spd(&q)?;
    let posterior_log_det = log_det_spd(&hessian(&w)).or_else(|_| log_det_spd(&hessian(&w.map(|v| v.max(0.0)))))?;
    Ok(DenseLaplace {
        mode: x.as_slice().to_vec(),
        prior_log_det,
        posterior_log_det,
        log_hyperprior,
        log_marginal: f + 0.5 * prior_log_det - 0.5 * posterior_log_det + log_hyperprior,
    })
}

/// Maximises the dense Laplace log marginal from `init`.
pub fn dense_reference_fit(model: &Model, init: &[f64], opts: &NelderMeadOptions) -> Result<DenseFit> {
    if init.is_empty() {
        return Ok(DenseFit {
            hyper: vec![],
            laplace: dense_laplace(model, init)?,
            evaluations: 1,
        });
    }
    let nm = nelder_mead(
        |h: &[f64]| dense_laplace(model, h).map_or(f64::INFINITY, |e| -e.log_marginal),
        init,
        opts,
    );
    if !nm.value.is_finite() {
        return Err(Error::Optimization("dense reference: every evaluation failed".into()));
    }
    Ok(DenseFit {
        laplace: dense_laplace(model, &nm.x)?,
        hyper: nm.x,
        evaluations: nm.evaluations,
    })
}
