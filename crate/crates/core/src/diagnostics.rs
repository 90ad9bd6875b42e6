//! Model-adequacy criteria from posterior samples: WAIC, DIC, CPO and PIT.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{for_each_posterior_draw, FitResult};
use crate::error::{Error, Result};
use crate::likelihoods::FamilySpec;
use crate::sparse::CscMatrix;

/// Minimum number of posterior samples accepted by the checked criteria.
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaicScore {
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicScore {
    pub dic: f64,
    pub p_dic: f64,
    pub mean_deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoPit {
    pub cpo: Vec<f64>,
    pub pit: Vec<f64>,
    /// Observations whose CPO underflowed to zero or is not finite.
    pub underflow: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub dic: f64,
    pub p_dic: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub cpo: Vec<f64>,
    pub pit: Vec<f64>,
    pub cpo_underflow: Vec<usize>,
    /// Mean of `−log CPO`.
    pub log_score: f64,
    pub samples: usize,
}

fn check_shape(ll: &DMatrix<f64>, mask: Option<&[bool]>) -> Result<()> {
    if ll.nrows() < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "at least {MIN_SAMPLES} posterior samples are required, got {}",
            ll.nrows()
        )));
    }
    if let Some(m) = mask {
        if m.len() != ll.ncols() {
            return Err(Error::Dimension(format!("mask has {} entries for {} observations", m.len(), ll.ncols())));
        }
    }
    Ok(())
}

fn log_mean_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - max).exp(), n + 1));
    max + (sum / n as f64).ln()
}

fn selected(mask: Option<&[bool]>, j: usize) -> bool {
    mask.is_none_or(|m| m[j])
}

/// WAIC over the observations selected by `mask` (all when `None`).
/// `ll` is `S × n` (samples by observations).
pub fn compute_waic(ll: &DMatrix<f64>, mask: Option<&[bool]>) -> Result<WaicScore> {
    check_shape(ll, mask)?;
    Ok(compute_waic_unchecked(ll, mask))
}

/// [`compute_waic`] without the minimum-sample requirement.
pub fn compute_waic_unchecked(ll: &DMatrix<f64>, mask: Option<&[bool]>) -> WaicScore {
    let s = ll.nrows();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for j in 0..ll.ncols() {
        if !selected(mask, j) {
            continue;
        }
        let col = ll.column(j);
        lppd += log_mean_exp(col.iter().copied());
        if s > 1 {
            let pivot = col[0];
            let mean = col.iter().map(|v| v - pivot).sum::<f64>() / s as f64;
            p_waic += col.iter().map(|v| (v - pivot - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
        }
    }
    WaicScore {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
    }
}

/// DIC with `pD = D̄ − D(θ̄)`; `pD` is reported as computed, including
/// negative values.
pub fn compute_dic(ll_at_mean: &[f64], ll: &DMatrix<f64>, mask: Option<&[bool]>) -> Result<DicScore> {
    check_shape(ll, mask)?;
    if ll_at_mean.len() != ll.ncols() {
        return Err(Error::Dimension("log-likelihood at the mean has the wrong length".into()));
    }
    Ok(compute_dic_unchecked(ll_at_mean, ll, mask))
}

pub fn compute_dic_unchecked(ll_at_mean: &[f64], ll: &DMatrix<f64>, mask: Option<&[bool]>) -> DicScore {
    let s = ll.nrows() as f64;
    let mut total = 0.0;
    let mut at_mean = 0.0;
    for j in 0..ll.ncols() {
        if !selected(mask, j) {
            continue;
        }
        let pivot = ll_at_mean[j];
        total += pivot + ll.column(j).iter().map(|v| v - pivot).sum::<f64>() / s;
        at_mean += pivot;
    }
    let mean_deviance = -2.0 * total;
    let d_hat = -2.0 * at_mean;
    let p_dic = mean_deviance - d_hat;
    DicScore {
        dic: d_hat + 2.0 * p_dic,
        p_dic,
        mean_deviance,
    }
}

/// Harmonic-mean CPO and midpoint PIT. `eta` holds linear-predictor samples
/// with the same shape as `ll`.
pub fn compute_cpo_pit(ll: &DMatrix<f64>, y: &[u64], family: &FamilySpec, eta: &DMatrix<f64>) -> Result<CpoPit> {
    check_shape(ll, None)?;
    if ll.shape() != eta.shape() || y.len() != ll.ncols() {
        return Err(Error::Dimension("log-likelihood, predictor samples and y disagree in shape".into()));
    }
    let s = ll.nrows() as f64;
    let mut cpo = Vec::with_capacity(y.len());
    let mut pit = Vec::with_capacity(y.len());
    let mut underflow = Vec::new();
    for (j, &yj) in y.iter().enumerate() {
        let log_cpo = -log_mean_exp(ll.column(j).iter().map(|v| -v));
        let c = log_cpo.exp();
        if !(c > 0.0) || !c.is_finite() {
            underflow.push(j);
        }
        cpo.push(c);
        let mut acc = 0.0;
        for e in eta.column(j).iter() {
            let pmf = family.log_pmf_at(yj, *e).exp();
            acc += family.cdf(yj, *e) - 0.5 * pmf;
        }
        pit.push((acc / s).clamp(0.0, 1.0));
    }
    Ok(CpoPit { cpo, pit, underflow })
}

/// Linear-predictor draws (`S × |indices|`) for the listed observations.
pub fn predictor_draws(
    fit: &FitResult,
    design: &CscMatrix,
    offset: &[f64],
    indices: &[usize],
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if design.ncols() != fit.latent_mode.len() || offset.len() != design.nrows() {
        return Err(Error::Dimension("design does not match the fit".into()));
    }
    let rows = design.transpose();
    let mut out = DMatrix::zeros(samples, indices.len());
    for_each_posterior_draw(fit, samples, seed, |s, x| {
        for (k, &i) in indices.iter().enumerate() {
            let (cols, vals) = rows.col(i);
            out[(s, k)] = offset[i] + cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum::<f64>();
        }
    })?;
    Ok(out)
}

/// Per-sample log-likelihoods for draws of the linear predictor.
pub fn loglik_matrix(eta: &DMatrix<f64>, y: &[u64], family: &FamilySpec) -> DMatrix<f64> {
    DMatrix::from_fn(eta.nrows(), eta.ncols(), |s, j| family.log_pmf_at(y[j], eta[(s, j)]))
}

/// DIC, WAIC, CPO and PIT for the observed entries of `y`.
pub fn adequacy(
    fit: &FitResult,
    design: &CscMatrix,
    offset: &[f64],
    y: &[Option<u64>],
    samples: usize,
    seed: u64,
) -> Result<AdequacyReport> {
    let indices: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_some()).collect();
    let yy: Vec<u64> = indices.iter().map(|&i| y[i].unwrap()).collect();
    let eta = predictor_draws(fit, design, offset, &indices, samples, seed)?;
    let ll = loglik_matrix(&eta, &yy, &fit.family);
    let mean_eta: Vec<f64> = (0..eta.ncols()).map(|j| eta.column(j).mean()).collect();
    let ll_mean: Vec<f64> = yy.iter().zip(&mean_eta).map(|(&v, &e)| fit.family.log_pmf_at(v, e)).collect();
    let waic = compute_waic(&ll, None)?;
    let dic = compute_dic(&ll_mean, &ll, None)?;
    let cp = compute_cpo_pit(&ll, &yy, &fit.family, &eta)?;
    let mut cpo = vec![f64::NAN; y.len()];
    let mut pit = vec![f64::NAN; y.len()];
    for (k, &i) in indices.iter().enumerate() {
        cpo[i] = cp.cpo[k];
        pit[i] = cp.pit[k];
    }
    let log_score = cp.cpo.iter().map(|c| -c.ln()).sum::<f64>() / cp.cpo.len().max(1) as f64;
    Ok(AdequacyReport {
        dic: dic.dic,
        p_dic: dic.p_dic,
        waic: waic.waic,
        p_waic: waic.p_waic,
        cpo,
        pit,
        cpo_underflow: cp.underflow.iter().map(|&k| indices[k]).collect(),
        log_score,
        samples,
    })
}

/// Kolmogorov–Smirnov distance between `values` and the uniform law on [0, 1].
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loglik() {
        let ll = DMatrix::from_element(200, 1, -1.7);
        let w = compute_waic(&ll, None).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic - 3.4).abs() < 1e-12);
        let d = compute_dic(&[-1.7], &ll, None).unwrap();
        assert!(d.p_dic.abs() < 1e-12);
        assert!((d.dic - 3.4).abs() < 1e-12);
    }

    #[test]
    fn two_sample_toy() {
        let a = 0.5f64.ln();
        let b = 0.25f64.ln();
        let ll = DMatrix::from_column_slice(2, 1, &[a, b]);
        let w = compute_waic_unchecked(&ll, None);
        assert!((w.lppd - 0.375f64.ln()).abs() < 1e-15);
        let m = 0.5 * (a + b);
        let var = (a - m).powi(2) + (b - m).powi(2);
        assert!((w.p_waic - var).abs() < 1e-15);
        assert!(compute_waic(&ll, None).is_err());
    }

    #[test]
    fn negative_p_dic_is_reported() {
        let ll = DMatrix::from_fn(100, 1, |s, _| -1.0 - (s % 2) as f64);
        let d = compute_dic(&[-3.0], &ll, None).unwrap();
        assert!(d.p_dic < 0.0);
    }

    #[test]
    fn full_mask_equals_unmasked() {
        let ll = DMatrix::from_fn(150, 4, |s, j| -(((s * 7 + j * 3) % 11) as f64) / 3.0);
        let mask = vec![true; 4];
        assert_eq!(compute_waic(&ll, Some(&mask)).unwrap(), compute_waic(&ll, None).unwrap());
    }

    #[test]
    fn perfect_model_has_unit_cpo() {
        let ll = DMatrix::zeros(100, 3);
        let eta = DMatrix::from_element(100, 3, 60.0);
        let r = compute_cpo_pit(&ll, &[1, 1, 1], &FamilySpec::bernoulli(), &eta).unwrap();
        assert!(r.cpo.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert!(r.pit.iter().all(|&p| (p - 0.5).abs() < 1e-9));
        assert!(r.underflow.is_empty());
    }

    #[test]
    fn ks_of_uniform_grid() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&v) < 1e-3 + 1e-12);
    }
}
