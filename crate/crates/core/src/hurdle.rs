//! Sequential two-part estimation: binary occurrence fit, posterior
//! predictive occurrence probabilities, zero classification by a threshold
//! chosen by WAIC on the non-zero data, and the final count fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{compute_waic, loglik_matrix, predictor_draws};
use crate::engine::{for_each_posterior_draw, HyperParams, OptimizeOptions};
use crate::error::{Error, Result};
use crate::likelihoods::logistic;
use crate::model::{ComponentFit, ComponentSpec, ModelContext};
use crate::sparse::CscMatrix;

/// Default cap on the number of threshold candidates.
pub const DEFAULT_GRID_CAP: usize = 201;

/// Initial simplex size when a candidate fit starts from the previous optimum.
const WARM_START_STEP: f64 = 0.25;

/// Occurrence indicator: 1 where `y > 0`.
pub fn make_binary(y: &[u64]) -> Vec<u64> {
    y.iter().map(|&v| u64::from(v > 0)).collect()
}

/// Count response for threshold `c`: positives pass through, a zero stays a
/// count zero when `π̃ ≥ c` and becomes missing (structural) otherwise.
pub fn classify_zeros(y: &[u64], pi_tilde: &[f64], c: f64) -> Result<Vec<Option<u64>>> {
    if y.len() != pi_tilde.len() {
        return Err(Error::Dimension(format!("{} responses for {} probabilities", y.len(), pi_tilde.len())));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid(format!("threshold must lie in [0, 1], got {c}")));
    }
    if let Some(p) = pi_tilde.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(y
        .iter()
        .zip(pi_tilde)
        .map(|(&v, &p)| if v > 0 || p >= c { Some(v) } else { None })
        .collect())
}

/// Monte Carlo posterior predictive occurrence probability
/// `E[logistic(η_i)]` for every observation of the binary component.
pub fn predict_pi_tilde(
    fit: &ComponentFit,
    design: &CscMatrix,
    offset: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("at least one posterior sample is required"));
    }
    if design.ncols() != fit.fit.latent_mode.len() || design.nrows() != offset.len() {
        return Err(Error::Dimension("binary design does not match the fit".into()));
    }
    let mut acc = vec![0.0; design.nrows()];
    let mut eta = vec![0.0; design.nrows()];
    for_each_posterior_draw(&fit.fit, samples, seed, |_, x| {
        eta.copy_from_slice(offset);
        design.mul_vec_acc(x, &mut eta);
        for (a, e) in acc.iter_mut().zip(&eta) {
            *a += logistic(*e);
        }
    })?;
    Ok(acc.into_iter().map(|a| a / samples as f64).collect())
}

/// Distinct `π̃` values at zero observations plus `{0, 1}`, thinned to at
/// most `cap` candidates by quantiles.
pub fn default_grid(y: &[u64], pi_tilde: &[f64], cap: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = y
        .iter()
        .zip(pi_tilde)
        .filter(|(&v, _)| v == 0)
        .map(|(_, &p)| p)
        .filter(|p| *p > 0.0 && *p < 1.0)
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let inner = cap.saturating_sub(2).max(1);
    if vals.len() > inner {
        let m = vals.len() - 1;
        vals = (0..inner)
            .map(|k| vals[((k * m) as f64 / (inner - 1).max(1) as f64).round() as usize])
            .collect();
        vals.dedup();
    }
    let mut grid = vec![0.0];
    grid.extend(vals);
    grid.push(1.0);
    grid
}

/// Share of zero observations whose classification matches the truth
/// (`true` = structural zero).
pub fn zero_classification_accuracy(classified: &[Option<u64>], y: &[u64], structural: &[bool]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for ((c, &v), &s) in classified.iter().zip(y).zip(structural) {
        if v == 0 {
            total += 1;
            if c.is_none() == s {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HurdleOptions {
    /// Posterior draws backing `π̃`.
    pub pi_samples: usize,
    /// Posterior draws backing each WAIC evaluation.
    pub waic_samples: usize,
    pub grid_cap: usize,
    pub seed: u64,
    pub optimize: OptimizeOptions,
}

impl Default for HurdleOptions {
    fn default() -> Self {
        Self {
            pi_samples: 10_000,
            waic_samples: 1000,
            grid_cap: DEFAULT_GRID_CAP,
            seed: 1,
            optimize: OptimizeOptions::default(),
        }
    }
}

/// One row of the threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCandidate {
    pub c: f64,
    pub structural_zeros: usize,
    pub count_zeros: usize,
    /// WAIC over the non-zero observations; `None` when the fit failed.
    pub waic_nonzero: Option<f64>,
    pub p_waic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub candidates: Vec<ThresholdCandidate>,
    pub chosen: f64,
    pub warnings: Vec<String>,
}

impl ThresholdSelection {
    pub fn grid(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.c).collect()
    }

    pub fn chosen_candidate(&self) -> &ThresholdCandidate {
        self.candidates.iter().find(|c| c.c == self.chosen).expect("chosen c is a grid member")
    }
}

/// WAIC of the count component over the non-zero observations.
pub fn nonzero_waic(ctx: &ModelContext, fit: &ComponentFit, y: &[u64], samples: usize, seed: u64) -> Result<(f64, f64)> {
    let model = ctx.model_spec(
        &ComponentSpec {
            form: fit.layout.form,
            family: fit.fit.family,
            priors: Default::default(),
            use_offset: fit.layout.use_offset,
            num_knots: fit.layout.spline.as_ref().map(|s| s.num_basis()),
        },
        vec![None; y.len()],
    )?;
    let design = CscMatrix::hstack(&model.blocks.iter().map(|b| &b.design).collect::<Vec<_>>())?;
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0).collect();
    if idx.is_empty() {
        return Err(Error::invalid("no non-zero observations to score"));
    }
    let yy: Vec<u64> = idx.iter().map(|&i| y[i]).collect();
    let eta = predictor_draws(&fit.fit, &design, &model.offset, &idx, samples, seed)?;
    let w = compute_waic(&loglik_matrix(&eta, &yy, &fit.fit.family), None)?;
    Ok((w.waic, w.p_waic))
}

/// Fits the count component for every `c` in `grid` and picks the smallest
/// non-zero WAIC (ties go to the smallest `c`). Candidates with identical
/// classifications share one fit; each fit starts from the previous optimum.
pub fn select_threshold(
    ctx: &ModelContext,
    y: &[u64],
    pi_tilde: &[f64],
    count_spec: &ComponentSpec,
    grid: &[f64],
    opts: &HurdleOptions,
) -> Result<(ThresholdSelection, ComponentFit)> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    let mut grid = grid.to_vec();
    if grid.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid("threshold grid must lie in [0, 1]"));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut cache: BTreeMap<Vec<bool>, std::result::Result<(f64, f64, usize), String>> = BTreeMap::new();
    let mut fits: Vec<ComponentFit> = Vec::new();
    let mut warm: Option<HyperParams> = None;
    let mut candidates = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    let mut candidate_opts = OptimizeOptions {
        covariance: false,
        ..opts.optimize
    };
    for &c in &grid {
        let z1 = classify_zeros(y, pi_tilde, c)?;
        let key: Vec<bool> = z1.iter().map(Option::is_none).collect();
        let structural = key.iter().filter(|&&k| k).count();
        let zeros = y.iter().filter(|&&v| v == 0).count();
        let outcome = match cache.get(&key) {
            Some(o) => o.clone(),
            None => {
                let o = ctx
                    .fit(count_spec, z1, warm.as_ref(), &candidate_opts)
                    .and_then(|fit| {
                        let (w, p) = nonzero_waic(ctx, &fit, y, opts.waic_samples, opts.seed)?;
                        Ok((fit, w, p))
                    })
                    .map(|(fit, w, p)| {
                        warm = Some(HyperParams(fit.fit.hyper_mode.clone()));
                        candidate_opts.nelder_mead.initial_step = WARM_START_STEP.min(opts.optimize.nelder_mead.initial_step);
                        fits.push(fit);
                        (w, p, fits.len() - 1)
                    })
                    .map_err(|e| e.to_string());
                cache.insert(key, o.clone());
                o
            }
        };
        match outcome {
            Ok((w, p, _)) => candidates.push(ThresholdCandidate {
                c,
                structural_zeros: structural,
                count_zeros: zeros - structural,
                waic_nonzero: Some(w),
                p_waic: Some(p),
                error: None,
            }),
            Err(e) => {
                warnings.push(format!("count fit failed at c = {c}: {e}"));
                candidates.push(ThresholdCandidate {
                    c,
                    structural_zeros: structural,
                    count_zeros: zeros - structural,
                    waic_nonzero: None,
                    p_waic: None,
                    error: Some(e),
                });
            }
        }
    }
    let best = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.waic_nonzero.map(|w| (i, w)))
        .fold(None::<(usize, f64)>, |acc, (i, w)| match acc {
            Some((_, bw)) if bw <= w => acc,
            _ => Some((i, w)),
        });
    let Some((best, _)) = best else {
        return Err(Error::Optimization("count fits failed for every threshold candidate".into()));
    };
    let chosen = candidates[best].c;
    let z1 = classify_zeros(y, pi_tilde, chosen)?;
    let key: Vec<bool> = z1.iter().map(Option::is_none).collect();
    let fit_index = match cache.get(&key) {
        Some(Ok((_, _, i))) => *i,
        _ => unreachable!("chosen candidate has a successful fit"),
    };
    let mut fit = fits.swap_remove(fit_index);
    if opts.optimize.covariance {
        fit.fit = ctx
            .assemble(count_spec, z1)?
            .complete_covariance(&fit.fit, &opts.optimize)?;
    }
    Ok((
        ThresholdSelection {
            candidates,
            chosen,
            warnings,
        },
        fit,
    ))
}

/// Result of the full sequential estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HurdleFit {
    /// `None` when the data contain no zeros and the binary part is degenerate.
    pub binary: Option<ComponentFit>,
    pub pi_tilde: Vec<f64>,
    pub selection: ThresholdSelection,
    pub count: ComponentFit,
    pub warnings: Vec<String>,
}

/// Design matrix and offset the engine uses for a component.
pub fn component_design(ctx: &ModelContext, spec: &ComponentSpec) -> Result<(CscMatrix, Vec<f64>)> {
    let m = ctx.model_spec(spec, vec![None; ctx.dataset.len()])?;
    let design = CscMatrix::hstack(&m.blocks.iter().map(|b| &b.design).collect::<Vec<_>>())?;
    Ok((design, m.offset))
}

/// Binary fit, `π̃`, threshold selection and final count fit.
pub fn fit_sequential(
    ctx: &ModelContext,
    binary_spec: &ComponentSpec,
    count_spec: &ComponentSpec,
    grid: Option<&[f64]>,
    opts: &HurdleOptions,
) -> Result<HurdleFit> {
    let y = &ctx.dataset.y;
    let mut warnings = Vec::new();
    let (binary, pi_tilde) = if y.iter().all(|&v| v > 0) {
        warnings.push("no zero observations: binary component is degenerate and was not fitted".into());
        (None, vec![1.0; y.len()])
    } else {
        let z0 = make_binary(y).into_iter().map(Some).collect();
        let fit = ctx
            .fit(binary_spec, z0, None, &opts.optimize)
            .map_err(|e| e.in_stage("binary fit"))?;
        let (design, offset) = component_design(ctx, binary_spec)?;
        let pi = predict_pi_tilde(&fit, &design, &offset, opts.pi_samples, opts.seed)
            .map_err(|e| e.in_stage("occurrence probabilities"))?;
        (Some(fit), pi)
    };
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(y, &pi_tilde, opts.grid_cap),
    };
    let (selection, count) = select_threshold(ctx, y, &pi_tilde, count_spec, &grid, opts)
        .map_err(|e| e.in_stage("threshold selection"))?;
    warnings.extend(selection.warnings.iter().cloned());
    Ok(HurdleFit {
        binary,
        pi_tilde,
        selection,
        count,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_indicator() {
        assert_eq!(make_binary(&[0, 3, 0, 1]), vec![0, 1, 0, 1]);
        assert_eq!(make_binary(&[0, 0]), vec![0, 0]);
        assert_eq!(make_binary(&[0, 1172])[1], 1);
    }

    #[test]
    fn zero_classification_rule() {
        let c = 0.99055;
        assert_eq!(classify_zeros(&[0], &[0.995], c).unwrap(), vec![Some(0)]);
        assert_eq!(classify_zeros(&[0], &[0.5], c).unwrap(), vec![None]);
        assert_eq!(classify_zeros(&[7], &[0.0], c).unwrap(), vec![Some(7)]);
        let y = [0, 0, 0, 4];
        let pi = [0.0, 0.3, 1.0, 0.2];
        assert!(classify_zeros(&y, &pi, 0.0).unwrap()[..3].iter().all(|v| *v == Some(0)));
        assert_eq!(classify_zeros(&y, &pi, 1.0).unwrap(), vec![None, None, Some(0), Some(4)]);
        assert!(classify_zeros(&y, &pi, 1.5).is_err());
    }

    #[test]
    fn grid_contains_bounds_and_is_capped() {
        let y = vec![0u64; 500];
        let pi: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        let g = default_grid(&y, &pi, 21);
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[20]), (0.0, 1.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(default_grid(&[1, 2], &[0.4, 0.6], 201), vec![0.0, 1.0]);
    }

    #[test]
    fn accuracy_counts_zeros_only() {
        let classified = vec![None, Some(0), Some(3), None];
        let y = [0, 0, 3, 0];
        let truth = [true, false, false, false];
        assert!((zero_classification_accuracy(&classified, &y, &truth) - 2.0 / 3.0).abs() < 1e-15);
    }
}
