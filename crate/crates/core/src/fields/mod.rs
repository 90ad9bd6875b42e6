//! Sparse precision matrices for the latent blocks and the priors on their
//! hyperparameters.

mod pc_prior;
mod spline;

pub use pc_prior::{pc_prior_log_density, PcPrior, QuantileSpec};
pub use spline::SplineBasis;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FemMatrices;
use crate::sparse::CscMatrix;

/// Matérn field parameters with smoothness fixed at ν = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeParams {
    /// Distance at which the correlation drops to about 0.14.
    pub range: f64,
    /// Marginal standard deviation.
    pub sd: f64,
}

impl SpdeParams {
    pub fn new(range: f64, sd: f64) -> Result<Self> {
        if !(range > 0.0) || !(sd > 0.0) || !range.is_finite() || !sd.is_finite() {
            return Err(Error::invalid(format!(
                "SPDE range and sd must be positive, got r={range}, sd={sd}"
            )));
        }
        Ok(Self { range, sd })
    }

    pub fn kappa(&self) -> f64 {
        8f64.sqrt() / self.range
    }

    /// Precision scaling giving marginal variance `sd²`.
    pub fn tau(&self) -> f64 {
        1.0 / (self.sd * self.kappa() * (4.0 * std::f64::consts::PI).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLabel {
    Spline,
    Spatial,
    SpatioTemporal,
}

#[derive(Debug, Clone)]
pub struct PrecisionBlock {
    pub label: BlockLabel,
    pub matrix: CscMatrix,
}

impl PrecisionBlock {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// The three SPDE building blocks `C̃`, `G` and `G C̃⁻¹ G` stored on one
/// shared sparsity pattern so each precision evaluation only recombines values.
#[derive(Debug, Clone)]
pub struct SpdeOperator {
    pattern: CscMatrix,
    mass: Vec<f64>,
    stiffness: Vec<f64>,
    biharmonic: Vec<f64>,
}

impl SpdeOperator {
    pub fn new(fem: &FemMatrices) -> Self {
        let c = CscMatrix::diagonal(&fem.mass_lumped);
        let c_inv = CscMatrix::diagonal(&fem.mass_lumped.iter().map(|m| 1.0 / m).collect::<Vec<_>>());
        let g = &fem.stiffness;
        let g_cinv_g = g.matmul(&c_inv.matmul(g));
        let zero = g_cinv_g.add_scaled(0.0, g, 0.0).add_scaled(0.0, &c, 0.0);
        let on_pattern = |m: &CscMatrix| zero.add_scaled(0.0, m, 1.0).values().to_vec();
        Self {
            mass: on_pattern(&c),
            stiffness: on_pattern(g),
            biharmonic: on_pattern(&g_cinv_g),
            pattern: zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.pattern.ncols()
    }

    /// Lumped mass matrix diagonal `C̃`.
    pub fn mass_diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.pattern.position(i, i).map_or(0.0, |p| self.mass[p]))
            .collect()
    }

    /// Stiffness matrix `G` on the operator pattern.
    pub fn stiffness(&self) -> CscMatrix {
        let mut g = self.pattern.clone();
        g.values_mut().copy_from_slice(&self.stiffness);
        g
    }

    /// `Q = τ²(κ⁴C̃ + 2κ²G + G C̃⁻¹ G)`.
    pub fn precision(&self, p: &SpdeParams) -> CscMatrix {
        let k2 = p.kappa().powi(2);
        let t2 = p.tau().powi(2);
        let mut q = self.pattern.clone();
        for (((v, m), g), b) in q
            .values_mut()
            .iter_mut()
            .zip(&self.mass)
            .zip(&self.stiffness)
            .zip(&self.biharmonic)
        {
            *v = t2 * (k2 * k2 * m + 2.0 * k2 * g + b);
        }
        q
    }
}

pub fn spde_precision(fem: &FemMatrices, p: &SpdeParams) -> PrecisionBlock {
    PrecisionBlock {
        label: BlockLabel::Spatial,
        matrix: SpdeOperator::new(fem).precision(p),
    }
}

/// Modified Bessel function of the second kind of order one, from
/// `K₁(x) = ∫₀^∞ exp(−x cosh t) cosh t dt` by the trapezoid rule.
pub fn bessel_k1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    const H: f64 = 0.02;
    let mut sum = 0.5 * (-x).exp();
    let mut k = 1;
    loop {
        let t = k as f64 * H;
        let term = (-x * t.cosh()).exp() * t.cosh();
        sum += term;
        if term < 1e-18 * sum || term == 0.0 {
            break;
        }
        k += 1;
    }
    sum * H
}

/// Matérn covariance with ν = 1: `σ² κd K₁(κd)`.
pub fn matern_covariance(distance: f64, p: &SpdeParams) -> f64 {
    let x = p.kappa() * distance.abs();
    if x == 0.0 {
        return p.sd * p.sd;
    }
    if x > 700.0 {
        return 0.0;
    }
    p.sd * p.sd * x * bessel_k1(x)
}

/// Stationary AR(1) parameters: correlation and innovation precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub rho: f64,
    pub tau: f64,
}

impl Ar1Params {
    pub fn new(rho: f64, tau: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::invalid(format!("AR(1) correlation must satisfy |rho| < 1, got {rho}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("AR(1) precision must be positive, got {tau}")));
        }
        Ok(Self { rho, tau })
    }

    pub fn marginal_variance(&self) -> f64 {
        1.0 / (self.tau * (1.0 - self.rho * self.rho))
    }
}

/// Tridiagonal precision of a stationary AR(1) series of length `t`.
pub fn ar1_precision(t: usize, p: &Ar1Params) -> Result<CscMatrix> {
    if t == 0 {
        return Err(Error::invalid("AR(1) needs at least one time point"));
    }
    Ar1Params::new(p.rho, p.tau)?;
    if t == 1 {
        return Ok(CscMatrix::diagonal(&[p.tau * (1.0 - p.rho * p.rho)]));
    }
    let mut entries = Vec::with_capacity(3 * t);
    for i in 0..t {
        let d = if i == 0 || i == t - 1 { 1.0 } else { 1.0 + p.rho * p.rho };
        entries.push((i, i, p.tau * d));
        if i + 1 < t {
            entries.push((i, i + 1, -p.tau * p.rho));
            entries.push((i + 1, i, -p.tau * p.rho));
        }
    }
    Ok(CscMatrix::from_triplets(t, t, &entries))
}

/// `log det` of the AR(1) precision of length `t`.
pub fn ar1_log_det(t: usize, p: &Ar1Params) -> f64 {
    t as f64 * p.tau.ln() + (1.0 - p.rho * p.rho).ln()
}

/// Separable precision `Q_time ⊗ Q_space`, time-major: entry `t·K + k`
/// is mesh node `k` in period `t`.
pub fn spatio_temporal_precision(spatial: &PrecisionBlock, temporal: &CscMatrix) -> PrecisionBlock {
    PrecisionBlock {
        label: BlockLabel::SpatioTemporal,
        matrix: temporal.kron(&spatial.matrix),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SymbolicCholesky;

    #[test]
    fn ar1_identity_and_two_by_two() {
        let q = ar1_precision(3, &Ar1Params::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(q.to_dense(), nalgebra::DMatrix::identity(3, 3));
        let q = ar1_precision(2, &Ar1Params::new(0.5, 1.0).unwrap()).unwrap();
        let inv = q.to_dense().try_inverse().unwrap();
        assert!((inv[(0, 1)] / inv[(0, 0)] - 0.5).abs() < 1e-14);
        assert!(ar1_precision(3, &Ar1Params { rho: 1.0, tau: 1.0 }).is_err());
    }

    #[test]
    fn ar1_log_det_matches_factorisation() {
        let p = Ar1Params::new(0.574, 2.5).unwrap();
        for t in 1..8 {
            let q = ar1_precision(t, &p).unwrap();
            let f = SymbolicCholesky::analyze(&q).unwrap().factorize(&q).unwrap();
            assert!((f.log_det() - ar1_log_det(t, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn matern_limits() {
        let p = SpdeParams::new(2.0, 1.3).unwrap();
        assert_eq!(matern_covariance(0.0, &p), 1.3 * 1.3);
        assert!(matern_covariance(100.0, &p) < 1e-10);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let c = matern_covariance(i as f64 * 0.05, &p);
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn spde_parameters_validated() {
        assert!(SpdeParams::new(0.0, 1.0).is_err());
        assert!(SpdeParams::new(1.0, -1.0).is_err());
        let p = SpdeParams::new(8f64.sqrt(), 1.0).unwrap();
        assert!((p.kappa() - 1.0).abs() < 1e-15);
    }
}
