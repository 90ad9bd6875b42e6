//! Observation families in the linear predictor `η`: log-pmf, derivatives,
//! moments, CDFs and samplers.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Bernoulli,
    Poisson,
    #[serde(rename = "negbinomial")]
    NegBinomial,
    #[serde(rename = "gpoisson")]
    GPoisson,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::NegBinomial => "negbinomial",
            Family::GPoisson => "gpoisson",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Family::Bernoulli => "Bernoulli",
            Family::Poisson => "Poisson",
            Family::NegBinomial => "Negative Binomial",
            Family::GPoisson => "Generalized Poisson",
        }
    }

    pub fn has_dispersion(&self) -> bool {
        matches!(self, Family::NegBinomial | Family::GPoisson)
    }

    /// Link applied to a mean to get the matching linear predictor, used for
    /// starting values.
    pub fn link_of_mean(&self, mean: f64, dispersion: f64) -> f64 {
        match self {
            Family::Bernoulli => {
                let p = mean.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            Family::Poisson | Family::GPoisson => mean.max(1e-6).ln(),
            Family::NegBinomial => (mean.max(1e-6) / dispersion).ln(),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "binomial" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            "negbinomial" | "nbinomial" | "nb" => Ok(Family::NegBinomial),
            "gpoisson" | "gp" => Ok(Family::GPoisson),
            other => Err(Error::invalid(format!("unknown family {other:?}"))),
        }
    }
}

/// A family with its dispersion: `ξ` for the negative binomial, `ϕ̄` for the
/// generalized Poisson. The power parameter is fixed at one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub dispersion: f64,
    pub power: u8,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn ln_factorial(y: u64) -> f64 {
    if y < 2 {
        0.0
    } else {
        ln_gamma(y as f64 + 1.0)
    }
}

impl FamilySpec {
    pub fn bernoulli() -> Self {
        Self {
            family: Family::Bernoulli,
            dispersion: 0.0,
            power: 1,
        }
    }

    pub fn poisson() -> Self {
        Self {
            family: Family::Poisson,
            dispersion: 0.0,
            power: 1,
        }
    }

    pub fn negbinomial(xi: f64) -> Result<Self> {
        Self::new(Family::NegBinomial, xi)
    }

    pub fn gpoisson(phi_bar: f64) -> Result<Self> {
        Self::new(Family::GPoisson, phi_bar)
    }

    pub fn new(family: Family, dispersion: f64) -> Result<Self> {
        let spec = Self {
            family,
            dispersion,
            power: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.power != 1 {
            return Err(Error::invalid("only power p = 1 is supported"));
        }
        match self.family {
            Family::NegBinomial if !(self.dispersion > 0.0) || !self.dispersion.is_finite() => Err(
                Error::invalid(format!("negative binomial size must be positive, got {}", self.dispersion)),
            ),
            Family::GPoisson if !(self.dispersion >= 0.0) || !self.dispersion.is_finite() => Err(
                Error::invalid(format!("generalized Poisson dispersion must be >= 0, got {}", self.dispersion)),
            ),
            _ => Ok(()),
        }
    }

    pub fn with_dispersion(&self, dispersion: f64) -> Self {
        Self { dispersion, ..*self }
    }

    fn check(&self, y: i64, eta: f64) -> Result<u64> {
        self.validate()?;
        if y < 0 {
            return Err(Error::invalid(format!("observation must be non-negative, got {y}")));
        }
        if self.family == Family::Bernoulli && y > 1 {
            return Err(Error::invalid(format!("Bernoulli observation must be 0 or 1, got {y}")));
        }
        if !eta.is_finite() {
            return Err(Error::invalid("linear predictor must be finite"));
        }
        Ok(y as u64)
    }

    pub fn log_pmf(&self, y: i64, eta: f64) -> Result<f64> {
        let y = self.check(y, eta)?;
        Ok(self.log_pmf_at(y, eta))
    }

    /// First and second derivatives of the log-pmf with respect to `η`.
    pub fn d_log_pmf(&self, y: i64, eta: f64) -> Result<(f64, f64)> {
        let y = self.check(y, eta)?;
        let (_, d1, d2) = self.derivatives(y, eta);
        Ok((d1, d2))
    }

    /// Log-pmf without input validation.
    pub fn log_pmf_at(&self, y: u64, eta: f64) -> f64 {
        let yf = y as f64;
        match self.family {
            Family::Bernoulli => yf * eta - softplus(eta),
            Family::Poisson => yf * eta - eta.exp() - ln_factorial(y),
            Family::NegBinomial => {
                let xi = self.dispersion;
                let lg = if y == 0 {
                    0.0
                } else {
                    ln_gamma(yf + xi) - ln_gamma(xi) - ln_factorial(y)
                };
                lg + yf * eta - (yf + xi) * softplus(eta)
            }
            Family::GPoisson => {
                let a = self.dispersion;
                let phi = eta.exp();
                if y == 0 {
                    return -phi / (1.0 + a);
                }
                let s = phi + a * yf;
                eta + (yf - 1.0) * s.ln() - yf * a.ln_1p() - ln_factorial(y) - s / (1.0 + a)
            }
        }
    }

    /// `(ℓ, ∂ℓ/∂η, ∂²ℓ/∂η²)` without input validation.
    pub fn derivatives(&self, y: u64, eta: f64) -> (f64, f64, f64) {
        let yf = y as f64;
        let l = self.log_pmf_at(y, eta);
        match self.family {
            Family::Bernoulli => {
                let p = logistic(eta);
                (l, yf - p, -p * (1.0 - p))
            }
            Family::Poisson => {
                let lam = eta.exp();
                (l, yf - lam, -lam)
            }
            Family::NegBinomial => {
                let mu = logistic(eta);
                let w = yf + self.dispersion;
                (l, yf - w * mu, -w * mu * (1.0 - mu))
            }
            Family::GPoisson => {
                let a = self.dispersion;
                let phi = eta.exp();
                if y == 0 {
                    let v = -phi / (1.0 + a);
                    return (l, v, v);
                }
                let s = phi + a * yf;
                let d1 = 1.0 + (yf - 1.0) * phi / s - phi / (1.0 + a);
                let d2 = (yf - 1.0) * phi * a * yf / (s * s) - phi / (1.0 + a);
                (l, d1, d2)
            }
        }
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self.family {
            Family::Bernoulli => logistic(eta),
            Family::Poisson | Family::GPoisson => eta.exp(),
            Family::NegBinomial => self.dispersion * eta.exp(),
        }
    }

    pub fn variance(&self, eta: f64) -> f64 {
        match self.family {
            Family::Bernoulli => {
                let p = logistic(eta);
                p * (1.0 - p)
            }
            Family::Poisson => eta.exp(),
            Family::NegBinomial => self.dispersion * eta.exp() * (1.0 + eta.exp()),
            Family::GPoisson => eta.exp() * (1.0 + self.dispersion).powi(2),
        }
    }

    /// Walks the pmf from zero, calling `visit(k, cumulative)` until it
    /// returns `false` or the remaining mass falls below 1e-12.
    fn walk_cdf(&self, eta: f64, mut visit: impl FnMut(u64, f64) -> bool) {
        const MAX_STEPS: u64 = 50_000_000;
        let mut cum = 0.0;
        match self.family {
            Family::Bernoulli => {
                let p = logistic(eta);
                if !visit(0, 1.0 - p) {
                    return;
                }
                visit(1, 1.0);
            }
            Family::Poisson | Family::NegBinomial => {
                let poisson = self.family == Family::Poisson;
                let (mut p, rate, size) = if poisson {
                    let lam = eta.exp();
                    ((-lam).exp(), lam, 0.0)
                } else {
                    let xi = self.dispersion;
                    ((-xi * softplus(eta)).exp(), logistic(eta), xi)
                };
                let ratio = |k: u64| {
                    if poisson {
                        rate / k as f64
                    } else {
                        (k as f64 - 1.0 + size) / k as f64 * rate
                    }
                };
                if p == 0.0 {
                    // far in the tail of a large mean: fall back to log-domain terms
                    for k in 0..MAX_STEPS {
                        cum += self.log_pmf_at(k, eta).exp();
                        if !visit(k, cum.min(1.0)) || cum >= 1.0 - 1e-12 {
                            return;
                        }
                    }
                    return;
                }
                for k in 0..MAX_STEPS {
                    if k > 0 {
                        p *= ratio(k);
                    }
                    cum += p;
                    if !visit(k, cum.min(1.0)) || cum >= 1.0 - 1e-12 {
                        return;
                    }
                }
            }
            Family::GPoisson => {
                for k in 0..MAX_STEPS {
                    cum += self.log_pmf_at(k, eta).exp();
                    if !visit(k, cum.min(1.0)) || cum >= 1.0 - 1e-12 {
                        return;
                    }
                }
            }
        }
    }

    /// `P(Y ≤ y)`.
    pub fn cdf(&self, y: u64, eta: f64) -> f64 {
        let mut out = 1.0;
        self.walk_cdf(eta, |k, c| {
            if k == y {
                out = c;
                false
            } else {
                true
            }
        });
        out
    }

    /// Inverse-CDF draw for a uniform `u`.
    pub fn quantile(&self, u: f64, eta: f64) -> u64 {
        let mut out = 0;
        self.walk_cdf(eta, |k, c| {
            out = k;
            c < u
        });
        out
    }

    /// Whether the inverse-CDF draw for `u` exceeds `k`, stopping the walk as
    /// soon as the answer is known.
    pub fn exceeds(&self, u: f64, eta: f64, k: u64) -> bool {
        let mut above = true;
        self.walk_cdf(eta, |j, c| {
            if c >= u {
                above = j > k;
                return false;
            }
            if j >= k {
                above = true;
                return false;
            }
            true
        });
        above
    }

    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> u64 {
        match self.family {
            Family::Bernoulli => u64::from(rng.random::<f64>() < logistic(eta)),
            Family::Poisson => poisson_draw(eta.exp(), rng),
            Family::NegBinomial => {
                let g = Gamma::new(self.dispersion, eta.exp()).map_or(0.0, |g| g.sample(rng));
                poisson_draw(g, rng)
            }
            Family::GPoisson => self.quantile(rng.random::<f64>(), eta),
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u64)
}

/// Mixture pmf `(1 − π)·1{y = 0} + π·P(y | η)`.
pub fn zero_inflated_pmf(pi0: f64, spec: &FamilySpec, y: i64, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::invalid(format!("mixing probability must lie in [0, 1], got {pi0}")));
    }
    let p = spec.log_pmf(y, eta)?.exp();
    let point = if y == 0 { 1.0 - pi0 } else { 0.0 };
    Ok(point + pi0 * p)
}

/// Odds-ratio style reduction `1 − exp(β)` for a negative effect.
pub fn effect_reduction(beta: f64) -> f64 {
    1.0 - beta.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert!((FamilySpec::poisson().log_pmf(0, 0.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((FamilySpec::bernoulli().log_pmf(1, 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let nb = FamilySpec::negbinomial(1.567).unwrap();
        assert!((nb.log_pmf(0, 0.0).unwrap() - 1.567 * 0.5f64.ln()).abs() < 1e-14);
        let gp = FamilySpec::gpoisson(0.5).unwrap();
        assert!((gp.log_pmf(0, 0.0).unwrap() + 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let (d1, d2) = FamilySpec::bernoulli().d_log_pmf(1, 0.0).unwrap();
        assert_eq!((d1, d2), (0.5, -0.25));
        let (d1, d2) = FamilySpec::poisson().d_log_pmf(3, 0.0).unwrap();
        assert_eq!((d1, d2), (2.0, -1.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(FamilySpec::poisson().log_pmf(-1, 0.0).is_err());
        assert!(FamilySpec::negbinomial(0.0).is_err());
        assert!(FamilySpec::new(Family::NegBinomial, -1.0).is_err());
        assert!(FamilySpec::bernoulli().log_pmf(2, 0.0).is_err());
    }

    #[test]
    fn means() {
        assert_eq!(FamilySpec::negbinomial(2.0).unwrap().mean(0.0), 2.0);
        assert_eq!(FamilySpec::poisson().mean(1.0), std::f64::consts::E);
        assert_eq!(FamilySpec::gpoisson(0.7).unwrap().mean(0.0), 1.0);
    }

    #[test]
    fn zero_inflation() {
        let p = FamilySpec::poisson();
        assert_eq!(zero_inflated_pmf(0.0, &p, 0, 0.0).unwrap(), 1.0);
        assert!((zero_inflated_pmf(1.0, &p, 3, 0.0).unwrap() - p.log_pmf(3, 0.0).unwrap().exp()).abs() < 1e-15);
        assert!((zero_inflated_pmf(0.5, &p, 0, 0.0).unwrap() - (0.5 + 0.5 * (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn cdf_walks_agree_with_pmf_sums() {
        for spec in [
            FamilySpec::poisson(),
            FamilySpec::negbinomial(1.5).unwrap(),
            FamilySpec::gpoisson(0.3).unwrap(),
        ] {
            let eta = 1.2;
            let direct: f64 = (0..=6).map(|k| spec.log_pmf_at(k, eta).exp()).sum();
            assert!((spec.cdf(6, eta) - direct).abs() < 1e-12);
            for &u in &[0.01, 0.3, 0.77, 0.999] {
                let q = spec.quantile(u, eta);
                assert_eq!(spec.exceeds(u, eta, 2), q > 2);
                assert_eq!(spec.exceeds(u, eta, 0), q > 0);
            }
        }
    }

    #[test]
    fn large_counts_are_finite() {
        for spec in [
            FamilySpec::poisson(),
            FamilySpec::negbinomial(1.5).unwrap(),
            FamilySpec::gpoisson(0.3).unwrap(),
        ] {
            assert!(spec.log_pmf(1_000_000, 2.0).unwrap().is_finite());
        }
    }

    #[test]
    fn odds_reduction() {
        assert!((effect_reduction(-0.221) - 0.198).abs() < 5e-4);
    }
}
