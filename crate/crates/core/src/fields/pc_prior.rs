use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail statement `P(value ▷ threshold) = probability` calibrating a PC prior.
/// The direction of `▷` depends on the prior kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub threshold: f64,
    pub probability: f64,
}

impl QuantileSpec {
    pub const fn new(threshold: f64, probability: f64) -> Self {
        Self {
            threshold,
            probability,
        }
    }
}

/// Penalised-complexity priors on the natural parameter scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PcPrior {
    /// Range `r` with `P(r < r₀) = α`: `λ r⁻² exp(−λ/r)`.
    Range { lambda: f64 },
    /// Standard deviation with `P(σ > u) = α`: exponential with rate `λ`.
    Sd { lambda: f64 },
    /// Precision `τ` with `P(τ > t) = p`, induced by an exponential on `τ^{-1/2}`.
    Precision { lambda: f64 },
    /// AR(1) correlation with base model `ρ = 1`, calibrated by `P(ρ > u) = α`.
    Correlation { theta: f64 },
}

fn check_probability(q: &QuantileSpec) -> Result<()> {
    if !(q.probability > 0.0 && q.probability < 1.0) {
        return Err(Error::Prior(format!(
            "tail probability must lie in (0, 1), got {}",
            q.probability
        )));
    }
    Ok(())
}

impl PcPrior {
    pub fn range(q: QuantileSpec) -> Result<Self> {
        check_probability(&q)?;
        if !(q.threshold > 0.0) {
            return Err(Error::Prior("range threshold must be positive".into()));
        }
        Ok(PcPrior::Range {
            lambda: -q.threshold * q.probability.ln(),
        })
    }

    pub fn sd(q: QuantileSpec) -> Result<Self> {
        check_probability(&q)?;
        if !(q.threshold > 0.0) {
            return Err(Error::Prior("sd threshold must be positive".into()));
        }
        Ok(PcPrior::Sd {
            lambda: -q.probability.ln() / q.threshold,
        })
    }

    pub fn precision(q: QuantileSpec) -> Result<Self> {
        check_probability(&q)?;
        if !(q.threshold > 0.0) {
            return Err(Error::Prior("precision threshold must be positive".into()));
        }
        let u = q.threshold.powf(-0.5);
        Ok(PcPrior::Precision {
            lambda: -(1.0 - q.probability).ln() / u,
        })
    }

    pub fn correlation(q: QuantileSpec) -> Result<Self> {
        check_probability(&q)?;
        let u = q.threshold;
        if !(u > -1.0 && u < 1.0) {
            return Err(Error::Prior(format!("correlation threshold must lie in (-1, 1), got {u}")));
        }
        let s = (1.0 - u).sqrt();
        let floor = s / 2f64.sqrt();
        if q.probability <= floor {
            return Err(Error::Prior(format!(
                "P(rho > {u}) = {} is unattainable; it must exceed {floor:.6}",
                q.probability
            )));
        }
        let tail = |theta: f64| -(-theta * s).exp_m1() / -(-theta * 2f64.sqrt()).exp_m1();
        let (mut lo, mut hi) = (-30.0f64, 30.0f64);
        if tail(hi.exp()) < q.probability {
            return Err(Error::Prior(format!(
                "P(rho > {u}) = {} is too close to one",
                q.probability
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tail(mid.exp()) < q.probability {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(PcPrior::Correlation {
            theta: (0.5 * (lo + hi)).exp(),
        })
    }

    /// Log density on the natural scale; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PcPrior::Range { lambda } => {
                if x > 0.0 {
                    lambda.ln() - 2.0 * x.ln() - lambda / x
                } else {
                    f64::NEG_INFINITY
                }
            }
            PcPrior::Sd { lambda } => {
                if x >= 0.0 {
                    lambda.ln() - lambda * x
                } else {
                    f64::NEG_INFINITY
                }
            }
            PcPrior::Precision { lambda } => {
                if x > 0.0 {
                    (0.5 * lambda).ln() - 1.5 * x.ln() - lambda / x.sqrt()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PcPrior::Correlation { theta } => {
                if x > -1.0 && x < 1.0 {
                    let s = (1.0 - x).sqrt();
                    theta.ln() - theta * s - (2.0 * s).ln() - (-(-theta * 2f64.sqrt()).exp_m1()).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Log density for a prior kind calibrated by `spec`.
pub fn pc_prior_log_density(kind: &str, value: f64, spec: QuantileSpec) -> Result<f64> {
    let prior = match kind {
        "range" => PcPrior::range(spec)?,
        "sd" => PcPrior::sd(spec)?,
        "precision" => PcPrior::precision(spec)?,
        "correlation" => PcPrior::correlation(spec)?,
        other => return Err(Error::Prior(format!("unknown PC prior kind {other:?}"))),
    };
    Ok(prior.log_density(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_rate_closed_form() {
        let PcPrior::Sd { lambda } = PcPrior::sd(QuantileSpec::new(1.0, 0.9)).unwrap() else {
            unreachable!()
        };
        assert!((lambda - 0.10536051565782628).abs() < 1e-15);
        assert!((pc_prior_log_density("sd", 0.0, QuantileSpec::new(1.0, 0.9)).unwrap() - lambda.ln()).abs() < 1e-15);
    }

    #[test]
    fn correlation_calibration() {
        let PcPrior::Correlation { theta } = PcPrior::correlation(QuantileSpec::new(0.0, 0.9)).unwrap() else {
            unreachable!()
        };
        let tail = (1.0 - (-theta).exp()) / (1.0 - (-theta * 2f64.sqrt()).exp());
        assert!((tail - 0.9).abs() < 1e-12);
        assert!(PcPrior::correlation(QuantileSpec::new(0.0, 0.6)).is_err());
    }

    #[test]
    fn unsupported_values() {
        let p = PcPrior::range(QuantileSpec::new(1.42, 0.9)).unwrap();
        assert_eq!(p.log_density(-1.0), f64::NEG_INFINITY);
        assert!(pc_prior_log_density("bogus", 1.0, QuantileSpec::new(1.0, 0.5)).is_err());
    }
}
