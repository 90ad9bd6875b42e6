use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

/// Clamped cubic B-spline basis with equally spaced knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    lower: f64,
    upper: f64,
    num_basis: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(lower: f64, upper: f64, num_basis: usize) -> Result<Self> {
        if num_basis < 4 {
            return Err(Error::invalid(format!(
                "cubic spline needs at least 4 basis functions, got {num_basis}"
            )));
        }
        if !(upper > lower) {
            return Err(Error::invalid("spline interval must have positive length"));
        }
        let intervals = num_basis - 3;
        let h = (upper - lower) / intervals as f64;
        let mut knots = vec![lower; 4];
        knots.extend((1..intervals).map(|k| lower + k as f64 * h));
        knots.extend([upper; 4]);
        Ok(Self {
            lower,
            upper,
            num_basis,
            knots,
        })
    }

    /// Basis over the span of `years`, which must contain at least
    /// `num_basis` distinct values.
    pub fn for_years(years: &[i32], num_basis: usize) -> Result<Self> {
        let mut distinct = years.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < num_basis {
            return Err(Error::invalid(format!(
                "{} distinct years cannot support {num_basis} spline basis functions",
                distinct.len()
            )));
        }
        Self::new(distinct[0] as f64, *distinct.last().unwrap() as f64, num_basis)
    }

    /// One basis function per three years, at least six, capped by the number
    /// of distinct years and never below four.
    pub fn default_num_basis(distinct_years: usize) -> usize {
        distinct_years.div_ceil(3).max(6).min(distinct_years).max(4)
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Distinct knot locations from `lower` to `upper`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.knots[3..self.knots.len() - 3]
    }

    /// Nonzero basis values at `x` as `(index, value)` pairs, or `None`
    /// outside the interval.
    pub fn evaluate(&self, x: f64) -> Option<Vec<(usize, f64)>> {
        if !(x >= self.lower && x <= self.upper) {
            return None;
        }
        let n = self.num_basis;
        let span = if x >= self.upper {
            n - 1
        } else {
            let mut s = 3;
            while s + 1 < n && self.knots[s + 1] <= x {
                s += 1;
            }
            s
        };
        let k = &self.knots;
        let mut vals = [1.0, 0.0, 0.0, 0.0];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        for j in 1..=3 {
            left[j] = x - k[span + 1 - j];
            right[j] = k[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        Some(
            vals.iter()
                .enumerate()
                .map(|(r, &v)| (span - 3 + r, v))
                .filter(|&(_, v)| v != 0.0)
                .collect(),
        )
    }

    /// `n × L` design matrix; rows outside the interval are left empty.
    pub fn design(&self, xs: &[f64]) -> CscMatrix {
        let mut entries = Vec::with_capacity(4 * xs.len());
        for (i, &x) in xs.iter().enumerate() {
            if let Some(row) = self.evaluate(x) {
                entries.extend(row.into_iter().map(|(j, v)| (i, j, v)));
            }
        }
        CscMatrix::from_triplets(xs.len(), self.num_basis, &entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(b: &SplineBasis, coef: &[f64], x: f64) -> f64 {
        b.evaluate(x).unwrap().iter().map(|&(j, v)| coef[j] * v).sum()
    }

    #[test]
    fn partition_of_unity_and_support() {
        let b = SplineBasis::new(1997.0, 2022.0, 9).unwrap();
        for i in 0..=250 {
            let x = 1997.0 + i as f64 * 0.1;
            let row = b.evaluate(x).unwrap();
            assert!(row.len() <= 4);
            assert!(row.iter().all(|&(_, v)| v >= 0.0));
            let s: f64 = row.iter().map(|&(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(b.evaluate(1996.9).is_none());
    }

    #[test]
    fn continuity_at_knots() {
        let b = SplineBasis::new(0.0, 10.0, 8).unwrap();
        let coef = [0.3, -1.0, 2.0, 0.5, 1.5, -0.7, 0.2, 1.1];
        for &k in &b.breakpoints()[1..b.breakpoints().len() - 1] {
            let eps = 1e-10;
            assert!((value(&b, &coef, k - eps) - value(&b, &coef, k + eps)).abs() < 1e-9);
            let h = 1e-4;
            let d2 = |x: f64| (value(&b, &coef, x + h) - 2.0 * value(&b, &coef, x) + value(&b, &coef, x - h)) / (h * h);
            assert!((d2(k - 2.0 * h) - d2(k + 2.0 * h)).abs() < 1e-3 * (1.0 + d2(k).abs()) + 5e-3);
        }
    }

    #[test]
    fn knot_count_rules() {
        assert!(SplineBasis::new(0.0, 1.0, 3).is_err());
        assert_eq!(SplineBasis::default_num_basis(26), 9);
        assert_eq!(SplineBasis::default_num_basis(5), 5);
        assert_eq!(SplineBasis::default_num_basis(12), 6);
        let years: Vec<i32> = (2000..2005).collect();
        assert!(SplineBasis::for_years(&years, 6).is_err());
    }
}
