//! Generating-function values: a scalar evaluation at fixed `z`, or a power
//! series in `z` truncated after degree `s_max`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Coefficients `c_0..=c_{s_max}`; products drop every term above `s_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    coeffs: Vec<f64>,
}

impl Series {
    pub fn constant(value: f64, s_max: usize) -> Self {
        let mut coeffs = vec![0.0; s_max + 1];
        coeffs[0] = value;
        Self { coeffs }
    }

    /// The series `z`.
    pub fn z(s_max: usize) -> Self {
        let mut coeffs = vec![0.0; s_max + 1];
        if s_max >= 1 {
            coeffs[1] = 1.0;
        }
        Self { coeffs }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a series has at least a constant term");
        Self { coeffs }
    }

    pub fn s_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, s: usize) -> f64 {
        self.coeffs.get(s).copied().unwrap_or(0.0)
    }

    /// Sum of the retained coefficients, i.e. the value at `z = 1` up to
    /// truncation.
    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let len = self.coeffs.len().min(other.coeffs.len());
        let mut out = vec![0.0; len];
        for (a, &x) in self.coeffs.iter().enumerate().take(len) {
            if x == 0.0 {
                continue;
            }
            for (b, &y) in other.coeffs.iter().enumerate().take(len - a) {
                out[a + b] += x * y;
            }
        }
        Self { coeffs: out }
    }

    /// Multiplication by `z`.
    pub fn shift(&self) -> Self {
        let mut out = vec![0.0; self.coeffs.len()];
        out[1..].copy_from_slice(&self.coeffs[..self.coeffs.len() - 1]);
        Self { coeffs: out }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GenValue {
    Scalar(f64),
    Series(Series),
}

impl GenValue {
    /// The multiplicative identity in the given mode (`s_max = None` is scalar).
    pub fn one(s_max: Option<usize>) -> Self {
        match s_max {
            None => GenValue::Scalar(1.0),
            Some(s) => GenValue::Series(Series::constant(1.0, s)),
        }
    }

    pub fn zero(s_max: Option<usize>) -> Self {
        match s_max {
            None => GenValue::Scalar(0.0),
            Some(s) => GenValue::Series(Series::constant(0.0, s)),
        }
    }

    /// `z` itself: the scalar `z` or the series with `c_1 = 1`.
    pub fn z(z: f64, s_max: Option<usize>) -> Self {
        match s_max {
            None => GenValue::Scalar(z),
            Some(s) => GenValue::Series(Series::z(s)),
        }
    }

    pub fn s_max(&self) -> Option<usize> {
        match self {
            GenValue::Scalar(_) => None,
            GenValue::Series(s) => Some(s.s_max()),
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            GenValue::Scalar(x) => Some(*x),
            GenValue::Series(_) => None,
        }
    }

    pub fn as_series(&self) -> Option<&Series> {
        match self {
            GenValue::Scalar(_) => None,
            GenValue::Series(s) => Some(s),
        }
    }

    /// Value at `z = 1` (series: sum of retained coefficients).
    pub fn at_one(&self) -> f64 {
        match self {
            GenValue::Scalar(x) => *x,
            GenValue::Series(s) => s.sum(),
        }
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (GenValue::Scalar(a), GenValue::Scalar(b)) => Ok(GenValue::Scalar(a * b)),
            (GenValue::Series(a), GenValue::Series(b)) => Ok(GenValue::Series(a.mul(b))),
            _ => Err(Error::ModeMismatch),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.try_mul(other).expect("generating values of the same mode")
    }

    /// `self + weight * other`, in place.
    pub fn add_scaled(&mut self, weight: f64, other: &Self) {
        match (self, other) {
            (GenValue::Scalar(a), GenValue::Scalar(b)) => *a += weight * b,
            (GenValue::Series(a), GenValue::Series(b)) => {
                for (x, y) in a.coeffs.iter_mut().zip(&b.coeffs) {
                    *x += weight * y;
                }
            }
            _ => panic!("generating values of different modes"),
        }
    }

    /// Multiplication by `z`.
    pub fn times_z(&self, z: f64) -> Self {
        match self {
            GenValue::Scalar(x) => GenValue::Scalar(x * z),
            GenValue::Series(s) => GenValue::Series(s.shift()),
        }
    }

    /// `alpha * old + (1 - alpha) * self`.
    pub fn damp(&self, old: &Self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.scale(1.0 - alpha);
        out.add_scaled(alpha, old);
        out
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            GenValue::Scalar(x) => *x *= factor,
            GenValue::Series(s) => s.coeffs.iter_mut().for_each(|c| *c *= factor),
        }
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        match (self, other) {
            (GenValue::Scalar(a), GenValue::Scalar(b)) => (a - b).abs(),
            (GenValue::Series(a), GenValue::Series(b)) => a
                .coeffs
                .iter()
                .zip(&b.coeffs)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            GenValue::Scalar(x) => x.is_finite(),
            GenValue::Series(s) => s.coeffs.iter().all(|c| c.is_finite()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncated_product() {
        // (1 + z)^2 truncated at degree 1
        let a = Series::from_coeffs(vec![1.0, 1.0]);
        assert_eq!(a.mul(&a).coeffs(), &[1.0, 2.0]);
        let b = Series::from_coeffs(vec![0.5, 0.5, 0.0]);
        assert_eq!(b.mul(&b).coeffs(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn shift_drops_top_term() {
        let a = Series::from_coeffs(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.shift().coeffs(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn mode_mismatch() {
        let a = GenValue::one(None);
        let b = GenValue::one(Some(3));
        assert!(matches!(a.try_mul(&b), Err(Error::ModeMismatch)));
    }

    #[test]
    fn z_values() {
        assert_eq!(GenValue::z(0.5, None), GenValue::Scalar(0.5));
        assert_eq!(GenValue::z(0.5, Some(2)).as_series().unwrap().coeffs(), &[0.0, 1.0, 0.0]);
        assert_eq!(GenValue::z(1.0, Some(2)).at_one(), 1.0);
    }

    fn pgf(len: usize) -> impl Strategy<Value = Series> {
        prop::collection::vec(0.0f64..1.0, len).prop_map(|v| {
            let total: f64 = v.iter().sum::<f64>().max(1.0);
            Series::from_coeffs(v.into_iter().map(|c| c / total).collect())
        })
    }

    proptest! {
        // product of probability generating functions stays a
        // sub-probability vector after truncation
        #[test]
        fn product_of_pgfs(a in pgf(6), b in pgf(6)) {
            let c = a.mul(&b);
            prop_assert!(c.coeffs().iter().all(|&x| x >= 0.0));
            prop_assert!(c.sum() <= 1.0 + 1e-12);
            prop_assert!(c.sum() <= a.sum() * b.sum() + 1e-12);
            // commutative
            let d = b.mul(&a);
            for (x, y) in c.coeffs().iter().zip(d.coeffs()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
