//! Scalar abstraction shared by the tensor, jet and cumulant code.

use std::fmt::Debug;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};

/// Real field used throughout the algebraic layers.
///
/// Field operations come from `num_traits`. The transcendental helpers are
/// exact for floats up to rounding; for `BigRational` they round-trip through
/// `f64`, so exactness is only preserved by code paths that never need them
/// (derivatives of `ln`, reciprocals and polynomials stay exact).
pub trait Scalar: Clone + Debug + PartialOrd + Signed + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_f64(num as f64) / Self::from_f64(den as f64)
    }

    fn from_usize(k: usize) -> Self {
        Self::from_f64(k as f64)
    }

    fn sqrt(&self) -> Self {
        Self::from_f64(self.to_f64().sqrt())
    }

    fn ln(&self) -> Self {
        Self::from_f64(self.to_f64().ln())
    }

    fn exp(&self) -> Self {
        Self::from_f64(self.to_f64().exp())
    }

    fn powf(&self, p: f64) -> Self {
        Self::from_f64(self.to_f64().powf(p))
    }

    fn is_finite(&self) -> bool {
        self.to_f64().is_finite()
    }

    fn half() -> Self {
        Self::from_ratio(1, 2)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        (num as f64 / den as f64) as f32
    }
    fn sqrt(&self) -> Self {
        f32::sqrt(*self)
    }
    fn ln(&self) -> Self {
        f32::ln(*self)
    }
    fn exp(&self) -> Self {
        f32::exp(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f32::powf(*self, p as f32)
    }
    fn is_finite(&self) -> bool {
        f32::is_finite(*self)
    }
}

impl Scalar for BigRational {
    /// Exact conversion of the binary value. Non-finite input maps to zero.
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_default()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_f64(num as f64) / Self::from_f64(den as f64)
    }
    fn sqrt(&self) -> Self {
        // keep perfect squares of small rationals exact
        let approx = Scalar::to_f64(self).sqrt();
        let guess = Self::from_f64(approx);
        if &guess * &guess == *self {
            return guess;
        }
        for den in 1..=64i64 {
            let num = (approx * den as f64).round() as i64;
            let cand = Self::from_ratio(num, den);
            if &cand * &cand == *self {
                return cand;
            }
        }
        guess
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trip_is_exact() {
        let x = BigRational::from_f64(0.1);
        assert_eq!(Scalar::to_f64(&x), 0.1);
        let third = BigRational::from_ratio(1, 3);
        assert_eq!(&third * BigRational::from_ratio(3, 1), BigRational::from_ratio(1, 1));
    }

    #[test]
    fn rational_sqrt_of_square() {
        let x = BigRational::from_ratio(9, 4);
        assert_eq!(Scalar::sqrt(&x), BigRational::from_ratio(3, 2));
    }

    #[test]
    fn float_helpers() {
        assert_eq!(<f64 as Scalar>::from_ratio(1, 4), 0.25);
        assert_eq!(<f32 as Scalar>::half(), 0.5f32);
        assert!((Scalar::exp(&1.0f64) - std::f64::consts::E).abs() < 1e-15);
    }
}
