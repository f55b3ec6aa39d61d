//! Exponential families used by the built-in models, in natural form
//! `f(y) = h(y) exp(eta . T(y) - A(eta))`.

use rand::Rng;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::jet::Jet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `T = (y, y^2)`, `eta = (mu/v, -1/(2v))`.
    Normal,
    /// `T = y`, `eta = -rate`.
    Exponential,
    /// `T = (1/y, y)`, `eta = (-lambda/2, -lambda/(2 mu^2))`.
    InverseGaussian,
}

impl Family {
    pub fn stat_dim(self) -> usize {
        match self {
            Family::Exponential => 1,
            Family::Normal | Family::InverseGaussian => 2,
        }
    }

    /// Whether `eta` lies in the interior of the natural parameter space.
    pub fn valid(self, eta: &[f64]) -> bool {
        match self {
            Family::Normal => eta[1] < 0.0 && eta[0].is_finite(),
            Family::Exponential => eta[0] < 0.0,
            Family::InverseGaussian => eta[0] < 0.0 && eta[1] < 0.0,
        }
    }

    /// Log-partition function as a jet in whatever variables `eta` carries.
    pub fn log_partition<T: Scalar>(self, eta: &[Jet<T>]) -> Jet<T> {
        match self {
            Family::Normal => {
                // -eta1^2 / (4 eta2) - ln(-2 eta2) / 2
                let q = eta[0].square().div_jet(&eta[1]).scale(&T::from_ratio(-1, 4));
                let l = eta[1].scale(&T::from_f64(-2.0)).ln().scale(&T::from_ratio(-1, 2));
                q + l
            }
            Family::Exponential => (-&eta[0]).ln().scale(&-T::one()),
            Family::InverseGaussian => {
                // -ln(-2 eta1)/2 - 2 sqrt(eta1 eta2)
                let l = eta[0].scale(&T::from_f64(-2.0)).ln().scale(&T::from_ratio(-1, 2));
                let s = (&eta[0] * &eta[1]).sqrt().scale(&T::from_f64(-2.0));
                l + s
            }
        }
    }

    /// Mean, covariance (row-major) and third cumulant array of `T(Y)` at
    /// natural parameter `eta`, from derivatives of the log-partition.
    pub fn stat_cumulants<T: Scalar>(self, eta: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let vars = Jet::variables(3, eta);
        let a = self.log_partition(&vars);
        (a.d1().to_vec(), a.d2().to_vec(), a.d3().to_vec())
    }

    pub fn suff_stat(self, y: f64, out: &mut [f64]) {
        match self {
            Family::Normal => {
                out[0] = y;
                out[1] = y * y;
            }
            Family::Exponential => out[0] = y,
            Family::InverseGaussian => {
                out[0] = 1.0 / y;
                out[1] = y;
            }
        }
    }

    /// Mean of `Y` at natural parameter `eta`.
    pub fn mean(self, eta: &[f64]) -> f64 {
        match self {
            Family::Normal => -eta[0] / (2.0 * eta[1]),
            Family::Exponential => -1.0 / eta[0],
            Family::InverseGaussian => (eta[0] / eta[1]).sqrt(),
        }
    }

    /// One draw. Every branch is a smooth function of `eta` for a fixed
    /// stream state, which keeps common-random-number differences smooth.
    pub fn sample<R: Rng + ?Sized>(self, eta: &[f64], rng: &mut R) -> f64 {
        match self {
            Family::Normal => {
                let var = -0.5 / eta[1];
                let mean = eta[0] * var;
                let z: f64 = rng.sample(StandardNormal);
                mean + var.sqrt() * z
            }
            Family::Exponential => {
                let u: f64 = open01(rng);
                -(-1.0 / eta[0]) * u.ln()
            }
            Family::InverseGaussian => {
                let shape = -2.0 * eta[0];
                let mean = (eta[0] / eta[1]).sqrt();
                let u = open01(rng);
                inverse_gaussian_quantile(u, mean, shape)
            }
        }
    }
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `ln Phi(-x)` for `x` of any size.
fn ln_norm_sf(x: f64) -> f64 {
    if x < 30.0 {
        std_normal().sf(x).ln()
    } else {
        // Mills-ratio asymptotic series
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - x.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

/// CDF of the inverse Gaussian law with the given mean and shape.
pub fn inverse_gaussian_cdf(y: f64, mean: f64, shape: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let s = (shape / y).sqrt();
    let a = s * (y / mean - 1.0);
    let b = s * (y / mean + 1.0);
    let first = std_normal().cdf(a);
    let second = (2.0 * shape / mean + ln_norm_sf(b)).exp();
    (first + second).min(1.0)
}

pub fn inverse_gaussian_pdf(y: f64, mean: f64, shape: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    (shape / (2.0 * std::f64::consts::PI * y * y * y)).sqrt() * (-shape * (y - mean).powi(2) / (2.0 * mean * mean * y)).exp()
}

/// Quantile by safeguarded Newton iteration on `log y`.
pub fn inverse_gaussian_quantile(u: f64, mean: f64, shape: f64) -> f64 {
    // log-normal start with matching mean and variance
    let s2 = (1.0 + mean / shape).ln();
    let z = std_normal().inverse_cdf(u);
    let mut x = mean.ln() - 0.5 * s2 + s2.sqrt() * z;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..200 {
        let y = x.exp();
        let f = inverse_gaussian_cdf(y, mean, shape) - u;
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let dens = inverse_gaussian_pdf(y, mean, shape) * y;
        // Newton step on log y, at most 2 units
        let mut next = if dens > 0.0 { x - (f / dens).clamp(-2.0, 2.0) } else { f64::NAN };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0,
                (false, true) => hi - 2.0,
                _ => x,
            };
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next.exp();
        }
        x = next;
    }
    x.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_cumulants() {
        // mu = 1.5, v = 2 -> eta = (0.75, -0.25)
        let (m, c, k3) = Family::Normal.stat_cumulants(&[0.75f64, -0.25]);
        assert!((m[0] - 1.5).abs() < 1e-14);
        assert!((m[1] - (2.0 + 2.25)).abs() < 1e-14);
        assert!((c[0] - 2.0).abs() < 1e-14);
        // cov(Y, Y^2) = 2 mu v
        assert!((c[1] - 6.0).abs() < 1e-13);
        // third cumulant of Y is zero
        assert!(k3[0].abs() < 1e-13);
    }

    #[test]
    fn inverse_gaussian_cumulants() {
        // mean 2, shape 3 -> var = mean^3 / shape
        let (mean, shape) = (2.0f64, 3.0);
        let eta = [-shape / 2.0, -shape / (2.0 * mean * mean)];
        let (m, c, _) = Family::InverseGaussian.stat_cumulants(&eta);
        assert!((m[1] - mean).abs() < 1e-13);
        assert!((c[3] - mean.powi(3) / shape).abs() < 1e-12);
        // E[1/Y] = 1/mean + 1/shape
        assert!((m[0] - (1.0 / mean + 1.0 / shape)).abs() < 1e-13);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &(mean, shape) in &[(1.0, 1.0), (0.3, 5.0), (4.0, 0.5), (1.0, 200.0)] {
            for &u in &[1e-9, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
                let y = inverse_gaussian_quantile(u, mean, shape);
                assert!((inverse_gaussian_cdf(y, mean, shape) - u).abs() < 1e-11, "{mean} {shape} {u}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| Family::InverseGaussian.sample(&[-1.0, -0.5], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }
}
