//! Built-in models, their configuration documents and the table cases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adjust::{adjustment_report, AdjustmentReport};
use crate::cumulants::{cumulants_analytic, CumulantOrder};
use crate::family::Family;
use crate::jet::Jet;
use crate::model::{
    reparameterize, Coord, Dataset, GroupSpec, Model, ModelDef, ModelError, ModelInstance, PhiMap, PsiMap,
};
use crate::scalar::Scalar;
use crate::tensor::info_geometry;

fn domain(name: &str, value: f64, reason: &str) -> ModelError {
    ModelError::Domain { name: name.to_string(), value, reason: reason.to_string() }
}

fn positive(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(domain(name, v, "must be positive"))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn per_observation(family: Family, n: usize, support: Vec<usize>) -> Vec<GroupSpec> {
    (0..n).map(|_| GroupSpec { family, support: support.clone(), n_obs: 1 }).collect()
}

fn stratified(family: Family, n: usize, q: usize) -> Vec<GroupSpec> {
    (0..q).map(|j| GroupSpec { family, support: vec![0, 1 + j], n_obs: n }).collect()
}

/// Normal natural parameters from a mean jet and the reciprocal variance.
fn normal_eta<T: Scalar>(mean: &Jet<T>, inv_var: &Jet<T>) -> Vec<Jet<T>> {
    vec![mean * inv_var, inv_var.scale(&-T::half())]
}

fn need_rows(data: &Dataset, min: usize, what: &str) -> Result<(), ModelError> {
    if data.rows < min {
        return Err(ModelError::Data(format!("{what} needs at least {min} rows")));
    }
    Ok(())
}

fn all_positive(data: &Dataset) -> Result<(), ModelError> {
    if data.values.iter().any(|&y| y <= 0.0) {
        return Err(ModelError::Data("observations must be positive".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Normal linear regression, interest sigma

#[derive(Clone, Debug, PartialEq)]
pub struct NormalRegression {
    n: usize,
    q: usize,
    /// Row-major `n x q` design.
    x: Vec<f64>,
    groups: Vec<GroupSpec>,
}

impl NormalRegression {
    pub fn new(n: usize, q: usize, x: Vec<f64>) -> Result<Self, ModelError> {
        if q == 0 || n == 0 || x.len() != n * q {
            return Err(ModelError::Design(format!("design must be {n}x{q} with n, q >= 1")));
        }
        Ok(NormalRegression { n, q, x, groups: per_observation(Family::Normal, n, (0..=q).collect()) })
    }

    pub fn design(&self) -> &[f64] {
        &self.x
    }

    /// Intercept plus powers of an equispaced grid on [-1, 1].
    pub fn default_design(n: usize, q: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(n * q);
        for i in 0..n {
            let t = if n > 1 { (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64 } else { 0.0 };
            for j in 0..q {
                x.push(t.powi(j as i32));
            }
        }
        x
    }
}

impl ModelDef for NormalRegression {
    fn name(&self) -> &'static str {
        "normal-regression"
    }
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["sigma".to_string()];
        v.extend((1..=self.q).map(|j| format!("beta{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        let mut v = vec![Coord::Positive];
        v.extend(std::iter::repeat(Coord::Real).take(self.q));
        v
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, 1)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("sigma", theta[0])
    }
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        let row = &self.x[g * self.q..(g + 1) * self.q];
        let mut m = local[1].scale(&T::from_f64(row[0]));
        for j in 1..self.q {
            m = m + local[1 + j].scale(&T::from_f64(row[j]));
        }
        normal_eta(&m, &local[0].square().recip())
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let x = DMatrix::from_row_slice(self.n, self.q, &self.x);
        let y = DVector::from_column_slice(&data.values);
        let xtx = x.transpose() * &x;
        let chol = xtx.cholesky().ok_or_else(|| ModelError::Design("design is rank deficient".into()))?;
        let beta = chol.solve(&(x.transpose() * &y));
        let rss = (y - x * &beta).norm_squared();
        let mut theta = vec![(rss / self.n as f64).sqrt()];
        theta.extend(beta.iter());
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        if self.n <= self.q {
            return Err(ModelError::Data("need more observations than regression coefficients".into()));
        }
        let est = self.initial_estimate(data)?;
        let scale = data.values.iter().map(|y| y * y).sum::<f64>().max(1e-300);
        if est[0] * est[0] * self.n as f64 <= 1e-24 * scale {
            return Err(ModelError::Data("zero residual variance".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Neyman-Scott: N(mu_j, sigma^2), interest sigma

#[derive(Clone, Debug, PartialEq)]
pub struct NeymanScott {
    n: usize,
    q: usize,
    groups: Vec<GroupSpec>,
}

impl NeymanScott {
    pub fn new(n: usize, q: usize) -> Result<Self, ModelError> {
        if n == 0 || q == 0 {
            return Err(ModelError::Design("n and q must be positive".into()));
        }
        Ok(NeymanScott { n, q, groups: stratified(Family::Normal, n, q) })
    }
}

impl ModelDef for NeymanScott {
    fn name(&self) -> &'static str {
        "neyman-scott"
    }
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["sigma".to_string()];
        v.extend((1..=self.q).map(|j| format!("mu{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        let mut v = vec![Coord::Positive];
        v.extend(std::iter::repeat(Coord::Real).take(self.q));
        v
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, self.q)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("sigma", theta[0])
    }
    fn natural<T: Scalar>(&self, _g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        normal_eta(&local[1], &local[0].square().recip())
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let ss: f64 = (0..self.q).map(|j| sum_sq_dev(data.column(j))).sum();
        let mut theta = vec![(ss / (self.n * self.q) as f64).sqrt()];
        theta.extend((0..self.q).map(|j| mean(data.column(j))));
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        need_rows(data, 2, "neyman-scott")?;
        let ss: f64 = (0..self.q).map(|j| sum_sq_dev(data.column(j))).sum();
        if !(ss > 0.0) {
            return Err(ModelError::Data("zero within-stratum variation".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Behrens-Fisher: N(mu, sigma_j^2), interest mu

#[derive(Clone, Debug, PartialEq)]
pub struct BehrensFisher {
    n: usize,
    q: usize,
    groups: Vec<GroupSpec>,
}

impl BehrensFisher {
    pub fn new(n: usize, q: usize) -> Result<Self, ModelError> {
        if n == 0 || q == 0 {
            return Err(ModelError::Design("n and q must be positive".into()));
        }
        Ok(BehrensFisher { n, q, groups: stratified(Family::Normal, n, q) })
    }
}

impl ModelDef for BehrensFisher {
    fn name(&self) -> &'static str {
        "behrens-fisher"
    }
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["mu".to_string()];
        v.extend((1..=self.q).map(|j| format!("sigma2_{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        let mut v = vec![Coord::Real];
        v.extend(std::iter::repeat(Coord::Positive).take(self.q));
        v
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, self.q)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        for (j, &s) in theta[1..].iter().enumerate() {
            positive(&format!("sigma2_{}", j + 1), s)?;
        }
        Ok(())
    }
    fn natural<T: Scalar>(&self, _g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        normal_eta(&local[0], &local[1].recip())
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let mu = mean(&data.values);
        let mut theta = vec![mu];
        theta.extend((0..self.q).map(|j| {
            let c = data.column(j);
            c.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / c.len() as f64
        }));
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        need_rows(data, 2, "behrens-fisher")?;
        if (0..self.q).any(|j| !(sum_sq_dev(data.column(j)) > 0.0)) {
            return Err(ModelError::Data("a stratum has zero variation".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Exponential regression: mean phi1 exp(-psi z - phi2 w)

#[derive(Clone, Debug, PartialEq)]
pub struct ExpRegression {
    n: usize,
    z: Vec<f64>,
    w: Option<Vec<f64>>,
    groups: Vec<GroupSpec>,
}

impl ExpRegression {
    pub fn new(z: Vec<f64>, w: Option<Vec<f64>>) -> Result<Self, ModelError> {
        let n = z.len();
        if n == 0 {
            return Err(ModelError::Design("empty covariate vector".into()));
        }
        if let Some(w) = &w {
            if w.len() != n {
                return Err(ModelError::Design("z and w lengths differ".into()));
            }
        }
        let d = if w.is_some() { 3 } else { 2 };
        Ok(ExpRegression { n, z, w, groups: per_observation(Family::Exponential, n, (0..d).collect()) })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn default_z(n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n)
            .map(|i| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 })
            .collect();
        let m = mean(&raw);
        raw.iter().map(|z| z - m).collect()
    }

    pub fn default_w(z: &[f64]) -> Vec<f64> {
        let sq: Vec<f64> = z.iter().map(|z| z * z).collect();
        let m = mean(&sq);
        sq.iter().map(|s| s - m).collect()
    }
}

impl ModelDef for ExpRegression {
    fn name(&self) -> &'static str {
        "exp-regression"
    }
    fn dim(&self) -> usize {
        if self.w.is_some() {
            3
        } else {
            2
        }
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["psi".to_string(), "phi1".to_string()];
        if self.w.is_some() {
            v.push("phi2".into());
        }
        v
    }
    fn coords(&self) -> Vec<Coord> {
        let mut v = vec![Coord::Real, Coord::Positive];
        if self.w.is_some() {
            v.push(Coord::Real);
        }
        v
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, 1)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.dim() - 1
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("phi1", theta[1])
    }
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        // eta = -1/mean = -exp(psi z + phi2 w) / phi1
        let mut lin = local[0].scale(&T::from_f64(self.z[g]));
        if let Some(w) = &self.w {
            lin = lin + local[2].scale(&T::from_f64(w[g]));
        }
        vec![-(&lin.exp() * &local[1].recip())]
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let mut theta = vec![0.0, mean(&data.values)];
        if self.w.is_some() {
            theta.push(0.0);
        }
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        all_positive(data)?;
        need_rows(data, self.dim(), "exp-regression")
    }
}

// ---------------------------------------------------------------------------
// Inverse Gaussian, interest psi (shape), nuisance phi_j

#[derive(Clone, Debug, PartialEq)]
pub struct InverseGaussian {
    n: usize,
    q: usize,
    groups: Vec<GroupSpec>,
}

impl InverseGaussian {
    pub fn new(n: usize, q: usize) -> Result<Self, ModelError> {
        if n == 0 || q == 0 {
            return Err(ModelError::Design("n and q must be positive".into()));
        }
        Ok(InverseGaussian { n, q, groups: stratified(Family::InverseGaussian, n, q) })
    }
}

impl ModelDef for InverseGaussian {
    fn name(&self) -> &'static str {
        "inverse-gaussian"
    }
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["psi".to_string()];
        v.extend((1..=self.q).map(|j| format!("phi{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        vec![Coord::Positive; self.q + 1]
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, self.q)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("psi", theta[0])?;
        for (j, &p) in theta[1..].iter().enumerate() {
            positive(&format!("phi{}", j + 1), p)?;
        }
        Ok(())
    }
    fn natural<T: Scalar>(&self, _g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        vec![local[0].scale(&-T::half()), local[1].scale(&-T::half())]
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let means: Vec<f64> = (0..self.q).map(|j| mean(data.column(j))).collect();
        let s: f64 = (0..self.q).map(|j| data.column(j).iter().map(|y| 1.0 / y - 1.0 / means[j]).sum::<f64>()).sum();
        let psi = (self.n * self.q) as f64 / s;
        let mut theta = vec![psi];
        theta.extend(means.iter().map(|m| psi / (m * m)));
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        all_positive(data)?;
        need_rows(data, 2, "inverse-gaussian")?;
        let s: f64 = (0..self.q)
            .map(|j| {
                let m = mean(data.column(j));
                data.column(j).iter().map(|y| 1.0 / y - 1.0 / m).sum::<f64>()
            })
            .sum();
        if !(s > 0.0) {
            return Err(ModelError::Data("no within-stratum variation".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Multi-sample exponential: psi = mean_j exp(-phi_j t0)

#[derive(Clone, Debug, PartialEq)]
pub struct MultiExp {
    n: usize,
    q: usize,
    t0: f64,
    groups: Vec<GroupSpec>,
}

impl MultiExp {
    pub fn new(n: usize, q: usize, t0: f64) -> Result<Self, ModelError> {
        if n == 0 || q == 0 {
            return Err(ModelError::Design("n and q must be positive".into()));
        }
        positive("t0", t0)?;
        let mut groups = vec![GroupSpec { family: Family::Exponential, support: (0..q).collect(), n_obs: n }];
        groups.extend((1..q).map(|j| GroupSpec { family: Family::Exponential, support: vec![j], n_obs: n }));
        Ok(MultiExp { n, q, t0, groups })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Coordinates `(psi, phi_2..phi_q)` for natural rates `phi_1..phi_q`.
    pub fn theta_from_rates(&self, rates: &[f64]) -> Vec<f64> {
        let psi = rates.iter().map(|r| (-r * self.t0).exp()).sum::<f64>() / rates.len() as f64;
        let mut theta = vec![psi];
        theta.extend_from_slice(&rates[1..]);
        theta
    }

    /// The implied first rate `phi_1`.
    pub fn first_rate(&self, theta: &[f64]) -> f64 {
        let u = self.q as f64 * theta[0] - theta[1..].iter().map(|p| (-p * self.t0).exp()).sum::<f64>();
        -u.ln() / self.t0
    }

    pub fn rates(&self, theta: &[f64]) -> Vec<f64> {
        let mut r = vec![self.first_rate(theta)];
        r.extend_from_slice(&theta[1..]);
        r
    }
}

impl ModelDef for MultiExp {
    fn name(&self) -> &'static str {
        "multi-exp"
    }
    fn dim(&self) -> usize {
        self.q
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["psi".to_string()];
        v.extend((2..=self.q).map(|j| format!("phi{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        vec![Coord::Positive; self.q]
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, self.q)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("psi", theta[0])?;
        for (j, &p) in theta[1..].iter().enumerate() {
            positive(&format!("phi{}", j + 2), p)?;
        }
        let u = self.q as f64 * theta[0] - theta[1..].iter().map(|p| (-p * self.t0).exp()).sum::<f64>();
        if !(u > 0.0 && u < 1.0) {
            return Err(domain("psi", theta[0], "implied exp(-phi1 t0) must lie in (0, 1)"));
        }
        Ok(())
    }
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        if g == 0 {
            // exp(-phi1 t0) = q psi - sum_{j>=2} exp(-phi_j t0); eta = -phi1 = ln(u)/t0
            let t0 = T::from_f64(self.t0);
            let mut u = local[0].scale(&T::from_usize(self.q));
            for phi in &local[1..] {
                u = &u - &phi.scale(&-t0.clone()).exp();
            }
            vec![u.ln().scale(&(T::one() / t0))]
        } else {
            vec![-&local[0]]
        }
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let rates: Vec<f64> = (0..self.q).map(|j| 1.0 / mean(data.column(j))).collect();
        Ok(self.theta_from_rates(&rates))
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        all_positive(data)
    }
    fn constrained_start(&self, psi: f64, global: &[f64]) -> Vec<f64> {
        let mut t = global.to_vec();
        t[0] = psi;
        if self.check_theta(&t).is_ok() {
            return t;
        }
        // equal rates always satisfy the constraint
        let r = -psi.ln() / self.t0;
        let mut t = vec![psi];
        t.extend(std::iter::repeat(r).take(self.q - 1));
        t
    }
}

// ---------------------------------------------------------------------------
// Curved normal: N(mu_j, psi mu_j^{1/2})

#[derive(Clone, Debug, PartialEq)]
pub struct CurvedNormal {
    n: usize,
    q: usize,
    groups: Vec<GroupSpec>,
}

impl CurvedNormal {
    pub fn new(n: usize, q: usize) -> Result<Self, ModelError> {
        if n == 0 || q == 0 {
            return Err(ModelError::Design("n and q must be positive".into()));
        }
        Ok(CurvedNormal { n, q, groups: stratified(Family::Normal, n, q) })
    }
}

impl ModelDef for CurvedNormal {
    fn name(&self) -> &'static str {
        "curved-normal"
    }
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn param_names(&self) -> Vec<String> {
        let mut v = vec!["psi".to_string()];
        v.extend((1..=self.q).map(|j| format!("mu{j}")));
        v
    }
    fn coords(&self) -> Vec<Coord> {
        vec![Coord::Positive; self.q + 1]
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, self.q)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        self.q
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        positive("psi", theta[0])?;
        for (j, &m) in theta[1..].iter().enumerate() {
            positive(&format!("mu{}", j + 1), m)?;
        }
        Ok(())
    }
    fn natural<T: Scalar>(&self, _g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        let (psi, mu) = (&local[0], &local[1]);
        let inv_var = (psi * &mu.sqrt()).recip();
        normal_eta(mu, &inv_var)
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        let mus: Vec<f64> = (0..self.q)
            .map(|j| {
                let m = mean(data.column(j));
                if m > 0.0 {
                    m
                } else {
                    mean(&data.column(j).iter().map(|y| y.abs()).collect::<Vec<_>>()).max(1e-3)
                }
            })
            .collect();
        let psi = (0..self.q)
            .map(|j| sum_sq_dev(data.column(j)) / self.n as f64 / mus[j].sqrt())
            .sum::<f64>()
            / self.q as f64;
        let mut theta = vec![psi.max(1e-6)];
        theta.extend(mus);
        Ok(theta)
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        need_rows(data, 2, "curved-normal")?;
        if (0..self.q).any(|j| !(sum_sq_dev(data.column(j)) > 0.0)) {
            return Err(ModelError::Data("a stratum has zero variation".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Normal mean with known variance (quadratic log-likelihood)

#[derive(Clone, Debug, PartialEq)]
pub struct NormalMean {
    n: usize,
    sigma: f64,
    groups: Vec<GroupSpec>,
}

impl NormalMean {
    pub fn new(n: usize, sigma: f64) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::Design("n must be positive".into()));
        }
        positive("sigma", sigma)?;
        Ok(NormalMean { n, sigma, groups: vec![GroupSpec { family: Family::Normal, support: vec![0], n_obs: n }] })
    }
}

impl ModelDef for NormalMean {
    fn name(&self) -> &'static str {
        "normal-mean"
    }
    fn dim(&self) -> usize {
        1
    }
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }
    fn coords(&self) -> Vec<Coord> {
        vec![Coord::Real]
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        (self.n, 1)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn q(&self) -> usize {
        0
    }
    fn check_theta(&self, _theta: &[f64]) -> Result<(), ModelError> {
        Ok(())
    }
    fn natural<T: Scalar>(&self, _g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        let v = T::from_f64(self.sigma * self.sigma);
        let inv = Jet::constant(local[0].dim(), local[0].order(), T::one() / v);
        normal_eta(&local[0], &inv)
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        Ok(vec![mean(&data.values)])
    }
    fn check_data(&self, _data: &Dataset) -> Result<(), ModelError> {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration documents

fn len_check(name: &str, v: &Option<Vec<f64>>, want: usize) -> Result<(), ModelError> {
    match v {
        Some(v) if v.len() != want => Err(ModelError::Config(format!("`{name}` has length {}, expected {want}", v.len()))),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalRegressionConfig {
    pub n: usize,
    pub q: usize,
    pub sigma: f64,
    /// Defaults to zeros.
    pub beta: Option<Vec<f64>>,
    /// Rows of the `n x q` design; defaults to intercept plus powers of an
    /// equispaced grid on [-1, 1].
    pub design: Option<Vec<Vec<f64>>>,
}

impl Default for NormalRegressionConfig {
    fn default() -> Self {
        NormalRegressionConfig { n: 10, q: 1, sigma: 1.0, beta: None, design: None }
    }
}

impl NormalRegressionConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("beta", &self.beta, self.q)?;
        let design = match &self.design {
            Some(rows) => {
                if rows.len() != self.n || rows.iter().any(|r| r.len() != self.q) {
                    return Err(ModelError::Config(format!("`design` must have {} rows of length {}", self.n, self.q)));
                }
                rows.clone()
            }
            None => NormalRegression::default_design(self.n, self.q).chunks(self.q.max(1)).map(|c| c.to_vec()).collect(),
        };
        Ok(NormalRegressionConfig {
            beta: Some(self.beta.clone().unwrap_or_else(|| vec![0.0; self.q])),
            design: Some(design),
            ..self.clone()
        })
    }
}

pub fn normal_regression(cfg: &NormalRegressionConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let x: Vec<f64> = cfg.design.unwrap().concat();
    let model = NormalRegression::new(cfg.n, cfg.q, x)?;
    let mut theta = vec![cfg.sigma];
    theta.extend(cfg.beta.unwrap());
    ModelInstance::new(Model::NormalRegression(model), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeymanScottConfig {
    pub n: usize,
    pub q: usize,
    pub sigma: f64,
    /// Defaults to `mu_j = j`.
    pub mu: Option<Vec<f64>>,
}

impl Default for NeymanScottConfig {
    fn default() -> Self {
        NeymanScottConfig { n: 10, q: 5, sigma: 1.0, mu: None }
    }
}

impl NeymanScottConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("mu", &self.mu, self.q)?;
        Ok(NeymanScottConfig {
            mu: Some(self.mu.clone().unwrap_or_else(|| (1..=self.q).map(|j| j as f64).collect())),
            ..self.clone()
        })
    }
}

pub fn neyman_scott(cfg: &NeymanScottConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let mut theta = vec![cfg.sigma];
    theta.extend(cfg.mu.unwrap());
    ModelInstance::new(Model::NeymanScott(NeymanScott::new(cfg.n, cfg.q)?), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehrensFisherConfig {
    pub n: usize,
    pub q: usize,
    pub mu: f64,
    /// Stratum variances; default all 1.
    pub sigma2: Option<Vec<f64>>,
}

impl Default for BehrensFisherConfig {
    fn default() -> Self {
        BehrensFisherConfig { n: 10, q: 3, mu: 0.0, sigma2: None }
    }
}

impl BehrensFisherConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("sigma2", &self.sigma2, self.q)?;
        Ok(BehrensFisherConfig { sigma2: Some(self.sigma2.clone().unwrap_or_else(|| vec![1.0; self.q])), ..self.clone() })
    }
}

pub fn behrens_fisher(cfg: &BehrensFisherConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let mut theta = vec![cfg.mu];
    theta.extend(cfg.sigma2.unwrap());
    ModelInstance::new(Model::BehrensFisher(BehrensFisher::new(cfg.n, cfg.q)?), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpRegressionConfig {
    pub n: usize,
    /// 1: mean `phi1 exp(-psi z)`; 2: mean `phi1 exp(-psi z - phi2 w)`.
    pub covariates: usize,
    pub psi: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub z: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    /// Require centered covariates.
    pub centered: bool,
}

impl Default for ExpRegressionConfig {
    fn default() -> Self {
        ExpRegressionConfig { n: 20, covariates: 1, psi: 0.5, phi1: 1.0, phi2: 0.0, z: None, w: None, centered: true }
    }
}

impl ExpRegressionConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        if !(1..=2).contains(&self.covariates) {
            return Err(ModelError::Config("`covariates` must be 1 or 2".into()));
        }
        len_check("z", &self.z, self.n)?;
        len_check("w", &self.w, self.n)?;
        let z = self.z.clone().unwrap_or_else(|| ExpRegression::default_z(self.n));
        let w = if self.covariates == 2 { Some(self.w.clone().unwrap_or_else(|| ExpRegression::default_w(&z))) } else { None };
        if self.centered {
            let check = |name: &str, v: &[f64]| {
                let scale: f64 = v.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
                let s: f64 = v.iter().sum();
                if s.abs() > 1e-12 * scale {
                    Err(ModelError::Design(format!("centered design requested but sum of {name} is {s:e}")))
                } else {
                    Ok(())
                }
            };
            check("z", &z)?;
            if let Some(w) = &w {
                check("w", w)?;
            }
        }
        Ok(ExpRegressionConfig { z: Some(z), w, ..self.clone() })
    }
}

pub fn exp_regression(cfg: &ExpRegressionConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let mut theta = vec![cfg.psi, cfg.phi1];
    if cfg.covariates == 2 {
        theta.push(cfg.phi2);
    }
    ModelInstance::new(Model::ExpRegression(ExpRegression::new(cfg.z.unwrap(), cfg.w)?), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseGaussianConfig {
    pub n: usize,
    pub q: usize,
    pub psi: f64,
    /// Default all 1.
    pub phi: Option<Vec<f64>>,
}

impl Default for InverseGaussianConfig {
    fn default() -> Self {
        InverseGaussianConfig { n: 10, q: 2, psi: 1.0, phi: None }
    }
}

impl InverseGaussianConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("phi", &self.phi, self.q)?;
        Ok(InverseGaussianConfig { phi: Some(self.phi.clone().unwrap_or_else(|| vec![1.0; self.q])), ..self.clone() })
    }
}

pub fn inverse_gaussian(cfg: &InverseGaussianConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let mut theta = vec![cfg.psi];
    theta.extend(cfg.phi.unwrap());
    ModelInstance::new(Model::InverseGaussian(InverseGaussian::new(cfg.n, cfg.q)?), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiExpConfig {
    pub n: usize,
    pub q: usize,
    pub t0: f64,
    /// Natural rates `phi_1..phi_q`; default all 1. The interest parameter
    /// is `psi = mean_j exp(-phi_j t0)`.
    pub rates: Option<Vec<f64>>,
}

impl Default for MultiExpConfig {
    fn default() -> Self {
        MultiExpConfig { n: 10, q: 5, t0: 0.5, rates: None }
    }
}

impl MultiExpConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("rates", &self.rates, self.q)?;
        Ok(MultiExpConfig { rates: Some(self.rates.clone().unwrap_or_else(|| vec![1.0; self.q])), ..self.clone() })
    }
}

pub fn multi_exp(cfg: &MultiExpConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let rates = cfg.rates.unwrap();
    for (j, &r) in rates.iter().enumerate() {
        positive(&format!("phi{}", j + 1), r)?;
    }
    let model = MultiExp::new(cfg.n, cfg.q, cfg.t0)?;
    let theta = model.theta_from_rates(&rates);
    ModelInstance::new(Model::MultiExp(model), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvedNormalConfig {
    pub n: usize,
    pub q: usize,
    pub psi: f64,
    /// Default `mu_j = j`.
    pub mu: Option<Vec<f64>>,
}

impl Default for CurvedNormalConfig {
    fn default() -> Self {
        CurvedNormalConfig { n: 10, q: 2, psi: 1.0, mu: None }
    }
}

impl CurvedNormalConfig {
    pub fn resolve(&self) -> Result<Self, ModelError> {
        len_check("mu", &self.mu, self.q)?;
        Ok(CurvedNormalConfig {
            mu: Some(self.mu.clone().unwrap_or_else(|| (1..=self.q).map(|j| j as f64).collect())),
            ..self.clone()
        })
    }
}

pub fn curved_normal(cfg: &CurvedNormalConfig) -> Result<ModelInstance, ModelError> {
    let cfg = cfg.resolve()?;
    let mut theta = vec![cfg.psi];
    theta.extend(cfg.mu.unwrap());
    ModelInstance::new(Model::CurvedNormal(CurvedNormal::new(cfg.n, cfg.q)?), theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalMeanConfig {
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for NormalMeanConfig {
    fn default() -> Self {
        NormalMeanConfig { n: 10, mu: 0.0, sigma: 1.0 }
    }
}

pub fn normal_mean(cfg: &NormalMeanConfig) -> Result<ModelInstance, ModelError> {
    ModelInstance::new(Model::NormalMean(NormalMean::new(cfg.n, cfg.sigma)?), vec![cfg.mu])
}

/// Configuration of any registered model.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelConfig {
    NormalRegression(NormalRegressionConfig),
    NeymanScott(NeymanScottConfig),
    BehrensFisher(BehrensFisherConfig),
    ExpRegression(ExpRegressionConfig),
    InverseGaussian(InverseGaussianConfig),
    MultiExp(MultiExpConfig),
    CurvedNormal(CurvedNormalConfig),
    NormalMean(NormalMeanConfig),
}

/// Registered model names.
pub const MODEL_NAMES: [&str; 8] = [
    "normal-regression",
    "neyman-scott",
    "behrens-fisher",
    "exp-regression",
    "inverse-gaussian",
    "multi-exp",
    "curved-normal",
    "normal-mean",
];

impl ModelConfig {
    pub fn default_for(name: &str) -> Result<Self, ModelError> {
        Ok(match name {
            "normal-regression" => ModelConfig::NormalRegression(Default::default()),
            "neyman-scott" => ModelConfig::NeymanScott(Default::default()),
            "behrens-fisher" => ModelConfig::BehrensFisher(Default::default()),
            "exp-regression" => ModelConfig::ExpRegression(Default::default()),
            "inverse-gaussian" => ModelConfig::InverseGaussian(Default::default()),
            "multi-exp" => ModelConfig::MultiExp(Default::default()),
            "curved-normal" => ModelConfig::CurvedNormal(Default::default()),
            "normal-mean" => ModelConfig::NormalMean(Default::default()),
            other => return Err(ModelError::Config(format!("unknown model `{other}`; known: {}", MODEL_NAMES.join(", ")))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::NormalRegression(_) => "normal-regression",
            ModelConfig::NeymanScott(_) => "neyman-scott",
            ModelConfig::BehrensFisher(_) => "behrens-fisher",
            ModelConfig::ExpRegression(_) => "exp-regression",
            ModelConfig::InverseGaussian(_) => "inverse-gaussian",
            ModelConfig::MultiExp(_) => "multi-exp",
            ModelConfig::CurvedNormal(_) => "curved-normal",
            ModelConfig::NormalMean(_) => "normal-mean",
        }
    }

    /// Sets `n` and, where the model has one, `q`. Vector fields sized by the
    /// old `q` are cleared when `q` changes.
    pub fn set_size(&mut self, n: Option<usize>, q: Option<usize>) -> Result<(), ModelError> {
        macro_rules! nq {
            ($c:expr, $($vec:ident),*) => {{
                if let Some(n) = n { $c.n = n; }
                if let Some(q) = q { if q != $c.q { $c.q = q; $( $c.$vec = None; )* } }
            }};
        }
        match self {
            ModelConfig::NormalRegression(c) => {
                if n.is_some_and(|n| n != c.n) || q.is_some_and(|q| q != c.q) {
                    c.design = None;
                }
                nq!(c, beta)
            }
            ModelConfig::NeymanScott(c) => nq!(c, mu),
            ModelConfig::BehrensFisher(c) => nq!(c, sigma2),
            ModelConfig::InverseGaussian(c) => nq!(c, phi),
            ModelConfig::MultiExp(c) => nq!(c, rates),
            ModelConfig::CurvedNormal(c) => nq!(c, mu),
            ModelConfig::ExpRegression(c) => {
                if q.is_some() {
                    return Err(ModelError::Config("exp-regression has no `q`; use `covariates`".into()));
                }
                if let Some(n) = n {
                    if n != c.n {
                        c.n = n;
                        c.z = None;
                        c.w = None;
                    }
                }
            }
            ModelConfig::NormalMean(c) => {
                if q.is_some() {
                    return Err(ModelError::Config("normal-mean has no `q`".into()));
                }
                if let Some(n) = n {
                    c.n = n;
                }
            }
        }
        Ok(())
    }

    /// The same configuration with every defaulted field filled in.
    pub fn resolve(&self) -> Result<Self, ModelError> {
        Ok(match self {
            ModelConfig::NormalRegression(c) => ModelConfig::NormalRegression(c.resolve()?),
            ModelConfig::NeymanScott(c) => ModelConfig::NeymanScott(c.resolve()?),
            ModelConfig::BehrensFisher(c) => ModelConfig::BehrensFisher(c.resolve()?),
            ModelConfig::ExpRegression(c) => ModelConfig::ExpRegression(c.resolve()?),
            ModelConfig::InverseGaussian(c) => ModelConfig::InverseGaussian(c.resolve()?),
            ModelConfig::MultiExp(c) => ModelConfig::MultiExp(c.resolve()?),
            ModelConfig::CurvedNormal(c) => ModelConfig::CurvedNormal(c.resolve()?),
            ModelConfig::NormalMean(c) => ModelConfig::NormalMean(c.clone()),
        })
    }

    pub fn build(&self) -> Result<ModelInstance, ModelError> {
        match self {
            ModelConfig::NormalRegression(c) => normal_regression(c),
            ModelConfig::NeymanScott(c) => neyman_scott(c),
            ModelConfig::BehrensFisher(c) => behrens_fisher(c),
            ModelConfig::ExpRegression(c) => exp_regression(c),
            ModelConfig::InverseGaussian(c) => inverse_gaussian(c),
            ModelConfig::MultiExp(c) => multi_exp(c),
            ModelConfig::CurvedNormal(c) => curved_normal(c),
            ModelConfig::NormalMean(c) => normal_mean(c),
        }
    }
}

/// Rebuilds a built-in model with a different per-stratum sample size,
/// keeping theta. Designs tied to `n` (regression covariates) are rebuilt
/// from their defaults.
pub fn with_n(inst: &ModelInstance, n: usize) -> Result<ModelInstance, ModelError> {
    let model = match &inst.model {
        Model::NormalRegression(m) => Model::NormalRegression(NormalRegression::new(n, m.q, NormalRegression::default_design(n, m.q))?),
        Model::NeymanScott(m) => Model::NeymanScott(NeymanScott::new(n, m.q)?),
        Model::BehrensFisher(m) => Model::BehrensFisher(BehrensFisher::new(n, m.q)?),
        Model::ExpRegression(m) => {
            let z = ExpRegression::default_z(n);
            let w = m.w.as_ref().map(|_| ExpRegression::default_w(&z));
            Model::ExpRegression(ExpRegression::new(z, w)?)
        }
        Model::InverseGaussian(m) => Model::InverseGaussian(InverseGaussian::new(n, m.q)?),
        Model::MultiExp(m) => Model::MultiExp(MultiExp::new(n, m.q, m.t0)?),
        Model::CurvedNormal(m) => Model::CurvedNormal(CurvedNormal::new(n, m.q)?),
        Model::NormalMean(m) => Model::NormalMean(NormalMean::new(n, m.sigma)?),
        Model::Reparameterized(r) => {
            let base = ModelInstance { model: r.base.clone(), theta: r.to_base(&inst.theta) };
            let rebuilt = with_n(&base, n)?;
            return reparameterize(&rebuilt, r.psi_map.clone(), r.phi_map.clone());
        }
    };
    ModelInstance::new(model, inst.theta.clone())
}

/// Globally orthogonal parameterization of the inverse Gaussian and curved
/// normal models.
pub fn orthogonalized(inst: &ModelInstance) -> Result<ModelInstance, ModelError> {
    match &inst.model {
        Model::InverseGaussian(_) => reparameterize(inst, PsiMap::Identity, PhiMap::InverseGaussianMean),
        Model::CurvedNormal(_) => reparameterize(inst, PsiMap::Identity, PhiMap::CurvedNormalOrthogonal),
        other => Err(ModelError::Config(format!("no orthogonalizing map registered for {}", other.name()))),
    }
}

// ---------------------------------------------------------------------------
// Table cases

/// Table 1 interest value for case (b): 0.0333 as printed is 1/30 rounded.
pub const TABLE1_PSI_B: f64 = 1.0 / 30.0;
pub const TABLE1_T0: f64 = 0.5;
pub const TABLE1_Q: [usize; 5] = [2, 5, 10, 20, 50];
pub const TABLE2_Q: [usize; 6] = [1, 2, 5, 10, 20, 50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCase {
    pub table_id: u8,
    pub case_label: String,
    pub q: usize,
}

impl TableCase {
    pub fn new(table_id: u8, case_label: &str, q: usize) -> Self {
        TableCase { table_id, case_label: case_label.to_string(), q }
    }
}

/// Common nuisance rate of Table 1 case (b): bisection on
/// `(q-1) exp(-phi t0) = q psi - q psi / 2` over `phi in (0, 50]`.
pub fn table1_common_rate(q: usize, psi: f64, t0: f64) -> Result<f64, ModelError> {
    let target = q as f64 * psi - q as f64 * psi / 2.0;
    let f = |phi: f64| (q as f64 - 1.0) * (-phi * t0).exp() - target;
    let (mut lo, mut hi) = (0.0f64, 50.0f64);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(ModelError::Numeric(format!("common rate does not bracket in (0, 50] for q = {q}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Model and parameter point for a table case.
pub fn table_case_instance(tc: &TableCase) -> Result<ModelInstance, ModelError> {
    let q = tc.q;
    match (tc.table_id, tc.case_label.as_str()) {
        (1, "a") => multi_exp(&MultiExpConfig { n: 1, q, t0: TABLE1_T0, rates: Some(vec![1.0; q]) }),
        (1, "b") => {
            if q < 2 {
                return Err(ModelError::Config("Table 1 case (b) needs q >= 2".into()));
            }
            let psi = TABLE1_PSI_B;
            let last = -(q as f64 * psi / 2.0).ln() / TABLE1_T0;
            let common = table1_common_rate(q, psi, TABLE1_T0)?;
            let mut rates = vec![common; q - 1];
            rates.push(last);
            multi_exp(&MultiExpConfig { n: 1, q, t0: TABLE1_T0, rates: Some(rates) })
        }
        (2, "a") => curved_normal(&CurvedNormalConfig { n: 1, q, psi: 1.0, mu: Some((1..=q).map(|i| i as f64).collect()) }),
        (2, "b") => curved_normal(&CurvedNormalConfig { n: 1, q, psi: 1.0, mu: Some(vec![1.0; q]) }),
        _ => Err(ModelError::Config(format!("unknown table case {}({})", tc.table_id, tc.case_label))),
    }
}

/// Adjustment report at a model instance with analytic third-order cumulants.
pub fn report_for(inst: &ModelInstance) -> Result<AdjustmentReport<f64>, ModelError> {
    let cs = cumulants_analytic::<f64>(inst, CumulantOrder::Third)?;
    let geom = info_geometry(&cs.lam2)?;
    Ok(adjustment_report(&cs, &geom))
}

/// Builds the case and evaluates `g_NP / g_INF`.
pub fn table_case(tc: &TableCase) -> Result<(ModelInstance, Option<f64>), ModelError> {
    let inst = table_case_instance(tc)?;
    let report = report_for(&inst)?;
    Ok((inst, report.ratio))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_case_b_constraint() {
        for &q in &TABLE1_Q {
            let inst = table_case_instance(&TableCase::new(1, "b", q)).unwrap();
            assert!((inst.theta[0] - TABLE1_PSI_B).abs() < 1e-14);
            if let Model::MultiExp(m) = &inst.model {
                let rates = m.rates(&inst.theta);
                assert!(((-rates[q - 1] * TABLE1_T0).exp() - q as f64 * TABLE1_PSI_B / 2.0).abs() < 1e-14);
                let common = rates[0];
                assert!(rates[..q - 1].iter().all(|r| (r - common).abs() < 1e-9));
            } else {
                panic!();
            }
        }
    }

    #[test]
    fn table1_case_a_psi() {
        let inst = table_case_instance(&TableCase::new(1, "a", 5)).unwrap();
        assert!((inst.theta[0] - 0.6065).abs() < 5e-5);
    }

    #[test]
    fn config_lengths_checked() {
        let cfg = NeymanScottConfig { q: 3, mu: Some(vec![1.0]), ..Default::default() };
        assert!(matches!(neyman_scott(&cfg), Err(ModelError::Config(_))));
    }

    #[test]
    fn uncentered_design_rejected() {
        let cfg = ExpRegressionConfig { n: 3, z: Some(vec![0.0, 1.0, 2.0]), ..Default::default() };
        assert!(matches!(exp_regression(&cfg), Err(ModelError::Design(_))));
        let cfg = ExpRegressionConfig { centered: false, ..cfg };
        assert!(exp_regression(&cfg).is_ok());
    }

    #[test]
    fn domain_enforced() {
        let cfg = NeymanScottConfig { sigma: -1.0, ..Default::default() };
        assert!(matches!(neyman_scott(&cfg), Err(ModelError::Domain { .. })));
        let cfg = MultiExpConfig { rates: Some(vec![1.0, -2.0, 1.0, 1.0, 1.0]), ..Default::default() };
        assert!(multi_exp(&cfg).is_err());
    }

    #[test]
    fn multi_exp_rates_round_trip() {
        let inst = multi_exp(&MultiExpConfig { rates: Some(vec![0.7, 1.2, 2.0]), q: 3, ..Default::default() }).unwrap();
        if let Model::MultiExp(m) = &inst.model {
            let r = m.rates(&inst.theta);
            assert!((r[0] - 0.7).abs() < 1e-13);
        }
    }
}
