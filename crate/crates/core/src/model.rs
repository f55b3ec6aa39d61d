//! Statistical model abstraction: curved exponential-family models described
//! by observation groups whose natural parameters are smooth functions of
//! `theta = (psi, phi)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::family::Family;
use crate::jet::Jet;
use crate::scalar::Scalar;
use crate::tensor::TensorError;
use crate::zoo::{
    BehrensFisher, CurvedNormal, ExpRegression, InverseGaussian, MultiExp, NeymanScott, NormalMean, NormalRegression,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} outside the model domain: {reason}")]
    Domain { name: String, value: f64, reason: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid design: {0}")]
    Design(String),
    #[error("data rejected: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("map is not invertible at theta: {0}")]
    NonInvertible(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How a coordinate is treated by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coord {
    Real,
    Positive,
}

/// A block of `n_obs` i.i.d. observations sharing one natural parameter,
/// which depends only on the coordinates listed in `support` (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    pub family: Family,
    pub support: Vec<usize>,
    pub n_obs: usize,
}

/// Column-major real matrix. Group `g` owns the contiguous slice of
/// `n_obs(g)` values following the slices of groups `0..g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != rows * cols {
            return Err(ModelError::Data(format!("{} values for a {}x{} matrix", values.len(), rows, cols)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Data("non-finite value".into()));
        }
        Ok(Dataset { rows, cols, values })
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }
}

/// Interface every model implements. Methods generic over the scalar type
/// make this a static-dispatch trait; [`Model`] is the closed sum type.
pub trait ModelDef {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn coords(&self) -> Vec<Coord>;
    fn groups(&self) -> &[GroupSpec];
    /// `(rows, cols)` of datasets for this design.
    fn shape(&self) -> (usize, usize);
    /// Per-stratum sample size.
    fn n(&self) -> usize;
    /// Number of strata or nuisance blocks.
    fn q(&self) -> usize;
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError>;
    /// Natural parameters of group `g`; `local[i]` is the jet of coordinate
    /// `support[i]`.
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>>;
    /// Starting point for the optimizer (often the MLE itself).
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError>;
    /// Rejects data on which the estimators are undefined.
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError>;
    /// Fallback start for the constrained fit when projecting the global
    /// estimate leaves the domain.
    fn constrained_start(&self, psi: f64, global: &[f64]) -> Vec<f64> {
        let mut t = global.to_vec();
        t[0] = psi;
        t
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            Model::NormalRegression($m) => $e,
            Model::NeymanScott($m) => $e,
            Model::BehrensFisher($m) => $e,
            Model::ExpRegression($m) => $e,
            Model::InverseGaussian($m) => $e,
            Model::MultiExp($m) => $e,
            Model::CurvedNormal($m) => $e,
            Model::NormalMean($m) => $e,
            Model::Reparameterized($m) => $e,
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    NormalRegression(NormalRegression),
    NeymanScott(NeymanScott),
    BehrensFisher(BehrensFisher),
    ExpRegression(ExpRegression),
    InverseGaussian(InverseGaussian),
    MultiExp(MultiExp),
    CurvedNormal(CurvedNormal),
    NormalMean(NormalMean),
    Reparameterized(Box<Reparameterized>),
}

impl ModelDef for Model {
    fn name(&self) -> &'static str {
        dispatch!(self, m => m.name())
    }
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }
    fn param_names(&self) -> Vec<String> {
        dispatch!(self, m => m.param_names())
    }
    fn coords(&self) -> Vec<Coord> {
        dispatch!(self, m => m.coords())
    }
    fn groups(&self) -> &[GroupSpec] {
        dispatch!(self, m => m.groups())
    }
    fn shape(&self) -> (usize, usize) {
        dispatch!(self, m => m.shape())
    }
    fn n(&self) -> usize {
        dispatch!(self, m => m.n())
    }
    fn q(&self) -> usize {
        dispatch!(self, m => m.q())
    }
    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.dim() {
            return Err(ModelError::Config(format!("theta has length {}, model dimension is {}", theta.len(), self.dim())));
        }
        if let Some(k) = theta.iter().position(|t| !t.is_finite()) {
            return Err(ModelError::Domain {
                name: self.param_names()[k].clone(),
                value: theta[k],
                reason: "not finite".into(),
            });
        }
        dispatch!(self, m => m.check_theta(theta))
    }
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        dispatch!(self, m => m.natural(g, local))
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        dispatch!(self, m => m.initial_estimate(data))
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        let (r, c) = self.shape();
        if data.rows != r || data.cols != c {
            return Err(ModelError::Data(format!("expected a {}x{} dataset, got {}x{}", r, c, data.rows, data.cols)));
        }
        dispatch!(self, m => m.check_data(data))
    }
    fn constrained_start(&self, psi: f64, global: &[f64]) -> Vec<f64> {
        dispatch!(self, m => m.constrained_start(psi, global))
    }
}

impl Model {
    /// Natural parameter values of every group at `theta`.
    pub fn natural_values(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.groups()
            .iter()
            .enumerate()
            .map(|(g, spec)| {
                let local: Vec<Jet<f64>> =
                    spec.support.iter().map(|&i| Jet::constant(spec.support.len(), 0, theta[i])).collect();
                self.natural(g, &local).iter().map(|j| *j.value()).collect()
            })
            .collect()
    }

    /// One dataset drawn at `theta` from `rng`; draws are consumed group by
    /// group in a fixed order.
    pub fn sample_with<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Dataset {
        let (rows, cols) = self.shape();
        let mut values = Vec::with_capacity(rows * cols);
        for (spec, eta) in self.groups().iter().zip(self.natural_values(theta)) {
            for _ in 0..spec.n_obs {
                values.push(spec.family.sample(&eta, rng));
            }
        }
        Dataset { rows, cols, values }
    }

    /// Sufficient-statistic sums per group.
    pub fn suff_stats(&self, data: &Dataset) -> Vec<Vec<f64>> {
        let mut off = 0;
        let mut buf = [0.0; 2];
        self.groups()
            .iter()
            .map(|spec| {
                let k = spec.family.stat_dim();
                let mut s = vec![0.0; k];
                for &y in &data.values[off..off + spec.n_obs] {
                    spec.family.suff_stat(y, &mut buf);
                    for j in 0..k {
                        s[j] += buf[j];
                    }
                }
                off += spec.n_obs;
                s
            })
            .collect()
    }
}

/// Counter-based substream for replicate `index` of a run seeded by `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A model together with a parameter point in its domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInstance {
    pub model: Model,
    pub theta: Vec<f64>,
}

impl ModelInstance {
    pub fn new(model: Model, theta: Vec<f64>) -> Result<Self, ModelError> {
        model.check_theta(&theta)?;
        Ok(ModelInstance { model, theta })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.model.clone(), theta)
    }

    pub fn d(&self) -> usize {
        self.model.dim()
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn q(&self) -> usize {
        self.model.q()
    }

    /// Dataset drawn from stream `index` of `seed`; bit-identical across runs.
    pub fn sample(&self, seed: u64, index: u64) -> Dataset {
        let mut rng = substream(seed, index);
        self.model.sample_with(&self.theta, &mut rng)
    }

    pub fn loglik(&self, data: &Dataset) -> Result<LogLik, ModelError> {
        loglik(&self.model, &self.theta, data)
    }
}

// ---------------------------------------------------------------------------
// Log-likelihood kernels

/// Per-group derivative arrays of natural parameters and log-partition at a
/// fixed theta, ready to be combined with any dataset's sufficient statistics.
pub struct LikelihoodKernel {
    dim: usize,
    order: usize,
    groups: Vec<GroupKernel>,
}

struct GroupKernel {
    n_obs: f64,
    /// `eta[j][k]`: order-k derivative array of the j-th natural parameter.
    eta: Vec<Vec<Vec<f64>>>,
    /// `a[k]`: order-k derivative array of the log-partition.
    a: Vec<Vec<f64>>,
    /// Global flat offset of every local flat index, per order.
    scatter: Vec<Vec<usize>>,
}

/// Global row-major offsets of every local row-major multi-index of order `k`.
pub(crate) fn scatter_map(support: &[usize], dim: usize, k: usize) -> Vec<usize> {
    let m = support.len();
    let size = m.pow(k as u32);
    (0..size)
        .map(|flat| {
            let mut off = 0;
            let mut div = size;
            for _ in 0..k {
                div /= m;
                off = off * dim + support[(flat / div) % m];
            }
            off
        })
        .collect()
}

impl LikelihoodKernel {
    pub fn new(model: &Model, theta: &[f64], order: usize) -> Result<Self, ModelError> {
        model.check_theta(theta)?;
        let dim = model.dim();
        let mut groups = Vec::with_capacity(model.groups().len());
        for (g, spec) in model.groups().iter().enumerate() {
            let point: Vec<f64> = spec.support.iter().map(|&i| theta[i]).collect();
            let local = Jet::variables(order, &point);
            let eta = model.natural(g, &local);
            let vals: Vec<f64> = eta.iter().map(|e| *e.value()).collect();
            if !spec.family.valid(&vals) {
                return Err(ModelError::Numeric(format!("natural parameter {vals:?} invalid in group {g}")));
            }
            let a = spec.family.log_partition(&eta);
            let arrays = |j: &Jet<f64>| (0..=order).map(|k| j.deriv(k).to_vec()).collect::<Vec<_>>();
            groups.push(GroupKernel {
                n_obs: spec.n_obs as f64,
                eta: eta.iter().map(arrays).collect(),
                a: arrays(&a),
                scatter: (0..=order).map(|k| scatter_map(&spec.support, dim, k)).collect(),
            });
        }
        Ok(LikelihoodKernel { dim, order, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L` and its derivative arrays of orders `0..=order` (row-major,
    /// global coordinates) for the given sufficient statistics.
    pub fn eval(&self, stats: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..=self.order).map(|k| vec![0.0; self.dim.pow(k as u32)]).collect();
        for (gk, s) in self.groups.iter().zip(stats) {
            for k in 0..=self.order {
                let dst = &mut out[k];
                let map = &gk.scatter[k];
                for (l, &o) in map.iter().enumerate() {
                    let mut v = -gk.n_obs * gk.a[k][l];
                    for (j, sj) in s.iter().enumerate() {
                        v += sj * gk.eta[j][k][l];
                    }
                    dst[o] += v;
                }
            }
        }
        out
    }
}

/// Log-likelihood (up to a theta-free constant) with gradient and Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `d x d`.
    pub hess: Vec<f64>,
}

pub fn loglik(model: &Model, theta: &[f64], data: &Dataset) -> Result<LogLik, ModelError> {
    model.check_data(data)?;
    let stats = model.suff_stats(data);
    loglik_stats(model, theta, &stats)
}

pub(crate) fn loglik_stats(model: &Model, theta: &[f64], stats: &[Vec<f64>]) -> Result<LogLik, ModelError> {
    let kernel = LikelihoodKernel::new(model, theta, 2)?;
    let mut arr = kernel.eval(stats);
    let hess = arr.pop().unwrap();
    let grad = arr.pop().unwrap();
    let value = arr[0][0];
    if !value.is_finite() {
        return Err(ModelError::Numeric("non-finite log-likelihood".into()));
    }
    Ok(LogLik { value, grad, hess })
}

// ---------------------------------------------------------------------------
// Reparameterization

/// Strictly increasing map of the interest parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PsiMap {
    Identity,
    /// `psi -> ln psi`
    Log,
    /// `psi -> psi^p`, `p > 0`
    Power { p: f64 },
    /// `psi -> scale psi + shift`, `scale > 0`
    Affine { scale: f64, shift: f64 },
}

/// Map of each nuisance coordinate `phi_i -> h(psi, phi_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PhiMap {
    Identity,
    /// `phi_i -> ln phi_i`
    Log,
    /// `phi_i -> (psi / phi_i)^{1/2}`: the inverse Gaussian means.
    InverseGaussianMean,
    /// `mu_i -> psi mu_i^{1/2} + 2 mu_i^2`, orthogonal to `psi` in the
    /// `N(mu, psi mu^{1/2})` model.
    CurvedNormalOrthogonal,
}

impl PsiMap {
    fn forward(&self, psi: f64) -> f64 {
        match *self {
            PsiMap::Identity => psi,
            PsiMap::Log => psi.ln(),
            PsiMap::Power { p } => psi.powf(p),
            PsiMap::Affine { scale, shift } => scale * psi + shift,
        }
    }

    fn derivative(&self, psi: f64) -> f64 {
        match *self {
            PsiMap::Identity => 1.0,
            PsiMap::Log => 1.0 / psi,
            PsiMap::Power { p } => p * psi.powf(p - 1.0),
            PsiMap::Affine { scale, .. } => scale,
        }
    }

    fn inverse<T: Scalar>(&self, x: &Jet<T>) -> Jet<T> {
        match *self {
            PsiMap::Identity => x.clone(),
            PsiMap::Log => x.exp(),
            PsiMap::Power { p } => x.powf(1.0 / p),
            PsiMap::Affine { scale, shift } => x.add_const(&T::from_f64(-shift)).scale(&T::from_f64(1.0 / scale)),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            PsiMap::Power { p } if !(p > 0.0) => Err(ModelError::Config("power map needs p > 0".into())),
            PsiMap::Affine { scale, .. } if !(scale > 0.0) => {
                Err(ModelError::Config("affine interest map needs scale > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

impl PhiMap {
    fn forward(&self, psi: f64, phi: f64) -> f64 {
        match self {
            PhiMap::Identity => phi,
            PhiMap::Log => phi.ln(),
            PhiMap::InverseGaussianMean => (psi / phi).sqrt(),
            PhiMap::CurvedNormalOrthogonal => psi * phi.sqrt() + 2.0 * phi * phi,
        }
    }

    /// `(d h / d psi, d h / d phi)`
    fn partials(&self, psi: f64, phi: f64) -> (f64, f64) {
        match self {
            PhiMap::Identity => (0.0, 1.0),
            PhiMap::Log => (0.0, 1.0 / phi),
            PhiMap::InverseGaussianMean => {
                let m = (psi / phi).sqrt();
                (0.5 * m / psi, -0.5 * m / phi)
            }
            PhiMap::CurvedNormalOrthogonal => (phi.sqrt(), 0.5 * psi / phi.sqrt() + 4.0 * phi),
        }
    }

    fn inverse_value(&self, psi: f64, x: f64) -> f64 {
        match self {
            PhiMap::Identity => x,
            PhiMap::Log => x.exp(),
            PhiMap::InverseGaussianMean => psi / (x * x),
            PhiMap::CurvedNormalOrthogonal => {
                // psi s + 2 s^4 = x in s = sqrt(mu) > 0, increasing in s
                let mut s = (x / 2.0).powf(0.25).min(x / psi);
                for _ in 0..100 {
                    let f = psi * s + 2.0 * s.powi(4) - x;
                    let step = f / (psi + 8.0 * s.powi(3));
                    s -= step;
                    if step.abs() <= 1e-16 * s.abs() {
                        break;
                    }
                }
                s * s
            }
        }
    }

    /// Jet of `phi` given jets of `psi` and the new coordinate.
    fn inverse<T: Scalar>(&self, psi: &Jet<T>, x: &Jet<T>) -> Jet<T> {
        match self {
            PhiMap::Identity => x.clone(),
            PhiMap::Log => x.exp(),
            PhiMap::InverseGaussianMean => psi.div_jet(&x.square()),
            PhiMap::CurvedNormalOrthogonal => {
                let v0 = self.inverse_value(psi.value().to_f64(), x.value().to_f64());
                let (_, dphi) = self.partials(psi.value().to_f64(), v0);
                let inv_slope = T::from_f64(1.0 / dphi);
                let mut mu = Jet::constant(x.dim(), x.order(), T::from_f64(v0));
                // chord iterations gain one derivative order each
                for _ in 0..=x.order() {
                    let resid = &(&(psi * &mu.sqrt()) + &mu.square().scale(&T::from_f64(2.0))) - x;
                    mu = &mu - &resid.scale(&inv_slope);
                }
                mu
            }
        }
    }

    fn coord(&self, base: Coord) -> Coord {
        match self {
            PhiMap::Identity => base,
            PhiMap::Log => Coord::Real,
            PhiMap::InverseGaussianMean | PhiMap::CurvedNormalOrthogonal => Coord::Positive,
        }
    }
}

/// Model in new coordinates `(g(psi), h(psi, phi_1), ..., h(psi, phi_{d-1}))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reparameterized {
    pub base: Model,
    pub psi_map: PsiMap,
    pub phi_map: PhiMap,
    groups: Vec<GroupSpec>,
}

impl Reparameterized {
    /// Base-model parameter corresponding to new coordinates `x`.
    pub fn to_base(&self, x: &[f64]) -> Vec<f64> {
        let jets: Vec<Jet<f64>> = x.iter().map(|&v| Jet::constant(1, 0, v)).collect();
        let psi = self.psi_map.inverse(&jets[0]);
        let mut out = vec![*psi.value()];
        for j in &jets[1..] {
            out.push(*self.phi_map.inverse(&psi, j).value());
        }
        out
    }

    pub fn from_base(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![self.psi_map.forward(theta[0])];
        out.extend(theta[1..].iter().map(|&p| self.phi_map.forward(theta[0], p)));
        out
    }

    fn jacobian_check(&self, theta: &[f64]) -> Result<(), ModelError> {
        let d = theta.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        jac[(0, 0)] = self.psi_map.derivative(theta[0]);
        for i in 1..d {
            let (a, b) = self.phi_map.partials(theta[0], theta[i]);
            jac[(i, 0)] = a;
            jac[(i, i)] = b;
        }
        let sv = jac.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 0.0) || !(smax / smin < 1e12) || !smax.is_finite() {
            return Err(ModelError::NonInvertible(format!("Jacobian singular values in [{smin:e}, {smax:e}]")));
        }
        Ok(())
    }
}

impl ModelDef for Reparameterized {
    fn name(&self) -> &'static str {
        self.base.name()
    }
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn param_names(&self) -> Vec<String> {
        let base = self.base.param_names();
        let mut out = vec![match self.psi_map {
            PsiMap::Identity => base[0].clone(),
            PsiMap::Log => format!("log_{}", base[0]),
            _ => format!("g_{}", base[0]),
        }];
        out.extend(base[1..].iter().map(|p| match self.phi_map {
            PhiMap::Identity => p.clone(),
            PhiMap::Log => format!("log_{p}"),
            _ => format!("h_{p}"),
        }));
        out
    }
    fn coords(&self) -> Vec<Coord> {
        let base = self.base.coords();
        let mut out = vec![match self.psi_map {
            PsiMap::Identity => base[0],
            PsiMap::Power { .. } => Coord::Positive,
            _ => Coord::Real,
        }];
        out.extend(base[1..].iter().map(|&c| self.phi_map.coord(c)));
        out
    }
    fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }
    fn shape(&self) -> (usize, usize) {
        self.base.shape()
    }
    fn n(&self) -> usize {
        self.base.n()
    }
    fn q(&self) -> usize {
        self.base.q()
    }
    fn check_theta(&self, x: &[f64]) -> Result<(), ModelError> {
        if self.coords()[0] == Coord::Positive && x[0] <= 0.0 {
            return Err(ModelError::Domain { name: self.param_names()[0].clone(), value: x[0], reason: "must be positive".into() });
        }
        let theta = self.to_base(x);
        self.base.check_theta(&theta)?;
        let back = self.from_base(&theta);
        if back.iter().zip(x).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs())) {
            return Err(ModelError::Domain { name: "theta".into(), value: x[0], reason: "outside the image of the map".into() });
        }
        Ok(())
    }
    fn natural<T: Scalar>(&self, g: usize, local: &[Jet<T>]) -> Vec<Jet<T>> {
        let support = &self.groups[g].support;
        let base_support = &self.base.groups()[g].support;
        let psi = self.psi_map.inverse(&local[0]);
        let base_local: Vec<Jet<T>> = base_support
            .iter()
            .map(|&i| {
                if i == 0 {
                    psi.clone()
                } else {
                    let p = support.iter().position(|&s| s == i).unwrap();
                    self.phi_map.inverse(&psi, &local[p])
                }
            })
            .collect();
        self.base.natural(g, &base_local)
    }
    fn initial_estimate(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        Ok(self.from_base(&self.base.initial_estimate(data)?))
    }
    fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        self.base.check_data(data)
    }
    fn constrained_start(&self, psi: f64, global: &[f64]) -> Vec<f64> {
        let base_global = self.to_base(global);
        let base_psi = *self.psi_map.inverse(&Jet::<f64>::constant(1, 0, psi)).value();
        let start = self.base.constrained_start(base_psi, &base_global);
        self.from_base(&start)
    }
}

/// Wraps `inst` in new coordinates. The interest map must be strictly
/// increasing; the composite map must be invertible at `inst.theta`.
pub fn reparameterize(inst: &ModelInstance, psi_map: PsiMap, phi_map: PhiMap) -> Result<ModelInstance, ModelError> {
    psi_map.validate()?;
    let groups = inst
        .model
        .groups()
        .iter()
        .map(|g| {
            let mut support = g.support.clone();
            let couples = !matches!(phi_map, PhiMap::Identity | PhiMap::Log);
            if couples && !support.contains(&0) {
                support.insert(0, 0);
            }
            GroupSpec { family: g.family, support, n_obs: g.n_obs }
        })
        .collect();
    let rep = Reparameterized { base: inst.model.clone(), psi_map, phi_map, groups };
    rep.jacobian_check(&inst.theta)?;
    let x = rep.from_base(&inst.theta);
    ModelInstance::new(Model::Reparameterized(Box::new(rep)), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{self, NeymanScottConfig};

    #[test]
    fn scatter_map_places_local_indices() {
        let m = scatter_map(&[0, 3], 4, 2);
        assert_eq!(m, vec![0, 3, 12, 15]);
    }

    #[test]
    fn reparameterized_round_trip() {
        let inst = zoo::neyman_scott(&NeymanScottConfig { n: 3, q: 2, sigma: 1.5, mu: Some(vec![0.5, -1.0]) }).unwrap();
        let rep = reparameterize(&inst, PsiMap::Log, PhiMap::Identity).unwrap();
        assert!((rep.theta[0] - 1.5f64.ln()).abs() < 1e-15);
        if let Model::Reparameterized(r) = &rep.model {
            let back = r.to_base(&rep.theta);
            assert!((back[0] - 1.5).abs() < 1e-15);
        } else {
            panic!()
        }
    }

    #[test]
    fn curved_normal_inverse_solves_map() {
        let m = PhiMap::CurvedNormalOrthogonal;
        for &(psi, mu) in &[(1.0, 1.0), (0.3, 7.0), (2.0, 0.05)] {
            let x = m.forward(psi, mu);
            assert!((m.inverse_value(psi, x) - mu).abs() < 1e-12 * mu.max(1.0));
        }
    }

    #[test]
    fn invalid_maps_rejected() {
        let inst = zoo::neyman_scott(&NeymanScottConfig::default()).unwrap();
        assert!(reparameterize(&inst, PsiMap::Power { p: -1.0 }, PhiMap::Identity).is_err());
        assert!(reparameterize(&inst, PsiMap::Affine { scale: 0.0, shift: 1.0 }, PhiMap::Identity).is_err());
    }
}
