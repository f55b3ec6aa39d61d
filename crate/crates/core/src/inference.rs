//! Likelihood fitting on data: global and constrained maximum likelihood,
//! profile quantities and the pivot statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjust::{report_at, AdjustmentReport};
use crate::model::{loglik_stats, Coord, Dataset, LogLik, Model, ModelDef, ModelError, ModelInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("optimizer did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },
    #[error("no ascent step stays inside the parameter domain (iteration {iteration})")]
    DomainEscape { iteration: usize },
    #[error("stationary point is not a maximum: {0}")]
    NotMaximum(String),
    #[error("profile information {j_p:e} is not positive")]
    BadProfile { j_p: f64 },
    #[error("profile stencil point psi = {psi} leaves the parameter domain")]
    StencilBoundary { psi: f64 },
}

pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    /// Max-norm of the score over the free coordinates.
    pub score_norm: f64,
    /// Full score at the optimum.
    #[serde(skip)]
    pub grad: Vec<f64>,
    /// Row-major Hessian in theta at the optimum.
    #[serde(skip)]
    pub hessian: Vec<f64>,
}

fn max_abs_at(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i].abs()).fold(0.0, f64::max)
}

/// Damped Newton ascent over the coordinates in `free`, with positive
/// coordinates moved on the log scale, a Levenberg shift when the Hessian is
/// not negative definite, and backtracking on domain violations.
fn newton(model: &Model, stats: &[Vec<f64>], start: &[f64], free: &[usize]) -> Result<Fit, InferenceError> {
    model.check_theta(start)?;
    let coords = model.coords();
    let k = free.len();
    let mut theta = start.to_vec();
    let mut cur: LogLik = loglik_stats(model, &theta, stats)?;
    let d = theta.len();
    for iter in 0..MAX_ITER {
        let score_norm = max_abs_at(&cur.grad, free);
        if score_norm < SCORE_TOL {
            return Ok(Fit { theta, loglik: cur.value, iterations: iter, score_norm, grad: cur.grad, hessian: cur.hess });
        }
        // chain rule to x = log(theta) on positive coordinates
        let s: Vec<f64> = free.iter().map(|&i| if coords[i] == Coord::Positive { theta[i] } else { 1.0 }).collect();
        let g = DVector::from_fn(k, |a, _| cur.grad[free[a]] * s[a]);
        let mut h = DMatrix::from_fn(k, k, |a, b| cur.hess[free[a] * d + free[b]] * s[a] * s[b]);
        for a in 0..k {
            if coords[free[a]] == Coord::Positive {
                h[(a, a)] += g[a];
            }
        }
        let neg = -h;
        let scale = neg.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        let mut shift = 0.0;
        let step = loop {
            let mut m = neg.clone();
            for a in 0..k {
                m[(a, a)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
            if shift > 1e12 * scale {
                return Err(InferenceError::NotMaximum("Hessian cannot be regularized".into()));
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = theta.clone();
            for a in 0..k {
                let i = free[a];
                let dx = (alpha * step[a]).clamp(-5.0, 5.0);
                cand[i] = if coords[i] == Coord::Positive { theta[i] * dx.exp() } else { theta[i] + dx };
            }
            if model.check_theta(&cand).is_ok() {
                if let Ok(ll) = loglik_stats(model, &cand, stats) {
                    if ll.value.is_finite() && ll.value >= cur.value - 1e-12 * cur.value.abs().max(1.0) {
                        accepted = Some((cand, ll));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((t, ll)) => {
                let moved = t.iter().zip(&theta).any(|(a, b)| a != b);
                theta = t;
                cur = ll;
                if !moved {
                    let score_norm = max_abs_at(&cur.grad, free);
                    return Err(InferenceError::NotConverged { iterations: iter + 1, score_norm });
                }
            }
            None => return Err(InferenceError::DomainEscape { iteration: iter }),
        }
    }
    let score_norm = max_abs_at(&cur.grad, free);
    if score_norm < SCORE_TOL {
        return Ok(Fit { theta, loglik: cur.value, iterations: MAX_ITER, score_norm, grad: cur.grad, hessian: cur.hess });
    }
    Err(InferenceError::NotConverged { iterations: MAX_ITER, score_norm })
}

fn check_negative_definite(hess: &[f64], d: usize, free: &[usize]) -> Result<(), InferenceError> {
    let k = free.len();
    let m = DMatrix::from_fn(k, k, |a, b| -hess[free[a] * d + free[b]]);
    if m.cholesky().is_none() {
        return Err(InferenceError::NotMaximum("Hessian is not negative definite at the optimum".into()));
    }
    Ok(())
}

pub(crate) fn mle_stats(model: &Model, stats: &[Vec<f64>], start: &[f64]) -> Result<Fit, InferenceError> {
    let free: Vec<usize> = (0..model.dim()).collect();
    let fit = newton(model, stats, start, &free)?;
    check_negative_definite(&fit.hessian, model.dim(), &free)?;
    Ok(fit)
}

pub(crate) fn constrained_stats(
    model: &Model,
    stats: &[Vec<f64>],
    psi: f64,
    global: &[f64],
) -> Result<Fit, InferenceError> {
    let d = model.dim();
    let free: Vec<usize> = (1..d).collect();
    let mut start = global.to_vec();
    start[0] = psi;
    let start = if model.check_theta(&start).is_ok() { start } else { model.constrained_start(psi, global) };
    let fit = match newton(model, stats, &start, &free) {
        Ok(f) => f,
        Err(e) => {
            // retry from the model's own feasible start
            let alt = model.constrained_start(psi, global);
            if alt == start {
                return Err(e);
            }
            newton(model, stats, &alt, &free)?
        }
    };
    if d > 1 {
        check_negative_definite(&fit.hessian, d, &free)?;
    }
    Ok(fit)
}

/// Global maximum likelihood estimate.
pub fn mle(model: &Model, data: &Dataset) -> Result<Fit, InferenceError> {
    model.check_data(data)?;
    let start = model.initial_estimate(data)?;
    let start = if model.check_theta(&start).is_ok() {
        start
    } else {
        return Err(ModelError::Data("initial estimate outside the parameter domain".into()).into());
    };
    mle_stats(model, &model.suff_stats(data), &start)
}

/// Maximum likelihood estimate with the interest parameter fixed at `psi`.
pub fn constrained_mle(model: &Model, data: &Dataset, psi: f64) -> Result<Fit, InferenceError> {
    let global = mle(model, data)?;
    constrained_stats(model, &model.suff_stats(data), psi, &global.theta)
}

/// Where the adjustment of the signed root is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlugIn {
    /// The constrained estimate at the tested value.
    #[default]
    Constrained,
    /// The global estimate.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub psi: f64,
    pub psi_hat: f64,
    pub theta_hat: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    /// `M(psi)`.
    pub profile_ll: f64,
    /// `M(psi_hat)`.
    pub profile_ll_hat: f64,
    pub w: f64,
    pub r: f64,
    pub r_a: f64,
    pub wald_obs: f64,
    pub wald_exp: f64,
    pub score_obs: f64,
    pub score_exp: f64,
    /// Profile observed information at `psi_hat`.
    pub j_p: f64,
    /// Profile score `M_1(psi)`.
    pub m1: f64,
    /// Expected adjusted information at `theta_hat`.
    pub eta_hat: f64,
    pub iterations_hat: usize,
    pub iterations_tilde: usize,
    pub plug_in: PlugIn,
}

/// Inverse of `-L_rs` row for the interest parameter: `-L^{11}`.
fn minus_l11_inverse(hess: &[f64], d: usize) -> Result<f64, InferenceError> {
    let m = DMatrix::from_row_slice(d, d, hess).map(|x| -x);
    let inv = m.clone().cholesky().ok_or_else(|| InferenceError::NotMaximum("observed information is not positive definite".into()))?.inverse();
    Ok(inv[(0, 0)])
}

/// `eta = -1 / lambda^{11}` from the Hessian at the expected sufficient
/// statistics, which equals `lambda_rs` for these exponential families.
fn expected_eta(model: &Model, theta: &[f64]) -> Result<f64, InferenceError> {
    let stats: Vec<Vec<f64>> = model
        .groups()
        .iter()
        .zip(model.natural_values(theta))
        .map(|(spec, eta)| spec.family.stat_cumulants(&eta).0.iter().map(|m| m * spec.n_obs as f64).collect())
        .collect();
    let ll = loglik_stats(model, theta, &stats)?;
    Ok(1.0 / minus_l11_inverse(&ll.hess, model.dim())?)
}

/// Statistics from fitted global and constrained estimates.
pub(crate) fn assemble(
    model: &Model,
    psi: f64,
    hat: &Fit,
    tilde: &Fit,
    report: &AdjustmentReport<f64>,
    plug_in: PlugIn,
) -> Result<InferenceResult, InferenceError> {
    let d = model.dim();
    let psi_hat = hat.theta[0];
    let inv11 = minus_l11_inverse(&hat.hessian, d)?;
    let j_p = 1.0 / inv11;
    if !(j_p > 0.0) || !j_p.is_finite() {
        return Err(InferenceError::BadProfile { j_p });
    }
    let w = (2.0 * (hat.loglik - tilde.loglik)).max(0.0);
    let sign = if psi_hat > psi {
        1.0
    } else if psi_hat < psi {
        -1.0
    } else {
        0.0
    };
    let r = sign * w.sqrt();
    let eta_hat = expected_eta(model, &hat.theta)?;
    // envelope property: M_1(psi) = L_1(theta_tilde)
    let m1 = tilde.grad[0];
    Ok(InferenceResult {
        psi,
        psi_hat,
        theta_hat: hat.theta.clone(),
        theta_tilde: tilde.theta.clone(),
        profile_ll: tilde.loglik,
        profile_ll_hat: hat.loglik,
        w,
        r,
        r_a: r + report.g_np + report.g_inf,
        wald_obs: (psi_hat - psi) / inv11.sqrt(),
        wald_exp: (psi_hat - psi) * eta_hat.sqrt(),
        score_obs: m1 * inv11.sqrt(),
        score_exp: m1 / eta_hat.sqrt(),
        j_p,
        m1,
        eta_hat,
        iterations_hat: hat.iterations,
        iterations_tilde: tilde.iterations,
        plug_in,
    })
}

/// Pivot statistics at `psi`, with `report` the adjustment report at the
/// chosen plug-in point.
pub fn pivots(model: &Model, data: &Dataset, psi: f64, report: &AdjustmentReport<f64>) -> Result<InferenceResult, InferenceError> {
    let hat = mle(model, data)?;
    let stats = model.suff_stats(data);
    let tilde = constrained_stats(model, &stats, psi, &hat.theta)?;
    assemble(model, psi, &hat, &tilde, report, PlugIn::Constrained)
}

/// Fits, evaluates the adjustment report at the plug-in point and returns
/// all pivots.
pub fn evaluate(model: &Model, data: &Dataset, psi: f64, plug_in: PlugIn) -> Result<InferenceResult, InferenceError> {
    let stats = {
        model.check_data(data)?;
        model.suff_stats(data)
    };
    Ok(evaluate_stats(model, &stats, &model.initial_estimate(data)?, psi, plug_in)?.0)
}

pub(crate) fn evaluate_stats(
    model: &Model,
    stats: &[Vec<f64>],
    start: &[f64],
    psi: f64,
    plug_in: PlugIn,
) -> Result<(InferenceResult, AdjustmentReport<f64>), InferenceError> {
    let hat = mle_stats(model, stats, start)?;
    let tilde = constrained_stats(model, stats, psi, &hat.theta)?;
    let at = match plug_in {
        PlugIn::Constrained => &tilde.theta,
        PlugIn::Global => &hat.theta,
    };
    let report = report_at::<f64>(&ModelInstance::new(model.clone(), at.clone())?)?;
    Ok((assemble(model, psi, &hat, &tilde, &report, plug_in)?, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileDerivatives {
    pub psi: f64,
    pub psi_hat: f64,
    pub step: f64,
    /// `M_1(psi)`.
    pub m1: f64,
    /// `j_p(psi) = -M_2(psi)`.
    pub j_p: f64,
    /// `M_1(psi_hat)`, zero up to differencing error.
    pub m1_at_hat: f64,
    /// `M_3(psi_hat)`.
    pub m3_at_hat: f64,
}

/// Profile derivatives by five-point central differences of `M` with step
/// `eta_hat^{-1/2} / 10`, refined by one Richardson step against the stencil
/// at half that step.
pub fn profile_derivatives(model: &Model, data: &Dataset, psi: f64) -> Result<ProfileDerivatives, InferenceError> {
    let hat = mle(model, data)?;
    let stats = model.suff_stats(data);
    let eta = expected_eta(model, &hat.theta)?;
    let h = 0.1 / eta.sqrt();
    // M at center + k h / 2 for k = -4..=4, walking outward with warm starts
    let profile = |center: f64| -> Result<[f64; 9], InferenceError> {
        let mut out = [0.0; 9];
        for dir in [1i32, -1] {
            let mut warm = hat.theta.clone();
            for k in 0..=4 {
                if dir < 0 && k == 0 {
                    continue;
                }
                let p = center + (dir * k) as f64 * 0.5 * h;
                let fit = constrained_stats(model, &stats, p, &warm).map_err(|e| match e {
                    InferenceError::DomainEscape { .. } | InferenceError::Model(ModelError::Domain { .. }) => {
                        InferenceError::StencilBoundary { psi: p }
                    }
                    other => other,
                })?;
                warm = fit.theta.clone();
                out[(4 + dir * k) as usize] = fit.loglik;
            }
        }
        Ok(out)
    };
    // five-point formulas on the values at offsets -2s..2s
    let d1 = |m: &[f64; 9], s: usize, h: f64| (-m[4 + 2 * s] + 8.0 * m[4 + s] - 8.0 * m[4 - s] + m[4 - 2 * s]) / (12.0 * h);
    let d2 = |m: &[f64; 9], s: usize, h: f64| {
        (-m[4 + 2 * s] + 16.0 * m[4 + s] - 30.0 * m[4] + 16.0 * m[4 - s] - m[4 - 2 * s]) / (12.0 * h * h)
    };
    let d3 = |m: &[f64; 9], s: usize, h: f64| (m[4 + 2 * s] - 2.0 * m[4 + s] + 2.0 * m[4 - s] - m[4 - 2 * s]) / (2.0 * h * h * h);
    let rich4 = |fine: f64, coarse: f64| (16.0 * fine - coarse) / 15.0;
    let rich2 = |fine: f64, coarse: f64| (4.0 * fine - coarse) / 3.0;
    let m = profile(psi)?;
    let m1 = rich4(d1(&m, 1, 0.5 * h), d1(&m, 2, h));
    let m2 = rich4(d2(&m, 1, 0.5 * h), d2(&m, 2, h));
    let mh = if psi == hat.theta[0] { m } else { profile(hat.theta[0])? };
    let m1h = rich4(d1(&mh, 1, 0.5 * h), d1(&mh, 2, h));
    let m3h = rich2(d3(&mh, 1, 0.5 * h), d3(&mh, 2, h));
    Ok(ProfileDerivatives { psi, psi_hat: hat.theta[0], step: h, m1, j_p: -m2, m1_at_hat: m1h, m3_at_hat: m3h })
}
