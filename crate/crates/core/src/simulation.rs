//! Parametric bootstrap and Monte Carlo checks of the mean and Bartlett
//! expansions.
//!
//! Replicate `i` of a run seeded by `s` draws its data from substream
//! `(s, i)` and results are reduced in replicate order, so every study is a
//! pure function of its inputs whatever the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::adjust::{
    bartlett_decompose, cornish_fisher, mle_mean_expansion, pivot_cumulants, profile_score_mean, report_at, AdjustError,
    AdjustmentReport, PivotKind,
};
use crate::cumulants::{cumulants_analytic, CumulantOrder};
use crate::inference::{evaluate_stats, mle, constrained_stats, InferenceError, InferenceResult, PlugIn};
use crate::model::{Dataset, Model, ModelDef, ModelError, ModelInstance};
use crate::tensor::info_geometry;
use crate::zoo::with_n;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Adjust(#[from] AdjustError),
    #[error("{failed} of {reps} replicates failed, above the 1% budget")]
    FailureBudget { failed: usize, reps: usize },
    #[error("invalid study settings: {0}")]
    Settings(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Largest tolerated fraction of failed replicates.
pub const FAILURE_BUDGET: f64 = 0.01;
pub const NOMINAL_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];
/// Slack constant: expansion checks pass within `4 SE + SLACK_C / n`.
pub const SLACK_C: f64 = 1.0;
pub const SE_MULTIPLE: f64 = 4.0;

/// Statistics recorded per replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimPivot {
    R,
    RA,
    WaldObs,
    WaldExp,
    ScoreObs,
    ScoreExp,
    CfWaldObs,
    CfWaldExp,
    CfScoreObs,
    CfScoreExp,
}

impl SimPivot {
    pub const ALL: [SimPivot; 10] = [
        SimPivot::R,
        SimPivot::RA,
        SimPivot::WaldObs,
        SimPivot::WaldExp,
        SimPivot::ScoreObs,
        SimPivot::ScoreExp,
        SimPivot::CfWaldObs,
        SimPivot::CfWaldExp,
        SimPivot::CfScoreObs,
        SimPivot::CfScoreExp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimPivot::R => "r",
            SimPivot::RA => "r-a",
            SimPivot::WaldObs => "wald-obs",
            SimPivot::WaldExp => "wald-exp",
            SimPivot::ScoreObs => "score-obs",
            SimPivot::ScoreExp => "score-exp",
            SimPivot::CfWaldObs => "cf-wald-obs",
            SimPivot::CfWaldExp => "cf-wald-exp",
            SimPivot::CfScoreObs => "cf-score-obs",
            SimPivot::CfScoreExp => "cf-score-exp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Value of this pivot from an evaluated dataset.
    pub fn value(self, res: &InferenceResult, report: &AdjustmentReport<f64>) -> f64 {
        let cf = |t: f64, kind: PivotKind| cornish_fisher(t, &pivot_cumulants(report, kind));
        match self {
            SimPivot::R => res.r,
            SimPivot::RA => res.r_a,
            SimPivot::WaldObs => res.wald_obs,
            SimPivot::WaldExp => res.wald_exp,
            SimPivot::ScoreObs => res.score_obs,
            SimPivot::ScoreExp => res.score_exp,
            SimPivot::CfWaldObs => cf(res.wald_obs, PivotKind::WaldObs),
            SimPivot::CfWaldExp => cf(res.wald_exp, PivotKind::WaldExp),
            SimPivot::CfScoreObs => cf(res.score_obs, PivotKind::ScoreObs),
            SimPivot::CfScoreExp => cf(res.score_exp, PivotKind::ScoreExp),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    pub plug_in: PlugIn,
    /// Simulate at a canonical nuisance value when the pivots are exactly
    /// free of the nuisance parameters.
    pub pivotal_reduction: bool,
    /// Also difference the profile log-likelihood for `M_3(psi_hat)`.
    pub profile_third: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { reps: 10_000, seed: 1, workers: 0, plug_in: PlugIn::Constrained, pivotal_reduction: true, profile_third: false }
    }
}

impl SimOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        SimOptions { reps, seed, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub nominal: f64,
    /// Fraction with `T <= z_nominal`.
    pub lower: f64,
    /// Fraction with `T >= -z_nominal`.
    pub upper: f64,
    /// Largest absolute coverage error of the two one-sided sets.
    pub error: f64,
    /// Binomial standard error at the nominal level.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub skewness: f64,
    /// Kolmogorov-Smirnov distance to the standard normal.
    pub ks: f64,
    pub coverage: Vec<CoverageCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotSample {
    pub pivot: SimPivot,
    pub values: Vec<f64>,
    pub diagnostics: SampleDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStudy {
    pub model: String,
    pub theta: Vec<f64>,
    pub n: usize,
    pub q: usize,
    pub psi0: f64,
    pub options: SimOptions,
    /// True when the canonical nuisance point was used for simulation.
    pub pivotal_reduction_applied: bool,
    pub results: Vec<PivotSample>,
    /// `W`, `psi_hat - psi0` and `M_1(psi0)` per successful replicate.
    pub w: Vec<f64>,
    pub psi_error: Vec<f64>,
    pub m1: Vec<f64>,
    /// `M_3(psi_hat)` when requested.
    pub m3: Vec<f64>,
    pub failures: Vec<ReplicateFailure>,
    /// Evaluation on the observed data, for bootstrap studies.
    pub observed: Option<InferenceResult>,
    /// `(#{r_b <= r_obs} + 1) / (B + 1)` and the upper-tail analogue.
    pub p_lower: Option<f64>,
    pub p_upper: Option<f64>,
}

impl SimStudy {
    pub fn sample(&self, pivot: SimPivot) -> &PivotSample {
        &self.results[pivot.index()]
    }
}

#[derive(Clone, Copy)]
struct Replicate {
    values: [f64; 10],
    w: f64,
    psi_error: f64,
    m1: f64,
    m3: f64,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Sample mean, standard error and skewness.
pub fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in x {
        let e = v - mean;
        m2 += e * e;
        m3 += e * e * e;
    }
    m2 /= n;
    m3 /= n;
    let se = if x.len() > 1 { (m2 * n / (n - 1.0) / n).sqrt() } else { f64::NAN };
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, se, skew)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of `x`
/// and a continuous CDF.
pub fn ks_distance(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in s.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

pub fn ks_normal(x: &[f64]) -> f64 {
    let nd = standard_normal();
    ks_distance(x, |v| nd.cdf(v))
}

pub fn diagnostics(x: &[f64]) -> SampleDiagnostics {
    let (mean, se, skewness) = moments(x);
    let nd = standard_normal();
    let b = x.len() as f64;
    let coverage = NOMINAL_LEVELS
        .iter()
        .map(|&c| {
            let z = nd.inverse_cdf(c);
            let lower = x.iter().filter(|&&v| v <= z).count() as f64 / b;
            let upper = x.iter().filter(|&&v| v >= -z).count() as f64 / b;
            CoverageCell {
                nominal: c,
                lower,
                upper,
                error: (lower - c).abs().max((upper - c).abs()),
                se: (c * (1.0 - c) / b).sqrt(),
            }
        })
        .collect();
    SampleDiagnostics { count: x.len(), mean, se, skewness, ks: ks_normal(x), coverage }
}

/// Nuisance point at which the pivots' distribution is attained for every
/// nuisance value, for models where that holds exactly.
fn canonical_nuisance(model: &Model, theta: &[f64]) -> Option<Vec<f64>> {
    match model {
        Model::NormalRegression(_) | Model::NeymanScott(_) | Model::NormalMean(_) => {
            let mut t = vec![0.0; theta.len()];
            t[0] = theta[0];
            Some(t)
        }
        _ => None,
    }
}

fn run_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, SimError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| SimError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn replicate(sim: &ModelInstance, psi0: f64, index: u64, opts: &SimOptions) -> Result<Replicate, String> {
    let model = &sim.model;
    let data = sim.sample(opts.seed, index);
    let stats = model.suff_stats(&data);
    let start = model.initial_estimate(&data).map_err(|e| e.to_string())?;
    let (res, report) = evaluate_stats(model, &stats, &start, psi0, opts.plug_in).map_err(|e| e.to_string())?;
    let mut values = [0.0; 10];
    for k in SimPivot::ALL {
        values[k.index()] = k.value(&res, &report);
    }
    let m3 = if opts.profile_third {
        crate::inference::profile_derivatives(model, &data, psi0).map_err(|e| e.to_string())?.m3_at_hat
    } else {
        f64::NAN
    };
    if values.iter().any(|v| !v.is_finite()) || !res.w.is_finite() {
        return Err("non-finite pivot value".into());
    }
    Ok(Replicate { values, w: res.w, psi_error: res.psi_hat - psi0, m1: res.m1, m3 })
}

fn run_study(
    sim: &ModelInstance,
    psi0: f64,
    opts: &SimOptions,
    reduction_applied: bool,
) -> Result<SimStudy, SimError> {
    if opts.reps == 0 {
        return Err(SimError::Settings("reps must be positive".into()));
    }
    let outcomes: Vec<Result<Replicate, String>> =
        run_pool(opts.workers, || (0..opts.reps as u64).into_par_iter().map(|i| replicate(sim, psi0, i, opts)).collect())?;
    let mut failures = Vec::new();
    let mut reps = Vec::with_capacity(opts.reps);
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reps.push(r),
            Err(error) => failures.push(ReplicateFailure { index: i as u64, error }),
        }
    }
    if failures.len() as f64 > FAILURE_BUDGET * opts.reps as f64 {
        return Err(SimError::FailureBudget { failed: failures.len(), reps: opts.reps });
    }
    let results = SimPivot::ALL
        .iter()
        .map(|&k| {
            let values: Vec<f64> = reps.iter().map(|r| r.values[k.index()]).collect();
            let diagnostics = diagnostics(&values);
            PivotSample { pivot: k, values, diagnostics }
        })
        .collect();
    Ok(SimStudy {
        model: sim.model.name().to_string(),
        theta: sim.theta.clone(),
        n: sim.n(),
        q: sim.q(),
        psi0,
        options: opts.clone(),
        pivotal_reduction_applied: reduction_applied,
        results,
        w: reps.iter().map(|r| r.w).collect(),
        psi_error: reps.iter().map(|r| r.psi_error).collect(),
        m1: reps.iter().map(|r| r.m1).collect(),
        m3: if opts.profile_third { reps.iter().map(|r| r.m3).collect() } else { Vec::new() },
        failures,
        observed: None,
        p_lower: None,
        p_upper: None,
    })
}

/// Sampling distribution of the pivots at `psi0 = theta[0]` under the
/// model instance itself.
pub fn simulate_pivots(inst: &ModelInstance, opts: &SimOptions) -> Result<SimStudy, SimError> {
    run_study(inst, inst.theta[0], opts, false)
}

/// Parametric bootstrap from the constrained estimate at `psi0` on the
/// observed data.
pub fn bootstrap_distribution(model: &Model, data: &Dataset, psi0: f64, opts: &SimOptions) -> Result<SimStudy, SimError> {
    let hat = mle(model, data)?;
    let tilde = constrained_stats(model, &model.suff_stats(data), psi0, &hat.theta)?;
    let observed = evaluate_stats(model, &model.suff_stats(data), &hat.theta, psi0, opts.plug_in)?.0;
    let (theta, applied) = match (opts.pivotal_reduction, canonical_nuisance(model, &tilde.theta)) {
        (true, Some(t)) => (t, true),
        _ => (tilde.theta.clone(), false),
    };
    let sim = ModelInstance::new(model.clone(), theta)?;
    let mut study = run_study(&sim, psi0, opts, applied)?;
    let r = &study.sample(SimPivot::R).values;
    let b = r.len() as f64;
    let below = r.iter().filter(|&&v| v <= observed.r).count() as f64;
    let above = r.iter().filter(|&&v| v >= observed.r).count() as f64;
    study.p_lower = Some((below + 1.0) / (b + 1.0));
    study.p_upper = Some((above + 1.0) / (b + 1.0));
    study.observed = Some(observed);
    Ok(study)
}

/// Exact CDF of the signed root for the normal scale parameter in a
/// regression with `q` coefficients: `R = sgn(u - 1) {n (u - 1 - log u)}^{1/2}`
/// with `n u ~ chi^2_{n-q}`.
pub fn exact_normal_scale_r_cdf(n: usize, q: usize, r: f64) -> f64 {
    let chi = ChiSquared::new((n - q) as f64).unwrap();
    let nf = n as f64;
    let target = r * r / nf;
    let h = |u: f64| u - 1.0 - u.ln();
    // h decreases on (0, 1) and increases on (1, inf)
    let (mut lo, mut hi) = if r < 0.0 {
        (f64::MIN_POSITIVE, 1.0)
    } else {
        let mut hi = 2.0;
        while h(hi) < target {
            hi *= 2.0;
        }
        (1.0, hi)
    };
    if r == 0.0 {
        return chi.cdf(nf);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let below = h(mid) < target;
        if (r < 0.0) == below {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    chi.cdf(nf * 0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionQuantity {
    /// `E R = -(g_inf + g_np)`.
    Er,
    /// `E W = 1 + b`.
    Ew,
    /// `E psi_hat - psi = -(2 g_inf + g_np - d) eta^{-1/2}`.
    BiasPsiHat,
    /// `E M_1(psi) = -eta^{1/2} g_np`.
    ProfileScoreMean,
    /// `E M_3(psi_hat) eta^{-3/2} = 6 d`.
    M3Diag,
}

impl ExpansionQuantity {
    pub const ALL: [ExpansionQuantity; 5] = [
        ExpansionQuantity::Er,
        ExpansionQuantity::Ew,
        ExpansionQuantity::BiasPsiHat,
        ExpansionQuantity::ProfileScoreMean,
        ExpansionQuantity::M3Diag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpansionQuantity::Er => "er",
            ExpansionQuantity::Ew => "ew",
            ExpansionQuantity::BiasPsiHat => "bias_psi_hat",
            ExpansionQuantity::ProfileScoreMean => "profile_score_mean",
            ExpansionQuantity::M3Diag => "m3_diag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub n: usize,
    pub mc: f64,
    pub se: f64,
    pub theory: f64,
    /// `mc - theory` on the standardized scale.
    pub residual: f64,
    pub residual_times_n: f64,
    pub tolerance: f64,
    pub failures: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub quantity: ExpansionQuantity,
    pub model: String,
    pub reps: usize,
    pub seed: u64,
    pub slack_c: f64,
    pub rows: Vec<ExpansionRow>,
}

impl ExpansionReport {
    /// Fail if any row fails, else inconclusive if any row is, else pass.
    pub fn verdict(&self) -> Verdict {
        if self.rows.iter().any(|r| r.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if self.rows.iter().any(|r| r.verdict == Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }
}

/// Standardized MC estimate, its SE and the theoretical value of one
/// quantity from a finished study.
fn standardized(
    quantity: ExpansionQuantity,
    study: &SimStudy,
    inst: &ModelInstance,
    report: &AdjustmentReport<f64>,
) -> Result<(f64, f64, f64), SimError> {
    let root = report.eta.sqrt();
    Ok(match quantity {
        ExpansionQuantity::Er => {
            let (m, se, _) = moments(&study.sample(SimPivot::R).values);
            (m, se, -(report.g_inf + report.g_np))
        }
        ExpansionQuantity::Ew => {
            let cs = cumulants_analytic::<f64>(inst, CumulantOrder::Fourth)?;
            let geom = info_geometry(&cs.lam2).map_err(ModelError::from)?;
            let b = bartlett_decompose(&cs, &geom)?.b;
            let (m, se, _) = moments(&study.w);
            (m, se, 1.0 + b)
        }
        ExpansionQuantity::BiasPsiHat => {
            let (m, se, _) = moments(&study.psi_error);
            (m * root, se * root, mle_mean_expansion(report) * root)
        }
        ExpansionQuantity::ProfileScoreMean => {
            let (m, se, _) = moments(&study.m1);
            (m / root, se / root, profile_score_mean(report) / root)
        }
        ExpansionQuantity::M3Diag => {
            let (m, se, _) = moments(&study.m3);
            let s = root.powi(3);
            (m / s, se / s, 6.0 * report.d_quant)
        }
    })
}

/// Monte Carlo check of a leading-order expansion at each sample size in
/// `n_grid`: pass within `4 SE + C / n`, inconclusive when `4 SE > C / n`.
pub fn verify_expansion(
    inst: &ModelInstance,
    quantity: ExpansionQuantity,
    n_grid: &[usize],
    opts: &SimOptions,
) -> Result<ExpansionReport, SimError> {
    let mut opts = opts.clone();
    opts.profile_third = quantity == ExpansionQuantity::M3Diag;
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let at_n = with_n(inst, n)?;
        let report = report_at::<f64>(&at_n)?;
        let study = simulate_pivots(&at_n, &opts)?;
        let (mc, se, theory) = standardized(quantity, &study, &at_n, &report)?;
        rows.push(expansion_row(n, mc, se, theory, study.failures.len()));
    }
    Ok(ExpansionReport {
        quantity,
        model: inst.model.name().to_string(),
        reps: opts.reps,
        seed: opts.seed,
        slack_c: SLACK_C,
        rows,
    })
}

/// All four mean expansions from a single study per sample size.
pub fn verify_expansions(inst: &ModelInstance, n_grid: &[usize], opts: &SimOptions) -> Result<Vec<ExpansionReport>, SimError> {
    let quantities =
        [ExpansionQuantity::Er, ExpansionQuantity::Ew, ExpansionQuantity::BiasPsiHat, ExpansionQuantity::ProfileScoreMean];
    let mut reports: Vec<ExpansionReport> = quantities
        .iter()
        .map(|&quantity| ExpansionReport {
            quantity,
            model: inst.model.name().to_string(),
            reps: opts.reps,
            seed: opts.seed,
            slack_c: SLACK_C,
            rows: Vec::new(),
        })
        .collect();
    for &n in n_grid {
        let at_n = with_n(inst, n)?;
        let report = report_at::<f64>(&at_n)?;
        let study = simulate_pivots(&at_n, opts)?;
        for rep in reports.iter_mut() {
            let (mc, se, theory) = standardized(rep.quantity, &study, &at_n, &report)?;
            rep.rows.push(expansion_row(n, mc, se, theory, study.failures.len()));
        }
    }
    Ok(reports)
}

fn expansion_row(n: usize, mc: f64, se: f64, theory: f64, failures: usize) -> ExpansionRow {
    let slack = SLACK_C / n as f64;
    let residual = mc - theory;
    let tolerance = SE_MULTIPLE * se + slack;
    let verdict = if !(se.is_finite()) || SE_MULTIPLE * se > slack {
        Verdict::Inconclusive
    } else if residual.abs() <= tolerance {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    ExpansionRow { n, mc, se, theory, residual, residual_times_n: residual * n as f64, tolerance, failures, verdict }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub pivot: SimPivot,
    pub ks: f64,
    pub mean: f64,
    pub skewness: f64,
    pub coverage: Vec<CoverageCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub model: String,
    pub n: usize,
    pub q: usize,
    pub reps: usize,
    pub seed: u64,
    pub g_inf: f64,
    pub g_np: f64,
    pub rows: Vec<NormalityRow>,
    /// `KS(R_a) < KS(R)`.
    pub ks_improved: bool,
    /// Every one-sided coverage error of `R_a` is at most that of `R`
    /// plus four binomial standard errors.
    pub coverage_not_worse: bool,
    /// `|mean(R) + g_inf + g_np|` and its allowance `4 SE + C / n`.
    pub mean_r_residual: f64,
    pub mean_r_tolerance: f64,
}

pub fn normality_comparison(inst: &ModelInstance, opts: &SimOptions) -> Result<NormalityReport, SimError> {
    let study = simulate_pivots(inst, opts)?;
    let report = report_at::<f64>(inst)?;
    let rows: Vec<NormalityRow> = study
        .results
        .iter()
        .map(|s| NormalityRow {
            pivot: s.pivot,
            ks: s.diagnostics.ks,
            mean: s.diagnostics.mean,
            skewness: s.diagnostics.skewness,
            coverage: s.diagnostics.coverage.clone(),
        })
        .collect();
    let r = &study.sample(SimPivot::R).diagnostics;
    let ra = &study.sample(SimPivot::RA).diagnostics;
    let coverage_not_worse = r.coverage.iter().zip(&ra.coverage).all(|(a, b)| {
        let worse_lower = (b.lower - b.nominal).abs() - (a.lower - a.nominal).abs();
        let worse_upper = (b.upper - b.nominal).abs() - (a.upper - a.nominal).abs();
        worse_lower <= SE_MULTIPLE * a.se && worse_upper <= SE_MULTIPLE * a.se
    });
    Ok(NormalityReport {
        model: inst.model.name().to_string(),
        n: inst.n(),
        q: inst.q(),
        reps: opts.reps,
        seed: opts.seed,
        g_inf: report.g_inf,
        g_np: report.g_np,
        ks_improved: ra.ks < r.ks,
        coverage_not_worse,
        mean_r_residual: (r.mean + report.g_inf + report.g_np).abs(),
        mean_r_tolerance: SE_MULTIPLE * r.se + SLACK_C / inst.n() as f64,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub q: Vec<usize>,
    /// `-(mean(R) + g_inf)`, the simulated nuisance-parameter shift.
    pub shift: Vec<f64>,
    pub g_np: Vec<f64>,
    pub empirical_slope: f64,
    pub analytic_slope: f64,
    /// Slope positive and within 25% of the analytic slope.
    pub consistent: bool,
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Growth in `q` of the nuisance-parameter part of the mean of `R` at fixed
/// `n` for a stratified model.
pub fn np_shift_growth(
    build: impl Fn(usize) -> Result<ModelInstance, ModelError>,
    qs: &[usize],
    opts: &SimOptions,
) -> Result<GrowthReport, SimError> {
    let mut shift = Vec::new();
    let mut g_np = Vec::new();
    for &q in qs {
        let inst = build(q)?;
        let report = report_at::<f64>(&inst)?;
        let study = simulate_pivots(&inst, opts)?;
        let mean_r = study.sample(SimPivot::R).diagnostics.mean;
        shift.push(-(mean_r + report.g_inf));
        g_np.push(report.g_np);
    }
    let x: Vec<f64> = qs.iter().map(|&q| q as f64).collect();
    let empirical_slope = ls_slope(&x, &shift);
    let analytic_slope = ls_slope(&x, &g_np);
    let consistent = empirical_slope > 0.0 && (empirical_slope - analytic_slope).abs() <= 0.25 * analytic_slope.abs();
    Ok(GrowthReport { q: qs.to_vec(), shift, g_np, empirical_slope, analytic_slope, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let nd = standard_normal();
        let x: Vec<f64> = (0..1000).map(|i| nd.inverse_cdf((i as f64 + 0.5) / 1000.0)).collect();
        assert!((ks_normal(&x) - 0.0005).abs() < 1e-9);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let (m, se, s) = moments(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(m, 0.0);
        assert_eq!(s, 0.0);
        assert!((se - (2.5f64 / 5.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_cdf_is_monotone_and_centered() {
        let mut prev = 0.0;
        for i in -40..=40 {
            let f = exact_normal_scale_r_cdf(20, 2, i as f64 / 10.0);
            assert!(f >= prev);
            prev = f;
        }
        assert!(exact_normal_scale_r_cdf(20, 2, -6.0) < 1e-6);
        assert!(exact_normal_scale_r_cdf(20, 2, 6.0) > 1.0 - 1e-6);
    }

    #[test]
    fn slope_of_line() {
        assert!((ls_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-15);
    }
}
