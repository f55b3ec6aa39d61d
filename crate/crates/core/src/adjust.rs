//! Second-order adjustment quantities as tensor contractions of a
//! [`CumulantSet`] with its [`InfoGeometry`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cumulants::{cumulants_analytic, CumulantOrder, CumulantSet};
use crate::model::{ModelError, ModelInstance};
use crate::scalar::Scalar;
use crate::tensor::{contract_scalar, info_geometry, InfoGeometry, SymTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjustError {
    #[error("parameterization is not orthogonal: lambda_1{index} = {value:e}")]
    NotOrthogonal { index: usize, value: f64 },
    #[error("fourth-order arrays (lam4, dlam3, ddlam2) are required")]
    MissingFourthOrder,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Leading-order adjustment quantities at one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentReport<T> {
    pub g_inf: T,
    pub g_np: T,
    /// The profile-likelihood skewness quantity `d`.
    pub d_quant: T,
    pub rho: T,
    /// `g_np / g_inf`; `None` when `g_inf` vanishes.
    pub ratio: Option<f64>,
    pub eta: T,
    /// Alias of `g_inf`.
    pub a0: T,
    /// `g_inf + g_np`.
    pub z0: T,
    /// Leading term of the mean of the signed root.
    pub er_leading: T,
}

/// `g_inf` counts as zero below this multiple of `eta^{-1/2}`.
pub const RATIO_ZERO_TOL: f64 = 1e-12;

fn c<T: Scalar>(spec: &str, ts: &[&SymTensor<T>]) -> T {
    contract_scalar(spec, ts).expect("contraction spec is well formed")
}

/// `lambda^{1r} Y^{st} Z_{rst}`.
fn one_r_st<T: Scalar>(up: &SymTensor<T>, y: &SymTensor<T>, z: &SymTensor<T>) -> T {
    c("^1^r,^s^t,_r_s_t", &[up, y, z])
}

pub fn adjustment_report<T: Scalar>(cs: &CumulantSet<T>, geom: &InfoGeometry<T>) -> AdjustmentReport<T> {
    let up = &geom.lambda_up;
    let (tau, nu) = (&geom.tau, &geom.nu);
    let eta = geom.eta.clone();
    let root = eta.sqrt();
    let half = T::half();
    let sixth = T::from_ratio(1, 6);
    let third = T::from_ratio(1, 3);

    let tau21 = one_r_st(up, tau, &cs.lam21);
    let tau3 = one_r_st(up, tau, &cs.lam3);
    let nu21 = one_r_st(up, nu, &cs.lam21);
    let nu3 = one_r_st(up, nu, &cs.lam3);
    let lam21 = one_r_st(up, up, &cs.lam21);
    let lam3 = one_r_st(up, up, &cs.lam3);

    let g_inf = root.clone() * (half.clone() * tau21.clone() + sixth.clone() * tau3.clone());
    let g_np = -(root.clone() * (nu21.clone() + half.clone() * nu3.clone()));
    let rho = -(eta.clone() * (half.clone() * nu3 + nu21));
    let d_quant = -(root.clone() * sixth * tau3.clone());
    let er_leading = root.clone() * (lam21 + half.clone() * tau21 + half * lam3 + third * tau3);

    let gi = g_inf.to_f64();
    let ratio = if gi.abs() <= RATIO_ZERO_TOL / root.to_f64() { None } else { Some(g_np.to_f64() / gi) };
    AdjustmentReport {
        a0: g_inf.clone(),
        z0: g_inf.clone() + g_np.clone(),
        g_inf,
        g_np,
        d_quant,
        rho,
        ratio,
        eta,
        er_leading,
    }
}

/// Cumulants and report at a model instance (third order, analytic).
pub fn report_at<T: Scalar>(inst: &ModelInstance) -> Result<AdjustmentReport<T>, ModelError> {
    let cs = cumulants_analytic::<T>(inst, CumulantOrder::Third)?;
    let geom = info_geometry(&cs.lam2)?;
    Ok(adjustment_report(&cs, &geom))
}

/// Largest interest-nuisance information entry allowed, relative to the
/// largest entry of `lambda_rs`, for the orthogonal reductions.
pub const ORTHOGONAL_TOL: f64 = 1e-10;

fn check_orthogonal<T: Scalar>(cs: &CumulantSet<T>) -> Result<(), AdjustError> {
    let scale = cs.lam2.max_abs();
    for a in 1..cs.dim() {
        let v = cs.lam2.get(&[0, a]).to_f64();
        if v.abs() > ORTHOGONAL_TOL * scale {
            return Err(AdjustError::NotOrthogonal { index: a + 1, value: v });
        }
    }
    Ok(())
}

/// `lambda^{ab}` over nuisance indices, zero in the interest row and column.
fn nuisance_inverse<T: Scalar>(geom: &InfoGeometry<T>) -> SymTensor<T> {
    let up = &geom.lambda_up;
    SymTensor::from_fn(2, up.dim(), vec![vec![0, 1]], |i| {
        if i[0] == 0 || i[1] == 0 {
            T::zero()
        } else {
            up.get(i).clone()
        }
    })
    .expect("valid shape")
}

/// Orthogonal-parameter form of `g_np`; a cross-check of the general path.
pub fn orthogonal_gnp<T: Scalar>(cs: &CumulantSet<T>, geom: &InfoGeometry<T>) -> Result<T, AdjustError> {
    check_orthogonal(cs)?;
    if cs.dim() == 1 {
        return Ok(T::zero());
    }
    let n = nuisance_inverse(geom);
    let minus_l11 = -cs.lam2.get(&[0, 0]).clone();
    let s = c("^a^b,_a_b_1", &[&n, &cs.lam3]);
    Ok(-(T::half() * s / minus_l11.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BartlettDecomposition<T> {
    pub b: T,
    pub b_inf: T,
    pub b_np: T,
}

struct Lawley<'a, T> {
    lam3: &'a SymTensor<T>,
    lam4: &'a SymTensor<T>,
    dlam2: &'a SymTensor<T>,
    dlam3: &'a SymTensor<T>,
    ddlam2: &'a SymTensor<T>,
}

impl<T: Scalar> Lawley<'_, T> {
    fn new(cs: &CumulantSet<T>) -> Result<Lawley<'_, T>, AdjustError> {
        match (&cs.lam4, &cs.dlam3, &cs.ddlam2) {
            (Some(lam4), Some(dlam3), Some(ddlam2)) => Ok(Lawley { lam3: &cs.lam3, lam4, dlam2: &cs.dlam2, dlam3, ddlam2 }),
            _ => Err(AdjustError::MissingFourthOrder),
        }
    }

    /// `X^{rs} Y^{tu} (lambda_rstu / 4 - lambda_{rst/u} + lambda_{rt/su})`.
    fn p(&self, x: &SymTensor<T>, y: &SymTensor<T>) -> T {
        T::from_ratio(1, 4) * c("^r^s,^t^u,_r_s_t_u", &[x, y, self.lam4]) - c("^r^s,^t^u,_r_s_t_u", &[x, y, self.dlam3])
            + c("^r^s,^t^u,_r_t_s_u", &[x, y, self.ddlam2])
    }

    /// `X^{rs} Y^{tu} Z^{vw} (lambda_rst lambda_uvw / 4 - lambda_rst lambda_{uv/w}
    /// + lambda_{st/r} lambda_{uv/w})`.
    fn k2(&self, x: &SymTensor<T>, y: &SymTensor<T>, z: &SymTensor<T>) -> T {
        T::from_ratio(1, 4) * c("^r^s,^t^u,^v^w,_r_s_t,_u_v_w", &[x, y, z, self.lam3, self.lam3])
            - c("^r^s,^t^u,^v^w,_r_s_t,_u_v_w", &[x, y, z, self.lam3, self.dlam2])
            + c("^r^s,^t^u,^v^w,_s_t_r,_u_v_w", &[x, y, z, self.dlam2, self.dlam2])
    }

    /// `X^{ru} Y^{sw} Z^{tv} (lambda_rst lambda_uvw / 6 - lambda_rst lambda_{uv/w}
    /// + lambda_{rs/t} lambda_{uv/w})`.
    fn k3(&self, x: &SymTensor<T>, y: &SymTensor<T>, z: &SymTensor<T>) -> T {
        T::from_ratio(1, 6) * c("^r^u,^s^w,^t^v,_r_s_t,_u_v_w", &[x, y, z, self.lam3, self.lam3])
            - c("^r^u,^s^w,^t^v,_r_s_t,_u_v_w", &[x, y, z, self.lam3, self.dlam2])
            + c("^r^u,^s^w,^t^v,_r_s_t,_u_v_w", &[x, y, z, self.dlam2, self.dlam2])
    }
}

/// Lawley's `b`, its three-`tau` part `b_inf`, and `b_np = b - b_inf`.
pub fn bartlett_decompose<T: Scalar>(cs: &CumulantSet<T>, geom: &InfoGeometry<T>) -> Result<BartlettDecomposition<T>, AdjustError> {
    let lw = Lawley::new(cs)?;
    let (l, t, n) = (&geom.lambda_up, &geom.tau, &geom.nu);
    let b = lw.p(l, l) - lw.p(n, n) - (lw.k2(l, l, l) - lw.k2(n, n, n)) - (lw.k3(l, l, l) - lw.k3(n, n, n));
    let b_inf = lw.p(t, t) + lw.k2(t, t, t) + lw.k3(t, t, t);
    let b_np = b.clone() - b_inf.clone();
    Ok(BartlettDecomposition { b, b_inf, b_np })
}

/// `b_np` from the explicit nuisance display, grouped as
/// `(ll - tt - nn) P - (lll + ttt - nnn) K2 - (lll + ttt - nnn) K3`.
pub fn b_np_explicit<T: Scalar>(cs: &CumulantSet<T>, geom: &InfoGeometry<T>) -> Result<T, AdjustError> {
    let lw = Lawley::new(cs)?;
    let (l, t, n) = (&geom.lambda_up, &geom.tau, &geom.nu);
    let p = lw.p(l, l) - lw.p(t, t) - lw.p(n, n);
    let k2 = lw.k2(l, l, l) + lw.k2(t, t, t) - lw.k2(n, n, n);
    let k3 = lw.k3(l, l, l) + lw.k3(t, t, t) - lw.k3(n, n, n);
    Ok(p - k2 - k3)
}

type Term<'a, T> = (T, &'a str, Vec<&'a SymTensor<T>>);

/// Orthogonal-parameter form of `b_np`, with `N^{ab}` the inverse of the
/// nuisance block:
///
/// `b_np = G1 / l11 - G2 / l11 - G3 / l11^2`, where `G1` collects the
/// fourth-order terms with one `N`, `G2` the products of third-order arrays
/// with two `N`, and `G3` those with one `N` and two interest indices
/// contracted through `tau^{11} = -1/l11`.
pub fn orthogonal_bnp<T: Scalar>(cs: &CumulantSet<T>, geom: &InfoGeometry<T>) -> Result<T, AdjustError> {
    check_orthogonal(cs)?;
    let lw = Lawley::new(cs)?;
    if cs.dim() == 1 {
        return Ok(T::zero());
    }
    let n = nuisance_inverse(geom);
    let (l3, d2, l4, d3, dd) = (lw.lam3, lw.dlam2, lw.lam4, lw.dlam3, lw.ddlam2);
    let q = T::from_ratio(1, 4);
    let s = T::from_ratio(1, 6);
    let one = T::one();
    let m = -T::one();
    let sum = |prefix: &str, lead: Vec<&SymTensor<T>>, terms: Vec<Term<'_, T>>| -> T {
        terms.into_iter().fold(T::zero(), |acc, (coef, spec, ts)| {
            let mut all = lead.clone();
            all.extend(ts);
            acc + coef * c(&format!("{prefix},{spec}"), &all)
        })
    };

    let g1 = sum(
        "^a^b",
        vec![&n],
        vec![
            (T::half(), "_1_1_a_b", vec![l4]),
            (m.clone(), "_1_1_a_b", vec![d3]),
            (m.clone(), "_1_a_b_1", vec![d3]),
            (T::from_f64(2.0), "_1_a_1_b", vec![dd]),
        ],
    );
    // lambda-lambda, lambda-derivative and derivative-derivative products;
    // an empty `b` means the derivative product uses the slots of `a`
    let pair = |coef: &T, a: &'static str, b: &'static str| -> Vec<Term<'_, T>> {
        vec![
            (coef.clone(), a, vec![l3, l3]),
            (m.clone(), a, vec![l3, d2]),
            (one.clone(), if b.is_empty() { a } else { b }, vec![d2, d2]),
        ]
    };
    let mut g2_terms = Vec::new();
    for (coef, a, b) in [
        (&q, "_1_1_a,_b_c_d", "_1_a_1,_b_c_d"),
        (&q, "_a_b_1,_1_c_d", "_b_1_a,_1_c_d"),
        (&q, "_a_b_c,_d_1_1", "_b_c_a,_d_1_1"),
        (&s, "_1_a_c,_1_d_b", ""),
        (&s, "_a_1_c,_b_d_1", ""),
        (&s, "_a_c_1,_b_1_d", ""),
    ] {
        g2_terms.extend(pair(coef, a, b));
    }
    let g2 = sum("^a^b,^c^d", vec![&n, &n], g2_terms);
    let mut g3_terms = Vec::new();
    for (coef, a, b) in [
        (&q, "_1_1_1,_1_a_b", ""),
        (&q, "_1_1_a,_b_1_1", "_1_a_1,_b_1_1"),
        (&q, "_a_b_1,_1_1_1", "_b_1_a,_1_1_1"),
        (&s, "_1_1_a,_1_b_1", ""),
        (&s, "_1_a_1,_1_1_b", ""),
        (&s, "_a_1_1,_b_1_1", ""),
    ] {
        g3_terms.extend(pair(coef, a, b));
    }
    let g3 = sum("^a^b", vec![&n], g3_terms);
    let l11 = cs.lam2.get(&[0, 0]).clone();
    Ok(g1 / l11.clone() - g2 / l11.clone() - g3 / (l11.clone() * l11))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PivotKind {
    SignedRoot,
    WaldObs,
    WaldExp,
    ScoreObs,
    ScoreExp,
    AdjSignedRoot,
    AdjWald,
    AdjScore,
}

impl PivotKind {
    pub const ALL: [PivotKind; 8] = [
        PivotKind::SignedRoot,
        PivotKind::WaldObs,
        PivotKind::WaldExp,
        PivotKind::ScoreObs,
        PivotKind::ScoreExp,
        PivotKind::AdjSignedRoot,
        PivotKind::AdjWald,
        PivotKind::AdjScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PivotKind::SignedRoot => "signed-root",
            PivotKind::WaldObs => "wald-obs",
            PivotKind::WaldExp => "wald-exp",
            PivotKind::ScoreObs => "score-obs",
            PivotKind::ScoreExp => "score-exp",
            PivotKind::AdjSignedRoot => "adj-signed-root",
            PivotKind::AdjWald => "adj-wald",
            PivotKind::AdjScore => "adj-score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotCumulants {
    pub pivot_kind: PivotKind,
    pub kappa1: f64,
    pub kappa3: f64,
}

/// Leading-order mean and third cumulant of a pivot.
pub fn pivot_cumulants(report: &AdjustmentReport<f64>, kind: PivotKind) -> PivotCumulants {
    let (gi, gn, d) = (report.g_inf, report.g_np, report.d_quant);
    let (kappa1, kappa3) = match kind {
        PivotKind::SignedRoot => (-(gi + gn), 0.0),
        PivotKind::WaldObs | PivotKind::WaldExp => (-(gi + gn + d), -6.0 * d),
        PivotKind::ScoreObs | PivotKind::ScoreExp => (-(gi + gn - 2.0 * d), 12.0 * d),
        PivotKind::AdjSignedRoot => (-gi, 0.0),
        PivotKind::AdjWald => (-(gi + d), -6.0 * d),
        PivotKind::AdjScore => (-(gi - 2.0 * d), 12.0 * d),
    };
    PivotCumulants { pivot_kind: kind, kappa1, kappa3 }
}

/// `t - kappa3 t^2 / 6 - kappa1 + kappa3 / 6`.
pub fn cornish_fisher(t: f64, pc: &PivotCumulants) -> f64 {
    t - pc.kappa3 * t * t / 6.0 - pc.kappa1 + pc.kappa3 / 6.0
}

/// Leading bias of the interest estimate, `-(2 g_inf + g_np - d) eta^{-1/2}`.
pub fn mle_mean_expansion(report: &AdjustmentReport<f64>) -> f64 {
    -(2.0 * report.g_inf + report.g_np - report.d_quant) / report.eta.sqrt()
}

/// Leading mean of the profile score at the true value, `-eta^{1/2} g_np`.
pub fn profile_score_mean(report: &AdjustmentReport<f64>) -> f64 {
    -report.eta.sqrt() * report.g_np
}

/// Values of `g_np` over a set of parameter points, and whether they agree
/// to `tol` relative to their largest magnitude.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridVariation {
    pub g_np: Vec<f64>,
    pub max_relative_spread: f64,
    pub constant: bool,
}

pub fn gnp_variation(inst: &ModelInstance, thetas: &[Vec<f64>], tol: f64) -> Result<GridVariation, ModelError> {
    let mut g_np = Vec::with_capacity(thetas.len());
    for th in thetas {
        g_np.push(report_at::<f64>(&inst.with_theta(th.clone())?)?.g_np);
    }
    let hi = g_np.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = g_np.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = g_np.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-300);
    let spread = if g_np.is_empty() { 0.0 } else { (hi - lo) / scale };
    Ok(GridVariation { g_np, max_relative_spread: spread, constant: spread <= tol })
}
