//! Expected log-likelihood derivative arrays ("lambda arrays") at a parameter
//! point: analytic for every built-in model, finite differences of analytic
//! arrays for the derivative arrays on request, or Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{substream, GroupSpec, LikelihoodKernel, Model, ModelDef, ModelError, ModelInstance};
use crate::jet::Jet;
use crate::scalar::Scalar;
use crate::tensor::SymTensor;

/// Highest derivative order needed downstream. `Third` suffices for the
/// adjustment report; the Bartlett decomposition needs `Fourth`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CumulantOrder {
    Third,
    Fourth,
}

impl CumulantOrder {
    fn jet_order(self) -> usize {
        match self {
            CumulantOrder::Third => 3,
            CumulantOrder::Fourth => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    /// Analytic arrays; derivative arrays by central differences of them.
    AnalyticFiniteDifference,
    MonteCarlo,
}

/// Elementwise mean and standard error of a Monte Carlo identity residual.
#[derive(Clone, Debug)]
pub struct McResidual {
    pub mean: SymTensor<f64>,
    pub se: SymTensor<f64>,
}

/// Standard errors of every Monte Carlo array, same shapes as the estimates.
#[derive(Clone, Debug)]
pub struct McStandardErrors {
    pub lam2: SymTensor<f64>,
    pub lam3: SymTensor<f64>,
    pub lam4: Option<SymTensor<f64>>,
    pub lam21: SymTensor<f64>,
    pub lam111: SymTensor<f64>,
    pub lam11: SymTensor<f64>,
    pub dlam2: SymTensor<f64>,
    pub dlam3: Option<SymTensor<f64>>,
    pub ddlam2: Option<SymTensor<f64>>,
}

#[derive(Clone, Debug)]
pub struct McMeta {
    pub reps: usize,
    pub seed: u64,
    pub step_first: Vec<f64>,
    pub step_second: Vec<f64>,
    pub se: McStandardErrors,
    /// `lambda_rs + lambda_{r,s}`.
    pub bartlett1: McResidual,
    /// `lambda_rst + lambda_{rs,t} + lambda_{rt,s} + lambda_{st,r} + lambda_{r,s,t}`.
    pub bartlett2: McResidual,
    /// `lambda_{rs/t} - lambda_rst - lambda_{rs,t}`.
    pub derivative: McResidual,
}

/// All lambda arrays at one parameter point. Index 0 is the interest
/// parameter.
///
/// Slot conventions: `lam21[r,s,t] = lambda_{rs,t}`, `dlam2[r,s,t]` is the
/// derivative of `lambda_rs` in `theta^t`, `dlam3[r,s,t,u]` that of
/// `lambda_rst` in `theta^u`, and `ddlam2[r,s,t,u]` the second derivative of
/// `lambda_rs` in `theta^t, theta^u`.
#[derive(Clone, Debug)]
pub struct CumulantSet<T> {
    pub lam2: SymTensor<T>,
    pub lam3: SymTensor<T>,
    pub lam4: Option<SymTensor<T>>,
    pub lam21: SymTensor<T>,
    pub lam111: SymTensor<T>,
    pub lam11: SymTensor<T>,
    pub dlam2: SymTensor<T>,
    pub dlam3: Option<SymTensor<T>>,
    pub ddlam2: Option<SymTensor<T>>,
    pub provenance: Provenance,
    pub mc_meta: Option<McMeta>,
}

impl<T: Scalar> CumulantSet<T> {
    pub fn dim(&self) -> usize {
        self.lam2.dim()
    }

    pub fn has_fourth_order(&self) -> bool {
        self.lam4.is_some() && self.dlam3.is_some() && self.ddlam2.is_some()
    }

    pub fn to_f64(&self) -> CumulantSet<f64> {
        CumulantSet {
            lam2: self.lam2.to_f64(),
            lam3: self.lam3.to_f64(),
            lam4: self.lam4.as_ref().map(|t| t.to_f64()),
            lam21: self.lam21.to_f64(),
            lam111: self.lam111.to_f64(),
            lam11: self.lam11.to_f64(),
            dlam2: self.dlam2.to_f64(),
            dlam3: self.dlam3.as_ref().map(|t| t.to_f64()),
            ddlam2: self.ddlam2.as_ref().map(|t| t.to_f64()),
            provenance: self.provenance,
            mc_meta: self.mc_meta.clone(),
        }
    }
}

pub(crate) fn sym(order: usize) -> Vec<Vec<usize>> {
    vec![(0..order).collect()]
}

pub(crate) fn pair_then_one() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2]]
}

pub(crate) fn triple_then_one() -> Vec<Vec<usize>> {
    vec![vec![0, 1, 2], vec![3]]
}

pub(crate) fn pair_pair() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2, 3]]
}

// ---------------------------------------------------------------------------
// Analytic provider

/// Global accumulators in row-major layout.
struct Acc<T> {
    d: usize,
    lam2: Vec<T>,
    lam3: Vec<T>,
    lam4: Vec<T>,
    lam21: Vec<T>,
    lam111: Vec<T>,
    lam11: Vec<T>,
    lam31: Vec<T>,
    ddlam2: Vec<T>,
}

impl<T: Scalar> Acc<T> {
    fn new(d: usize, fourth: bool) -> Self {
        let z = |p: u32| vec![T::zero(); d.pow(p)];
        let z4 = || if fourth { z(4) } else { Vec::new() };
        Acc { d, lam2: z(2), lam3: z(3), lam4: z4(), lam21: z(3), lam111: z(3), lam11: z(2), lam31: z4(), ddlam2: z4() }
    }
}

/// Adds `scale * local` (an `m^p` row-major array over `support`) into the
/// global `d^p` array `dst`.
fn scatter_add<T: Scalar>(dst: &mut [T], d: usize, support: &[usize], p: usize, local: &[T], scale: &T) {
    let m = support.len();
    let mut digits = vec![0usize; p];
    for (flat, v) in local.iter().enumerate() {
        let mut f = flat;
        for slot in digits.iter_mut().rev() {
            *slot = f % m;
            f /= m;
        }
        let off = digits.iter().fold(0, |acc, &a| acc * d + support[a]);
        dst[off] = dst[off].clone() + scale.clone() * v.clone();
    }
}

fn group_contribution<T: Scalar>(
    model: &Model,
    g: usize,
    spec: &GroupSpec,
    theta: &[f64],
    order: CumulantOrder,
    acc: &mut Acc<T>,
) -> Result<(), ModelError> {
    let ord = order.jet_order();
    let fourth = order == CumulantOrder::Fourth;
    let support = &spec.support;
    let m = support.len();
    let point: Vec<T> = support.iter().map(|&i| T::from_f64(theta[i])).collect();
    let local = Jet::variables(ord, &point);
    let eta = model.natural(g, &local);
    let eta_f: Vec<f64> = eta.iter().map(|e| e.value().to_f64()).collect();
    if !spec.family.valid(&eta_f) {
        return Err(ModelError::Numeric(format!("natural parameter {eta_f:?} invalid in group {g}")));
    }
    let a = spec.family.log_partition(&eta);
    let eta_vals: Vec<T> = eta.iter().map(|e| e.value().clone()).collect();
    let (mu, cov, k3) = spec.family.stat_cumulants(&eta_vals);
    let k = eta.len();
    let n_obs = T::from_usize(spec.n_obs);

    // expected derivatives of one observation's log-likelihood
    let mean_arr = |p: usize| -> Vec<T> {
        let ap = a.deriv(p);
        (0..ap.len())
            .map(|i| {
                let mut v = -ap[i].clone();
                for j in 0..k {
                    v = v + eta[j].deriv(p)[i].clone() * mu[j].clone();
                }
                v
            })
            .collect()
    };
    let d1: Vec<&[T]> = eta.iter().map(|e| e.d1()).collect();
    let d2: Vec<&[T]> = eta.iter().map(|e| e.d2()).collect();
    // E1_j = sum_k C_jk D1_k
    let e1: Vec<Vec<T>> = (0..k)
        .map(|j| {
            (0..m)
                .map(|t| (0..k).fold(T::zero(), |s, l| s + cov[j * k + l].clone() * d1[l][t].clone()))
                .collect()
        })
        .collect();
    // F_j[t,u] = sum_{a,b} k3_jab D1_a[t] D1_b[u]
    let f: Vec<Vec<T>> = (0..k)
        .map(|j| {
            let mut out = vec![T::zero(); m * m];
            for x in 0..k {
                for y in 0..k {
                    let c = &k3[(j * k + x) * k + y];
                    if c.is_zero() {
                        continue;
                    }
                    for t in 0..m {
                        let ct = c.clone() * d1[x][t].clone();
                        for u in 0..m {
                            out[t * m + u] = out[t * m + u].clone() + ct.clone() * d1[y][u].clone();
                        }
                    }
                }
            }
            out
        })
        .collect();

    // outer product contraction over the statistic index
    let outer = |left: &[&[T]], right: &[Vec<T>]| -> Vec<T> {
        let (nl, nr) = (left[0].len(), right[0].len());
        let mut out = vec![T::zero(); nl * nr];
        for j in 0..k {
            for x in 0..nl {
                let lx = &left[j][x];
                if lx.is_zero() {
                    continue;
                }
                for y in 0..nr {
                    out[x * nr + y] = out[x * nr + y].clone() + lx.clone() * right[j][y].clone();
                }
            }
        }
        out
    };

    let l2 = mean_arr(2);
    let l3 = mean_arr(3);
    let l11 = outer(&d1, &e1);
    let l21 = outer(&d2, &e1);
    let l111 = outer(&d1, &f);
    let d = acc.d;
    scatter_add(&mut acc.lam2, d, support, 2, &l2, &n_obs);
    scatter_add(&mut acc.lam3, d, support, 3, &l3, &n_obs);
    scatter_add(&mut acc.lam11, d, support, 2, &l11, &n_obs);
    scatter_add(&mut acc.lam21, d, support, 3, &l21, &n_obs);
    scatter_add(&mut acc.lam111, d, support, 3, &l111, &n_obs);

    if fourth {
        let d3: Vec<&[T]> = eta.iter().map(|e| e.d3()).collect();
        let l4 = mean_arr(4);
        let l31 = outer(&d3, &e1);
        let e2: Vec<Vec<T>> = (0..k)
            .map(|j| {
                (0..m * m)
                    .map(|tu| (0..k).fold(T::zero(), |s, l| s + cov[j * k + l].clone() * d2[l][tu].clone()))
                    .collect()
            })
            .collect();
        let l22 = outer(&d2, &e2);
        let l211 = outer(&d2, &f);
        // second derivative of lambda_rs per observation:
        // lambda_rstu + lambda_{rst,u} + lambda_{rsu,t} + lambda_{rs,tu} + kappa(L_rs, L_t, L_u)
        let m2 = m * m;
        let mut dd = vec![T::zero(); m2 * m2];
        for rs in 0..m2 {
            for t in 0..m {
                for u in 0..m {
                    let o = rs * m2 + t * m + u;
                    dd[o] = l4[o].clone()
                        + l31[(rs * m + t) * m + u].clone()
                        + l31[(rs * m + u) * m + t].clone()
                        + l22[o].clone()
                        + l211[o].clone();
                }
            }
        }
        scatter_add(&mut acc.lam4, d, support, 4, &l4, &n_obs);
        scatter_add(&mut acc.lam31, d, support, 4, &l31, &n_obs);
        scatter_add(&mut acc.ddlam2, d, support, 4, &dd, &n_obs);
    }
    Ok(())
}

/// Analytic cumulant arrays, exact over any [`Scalar`] up to the accuracy
/// of the transcendental helpers at order zero.
pub fn cumulants_analytic<T: Scalar>(inst: &ModelInstance, order: CumulantOrder) -> Result<CumulantSet<T>, ModelError> {
    let model = &inst.model;
    model.check_theta(&inst.theta)?;
    let d = model.dim();
    let fourth = order == CumulantOrder::Fourth;
    let mut acc = Acc::<T>::new(d, fourth);
    for (g, spec) in model.groups().iter().enumerate() {
        group_contribution(model, g, spec, &inst.theta, order, &mut acc)?;
    }
    let t = |p: usize, groups: Vec<Vec<usize>>, v: Vec<T>| SymTensor::from_vec(p, d, groups, v);
    let dlam2: Vec<T> = acc.lam3.iter().zip(&acc.lam21).map(|(a, b)| a.clone() + b.clone()).collect();
    let (lam4, dlam3, ddlam2) = if fourth {
        let dlam3: Vec<T> = acc.lam4.iter().zip(&acc.lam31).map(|(a, b)| a.clone() + b.clone()).collect();
        (
            Some(t(4, sym(4), acc.lam4)?),
            Some(t(4, triple_then_one(), dlam3)?),
            Some(t(4, pair_pair(), acc.ddlam2)?),
        )
    } else {
        (None, None, None)
    };
    let out = CumulantSet {
        lam2: t(2, sym(2), acc.lam2)?,
        lam3: t(3, sym(3), acc.lam3)?,
        lam4,
        lam21: t(3, pair_then_one(), acc.lam21)?,
        lam111: t(3, sym(3), acc.lam111)?,
        lam11: t(2, sym(2), acc.lam11)?,
        dlam2: t(3, pair_then_one(), dlam2)?,
        dlam3,
        ddlam2,
        provenance: Provenance::Analytic,
        mc_meta: None,
    };
    let finite = out.lam2.data().iter().chain(out.lam3.data()).chain(out.lam21.data()).all(|x| x.is_finite());
    if !finite {
        return Err(ModelError::Numeric("non-finite cumulant array".into()));
    }
    Ok(out)
}

/// Default central-difference steps: `eps^(1/3) max(1, |theta|)` for first
/// and `eps^(1/4) max(1, |theta|)` for second differences.
pub fn default_steps(theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let e3 = f64::EPSILON.cbrt();
    let e4 = f64::EPSILON.powf(0.25);
    (
        theta.iter().map(|t| e3 * t.abs().max(1.0)).collect(),
        theta.iter().map(|t| e4 * t.abs().max(1.0)).collect(),
    )
}

fn shifted(theta: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut t = theta.to_vec();
    for &(i, h) in moves {
        t[i] += h;
    }
    t
}

/// Analytic arrays with the derivative arrays replaced by central differences
/// of analytic `lambda_rs` and `lambda_rst`, using the given steps.
pub fn cumulants_fd_with_steps(
    inst: &ModelInstance,
    order: CumulantOrder,
    h1: &[f64],
    h2: &[f64],
) -> Result<CumulantSet<f64>, ModelError> {
    let base = cumulants_analytic::<f64>(inst, order)?;
    let d = inst.d();
    let at = |moves: &[(usize, f64)], ord: CumulantOrder| {
        cumulants_analytic::<f64>(&inst.with_theta(shifted(&inst.theta, moves))?, ord)
    };
    let mut dlam2 = vec![0.0; d * d * d];
    let mut dlam3 = vec![0.0; d.pow(4)];
    let mut dd = vec![0.0; d.pow(4)];
    let fourth = order == CumulantOrder::Fourth;
    for t in 0..d {
        let plus = at(&[(t, h1[t])], CumulantOrder::Third)?;
        let minus = at(&[(t, -h1[t])], CumulantOrder::Third)?;
        for rs in 0..d * d {
            dlam2[rs * d + t] = (plus.lam2.data()[rs] - minus.lam2.data()[rs]) / (2.0 * h1[t]);
        }
        if fourth {
            for rst in 0..d * d * d {
                dlam3[rst * d + t] = (plus.lam3.data()[rst] - minus.lam3.data()[rst]) / (2.0 * h1[t]);
            }
            let p2 = at(&[(t, h2[t])], CumulantOrder::Third)?;
            let m2 = at(&[(t, -h2[t])], CumulantOrder::Third)?;
            for rs in 0..d * d {
                let v = (p2.lam2.data()[rs] - 2.0 * base.lam2.data()[rs] + m2.lam2.data()[rs]) / (h2[t] * h2[t]);
                dd[rs * d * d + t * d + t] = v;
            }
            for u in 0..t {
                let c = |a: f64, b: f64| at(&[(t, a * h2[t]), (u, b * h2[u])], CumulantOrder::Third);
                let (pp, pm, mp, mm) = (c(1.0, 1.0)?, c(1.0, -1.0)?, c(-1.0, 1.0)?, c(-1.0, -1.0)?);
                for rs in 0..d * d {
                    let v = (pp.lam2.data()[rs] - pm.lam2.data()[rs] - mp.lam2.data()[rs] + mm.lam2.data()[rs])
                        / (4.0 * h2[t] * h2[u]);
                    dd[rs * d * d + t * d + u] = v;
                    dd[rs * d * d + u * d + t] = v;
                }
            }
        }
    }
    Ok(CumulantSet {
        dlam2: SymTensor::from_vec(3, d, pair_then_one(), dlam2)?,
        dlam3: if fourth { Some(SymTensor::from_vec(4, d, triple_then_one(), dlam3)?) } else { None },
        ddlam2: if fourth { Some(SymTensor::from_vec(4, d, pair_pair(), dd)?) } else { None },
        provenance: Provenance::AnalyticFiniteDifference,
        ..base
    })
}

pub fn cumulants_fd(inst: &ModelInstance, order: CumulantOrder) -> Result<CumulantSet<f64>, ModelError> {
    let (h1, h2) = default_steps(&inst.theta);
    cumulants_fd_with_steps(inst, order, &h1, &h2)
}

// ---------------------------------------------------------------------------
// Monte Carlo provider

pub const MIN_MC_REPS: usize = 1000;
const CHUNK: usize = 256;

/// Offsets of each per-replicate quantity inside the flat accumulator.
struct Layout {
    d: usize,
    fourth: bool,
    parts: Vec<(Part, usize, usize)>,
    len: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Part {
    L2,
    L3,
    L4,
    L21,
    L11,
    L111,
    DL2,
    DL3,
    DDL2,
    Res1,
    Res2,
    Res3,
}

impl Layout {
    fn new(d: usize, fourth: bool) -> Self {
        let mut parts = Vec::new();
        let mut off = 0;
        let mut push = |p: Part, order: u32| {
            parts.push((p, off, d.pow(order)));
            off += d.pow(order);
        };
        push(Part::L2, 2);
        push(Part::L3, 3);
        push(Part::L21, 3);
        push(Part::L11, 2);
        push(Part::L111, 3);
        push(Part::DL2, 3);
        push(Part::Res1, 2);
        push(Part::Res2, 3);
        push(Part::Res3, 3);
        if fourth {
            push(Part::L4, 4);
            push(Part::DL3, 4);
            push(Part::DDL2, 4);
        }
        Layout { d, fourth, parts, len: off }
    }

    fn range(&self, p: Part) -> std::ops::Range<usize> {
        let (_, o, l) = self.parts.iter().find(|x| x.0 == p).copied().unwrap();
        o..o + l
    }
}

struct Stencil {
    base: LikelihoodKernel,
    /// `(plus, minus)` kernels at `theta +- h1 e_t`.
    first: Vec<(Vec<f64>, LikelihoodKernel, Vec<f64>, LikelihoodKernel)>,
    /// Kernels at `theta +- h2 e_t`.
    second: Vec<(Vec<f64>, LikelihoodKernel, Vec<f64>, LikelihoodKernel)>,
    /// Corner kernels for `t > u`: `++, +-, -+, --`.
    corners: Vec<(usize, usize, Vec<(Vec<f64>, LikelihoodKernel)>)>,
}

fn per_replicate(
    model: &Model,
    theta: &[f64],
    stencil: &Stencil,
    layout: &Layout,
    h1: &[f64],
    h2: &[f64],
    seed: u64,
    index: u64,
    out: &mut [f64],
) -> Result<(), ModelError> {
    let d = layout.d;
    let eval = |th: &[f64], k: &LikelihoodKernel| -> Vec<Vec<f64>> {
        let mut rng = substream(seed, index);
        let data = model.sample_with(th, &mut rng);
        k.eval(&model.suff_stats(&data))
    };
    let base = eval(theta, &stencil.base);
    if base.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ModelError::Numeric(format!("non-finite likelihood derivatives in replicate {index}")));
    }
    let (l1, l2, l3) = (&base[1], &base[2], &base[3]);
    out[layout.range(Part::L2)].copy_from_slice(l2);
    out[layout.range(Part::L3)].copy_from_slice(l3);
    let r21 = layout.range(Part::L21).start;
    let r11 = layout.range(Part::L11).start;
    let r111 = layout.range(Part::L111).start;
    let res1 = layout.range(Part::Res1).start;
    let res2 = layout.range(Part::Res2).start;
    for r in 0..d {
        for s in 0..d {
            out[r11 + r * d + s] = l1[r] * l1[s];
            out[res1 + r * d + s] = l2[r * d + s] + l1[r] * l1[s];
            for t in 0..d {
                let o = (r * d + s) * d + t;
                out[r21 + o] = l2[r * d + s] * l1[t];
                out[r111 + o] = l1[r] * l1[s] * l1[t];
                out[res2 + o] = l3[o]
                    + l2[r * d + s] * l1[t]
                    + l2[r * d + t] * l1[s]
                    + l2[s * d + t] * l1[r]
                    + l1[r] * l1[s] * l1[t];
            }
        }
    }
    let rd2 = layout.range(Part::DL2).start;
    let res3 = layout.range(Part::Res3).start;
    let (rd3, rdd) = if layout.fourth {
        out[layout.range(Part::L4)].copy_from_slice(&base[4]);
        (layout.range(Part::DL3).start, layout.range(Part::DDL2).start)
    } else {
        (0, 0)
    };
    for (t, (tp, kp, tm, km)) in stencil.first.iter().enumerate() {
        let p = eval(tp, kp);
        let m = eval(tm, km);
        for rs in 0..d * d {
            let v = (p[2][rs] - m[2][rs]) / (2.0 * h1[t]);
            out[rd2 + rs * d + t] = v;
            out[res3 + rs * d + t] = v - l3[rs * d + t] - l2[rs] * l1[t];
        }
        if layout.fourth {
            for rst in 0..d * d * d {
                out[rd3 + rst * d + t] = (p[3][rst] - m[3][rst]) / (2.0 * h1[t]);
            }
        }
    }
    if layout.fourth {
        for (t, (tp, kp, tm, km)) in stencil.second.iter().enumerate() {
            let p = eval(tp, kp);
            let m = eval(tm, km);
            for rs in 0..d * d {
                out[rdd + rs * d * d + t * d + t] = (p[2][rs] - 2.0 * l2[rs] + m[2][rs]) / (h2[t] * h2[t]);
            }
        }
        for (t, u, ks) in &stencil.corners {
            let v: Vec<Vec<Vec<f64>>> = ks.iter().map(|(th, k)| eval(th, k)).collect();
            for rs in 0..d * d {
                let x = (v[0][2][rs] - v[1][2][rs] - v[2][2][rs] + v[3][2][rs]) / (4.0 * h2[*t] * h2[*u]);
                out[rdd + rs * d * d + t * d + u] = x;
                out[rdd + rs * d * d + u * d + t] = x;
            }
        }
    }
    Ok(())
}

/// Monte Carlo cumulant arrays from `reps` datasets drawn at `theta`.
///
/// Replicate `i` uses substream `i` of `seed`; the derivative arrays difference
/// per-replicate estimators at perturbed parameters drawn from the same
/// substream, so every quantity has a per-replicate contribution and an
/// empirical standard error. Accumulation is in fixed-size chunks reduced in
/// replicate order, so results do not depend on the number of workers.
pub fn cumulants_mc(
    inst: &ModelInstance,
    order: CumulantOrder,
    reps: usize,
    seed: u64,
) -> Result<CumulantSet<f64>, ModelError> {
    if reps < MIN_MC_REPS {
        return Err(ModelError::Config(format!("Monte Carlo cumulants need at least {MIN_MC_REPS} replicates, got {reps}")));
    }
    let model = &inst.model;
    let theta = &inst.theta;
    model.check_theta(theta)?;
    let d = model.dim();
    let fourth = order == CumulantOrder::Fourth;
    let layout = Layout::new(d, fourth);
    let (h1, h2) = default_steps(theta);
    let kernel = |th: &[f64], ord: usize| -> Result<LikelihoodKernel, ModelError> { LikelihoodKernel::new(model, th, ord) };
    let first_order = if fourth { 3 } else { 2 };
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut corners = Vec::new();
    for t in 0..d {
        let tp = shifted(theta, &[(t, h1[t])]);
        let tm = shifted(theta, &[(t, -h1[t])]);
        first.push((tp.clone(), kernel(&tp, first_order)?, tm.clone(), kernel(&tm, first_order)?));
        if fourth {
            let tp = shifted(theta, &[(t, h2[t])]);
            let tm = shifted(theta, &[(t, -h2[t])]);
            second.push((tp.clone(), kernel(&tp, 2)?, tm.clone(), kernel(&tm, 2)?));
            for u in 0..t {
                let mut ks = Vec::new();
                for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let th = shifted(theta, &[(t, a * h2[t]), (u, b * h2[u])]);
                    let k = kernel(&th, 2)?;
                    ks.push((th, k));
                }
                corners.push((t, u, ks));
            }
        }
    }
    let stencil = Stencil { base: kernel(theta, if fourth { 4 } else { 3 })?, first, second, corners };

    let n_chunks = reps.div_ceil(CHUNK);
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>), ModelError>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; layout.len];
            let mut sumsq = vec![0.0; layout.len];
            let mut buf = vec![0.0; layout.len];
            for i in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                per_replicate(model, theta, &stencil, &layout, &h1, &h2, seed, i as u64, &mut buf)?;
                for ((s, q), x) in sum.iter_mut().zip(sumsq.iter_mut()).zip(&buf) {
                    *s += x;
                    *q += x * x;
                }
            }
            Ok((sum, sumsq))
        })
        .collect();
    let mut sum = vec![0.0; layout.len];
    let mut sumsq = vec![0.0; layout.len];
    for ch in chunks {
        let (s, q) = ch?;
        for i in 0..layout.len {
            sum[i] += s[i];
            sumsq[i] += q[i];
        }
    }
    let b = reps as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / b).collect();
    let se: Vec<f64> = sum
        .iter()
        .zip(&sumsq)
        .map(|(s, q)| {
            let m = s / b;
            ((q / b - m * m).max(0.0) * b / (b - 1.0) / b).sqrt()
        })
        .collect();
    let tensor = |src: &[f64], p: Part, order: usize, groups: Vec<Vec<usize>>| {
        SymTensor::from_vec(order, d, groups, src[layout.range(p)].to_vec())
    };
    let both = |p: Part, order: usize, groups: Vec<Vec<usize>>| -> Result<(SymTensor<f64>, SymTensor<f64>), ModelError> {
        Ok((tensor(&mean, p, order, groups.clone())?, tensor(&se, p, order, groups)?))
    };
    let (lam2, se2) = both(Part::L2, 2, sym(2))?;
    let (lam3, se3) = both(Part::L3, 3, sym(3))?;
    let (lam21, se21) = both(Part::L21, 3, pair_then_one())?;
    let (lam11, se11) = both(Part::L11, 2, sym(2))?;
    let (lam111, se111) = both(Part::L111, 3, sym(3))?;
    let (dlam2, sed2) = both(Part::DL2, 3, pair_then_one())?;
    let (r1, r1se) = both(Part::Res1, 2, sym(2))?;
    let (r2, r2se) = both(Part::Res2, 3, sym(3))?;
    let (r3, r3se) = both(Part::Res3, 3, pair_then_one())?;
    let (lam4, dlam3, ddlam2, se4, sed3, sedd) = if fourth {
        let (a, sa) = both(Part::L4, 4, sym(4))?;
        let (b, sb) = both(Part::DL3, 4, triple_then_one())?;
        let (c, sc) = both(Part::DDL2, 4, pair_pair())?;
        (Some(a), Some(b), Some(c), Some(sa), Some(sb), Some(sc))
    } else {
        (None, None, None, None, None, None)
    };
    Ok(CumulantSet {
        lam2,
        lam3,
        lam4,
        lam21,
        lam111,
        lam11,
        dlam2,
        dlam3,
        ddlam2,
        provenance: Provenance::MonteCarlo,
        mc_meta: Some(McMeta {
            reps,
            seed,
            step_first: h1,
            step_second: h2,
            se: McStandardErrors {
                lam2: se2,
                lam3: se3,
                lam4: se4,
                lam21: se21,
                lam111: se111,
                lam11: se11,
                dlam2: sed2,
                dlam3: sed3,
                ddlam2: sedd,
            },
            bartlett1: McResidual { mean: r1, se: r1se },
            bartlett2: McResidual { mean: r2, se: r2se },
            derivative: McResidual { mean: r3, se: r3se },
        }),
    })
}

// ---------------------------------------------------------------------------
// Validation

/// Tolerance for identities on analytic arrays, relative to the largest
/// entry involved.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Number of standard errors allowed for Monte Carlo comparisons.
pub const MC_SE_MULTIPLE: f64 = 4.0;
/// Multiple of `eps |lambda| / h^k` allowed for differenced arrays in
/// [`check_agreement`].
pub const ROUNDING_MULTIPLE: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    /// Largest absolute residual.
    pub max_residual: f64,
    /// Largest entry of the arrays involved.
    pub scale: f64,
    /// Largest residual in standard errors (Monte Carlo only).
    pub max_z: Option<f64>,
    pub pass: bool,
}

fn analytic_check(name: &str, residual: &SymTensor<f64>, scale: f64) -> IdentityCheck {
    let max_residual = residual.max_abs();
    IdentityCheck { name: name.into(), max_residual, scale, max_z: None, pass: max_residual <= ANALYTIC_TOL * scale.max(1e-300) }
}

/// Residual check against standard errors. Entries with zero standard error
/// (nonrandom derivatives) must vanish to rounding relative to `scale`.
fn mc_check(name: &str, residual: &SymTensor<f64>, se: &SymTensor<f64>, scale: f64) -> IdentityCheck {
    mc_check_floor(name, residual, se, scale, 1e-9 * scale)
}

fn mc_check_floor(name: &str, residual: &SymTensor<f64>, se: &SymTensor<f64>, scale: f64, floor: f64) -> IdentityCheck {
    let mut max_z: f64 = 0.0;
    let mut pass = true;
    for (r, s) in residual.data().iter().zip(se.data()) {
        if r.abs() > MC_SE_MULTIPLE * s + floor {
            pass = false;
        }
        if *s > 0.0 {
            max_z = max_z.max(r.abs() / s);
        }
    }
    IdentityCheck { name: name.into(), max_residual: residual.max_abs(), scale, max_z: Some(max_z), pass }
}

fn bartlett2_residual(cs: &CumulantSet<f64>) -> SymTensor<f64> {
    let d = cs.dim();
    SymTensor::from_fn(3, d, sym(3), |i| {
        let (r, s, t) = (i[0], i[1], i[2]);
        cs.lam3.get(&[r, s, t])
            + cs.lam21.get(&[r, s, t])
            + cs.lam21.get(&[r, t, s])
            + cs.lam21.get(&[s, t, r])
            + cs.lam111.get(&[r, s, t])
    })
    .expect("valid shape")
}

/// Both Bartlett identities and `lambda_{rs/t} = lambda_rst + lambda_{rs,t}`.
/// Analytic sets are held to [`ANALYTIC_TOL`]; Monte Carlo sets to
/// [`MC_SE_MULTIPLE`] standard errors of the per-replicate residuals.
pub fn check_identities(cs: &CumulantSet<f64>) -> Vec<IdentityCheck> {
    let scale2 = cs.lam2.max_abs().max(cs.lam11.max_abs());
    let scale3 = [cs.lam3.max_abs(), cs.lam21.max_abs(), cs.lam111.max_abs(), cs.dlam2.max_abs()]
        .into_iter()
        .fold(0.0, f64::max);
    match &cs.mc_meta {
        Some(meta) => vec![
            mc_check("bartlett-1", &meta.bartlett1.mean, &meta.bartlett1.se, scale2),
            mc_check("bartlett-2", &meta.bartlett2.mean, &meta.bartlett2.se, scale3),
            mc_check("derivative", &meta.derivative.mean, &meta.derivative.se, scale3),
        ],
        None => {
            let r1 = cs.lam2.axpy(&1.0, &cs.lam11);
            let r3 = cs.dlam2.axpy(&-1.0, &cs.lam21);
            let r3 = SymTensor::from_fn(3, cs.dim(), pair_then_one(), |i| r3.get(i) - cs.lam3.get(i)).expect("valid shape");
            vec![
                analytic_check("bartlett-1", &r1, scale2),
                analytic_check("bartlett-2", &bartlett2_residual(cs), scale3),
                analytic_check("derivative", &r3, scale3),
            ]
        }
    }
}

/// Elementwise agreement of a Monte Carlo set with a reference set, within
/// [`MC_SE_MULTIPLE`] standard errors.
pub fn check_agreement(mc: &CumulantSet<f64>, reference: &CumulantSet<f64>) -> Result<Vec<IdentityCheck>, ModelError> {
    let meta = mc.mc_meta.as_ref().ok_or_else(|| ModelError::Config("first argument is not a Monte Carlo set".into()))?;
    let se = &meta.se;
    // Differenced arrays carry rounding of order eps * |lambda| / h^k.
    let min = |h: &[f64]| h.iter().copied().fold(f64::INFINITY, f64::min);
    let rounding = |base: f64, h: f64, k: i32| ROUNDING_MULTIPLE * f64::EPSILON * base / h.powi(k);
    let (b2, b3) = (reference.lam2.max_abs(), reference.lam3.max_abs());
    let (h1, h2) = (min(&meta.step_first), min(&meta.step_second));
    let mut out = Vec::new();
    let mut cmp = |name: &str, a: &SymTensor<f64>, b: &SymTensor<f64>, s: &SymTensor<f64>, extra: f64| {
        let diff = a.axpy(&-1.0, b);
        let scale = a.max_abs().max(b.max_abs());
        out.push(mc_check_floor(name, &diff, s, scale, (1e-9 * scale).max(extra)));
    };
    cmp("lam2", &mc.lam2, &reference.lam2, &se.lam2, 0.0);
    cmp("lam3", &mc.lam3, &reference.lam3, &se.lam3, 0.0);
    cmp("lam21", &mc.lam21, &reference.lam21, &se.lam21, 0.0);
    cmp("lam11", &mc.lam11, &reference.lam11, &se.lam11, 0.0);
    cmp("lam111", &mc.lam111, &reference.lam111, &se.lam111, 0.0);
    cmp("dlam2", &mc.dlam2, &reference.dlam2, &se.dlam2, rounding(b2, h1, 1));
    if let (Some(a), Some(b), Some(s)) = (&mc.lam4, &reference.lam4, &se.lam4) {
        cmp("lam4", a, b, s, 0.0);
    }
    if let (Some(a), Some(b), Some(s)) = (&mc.dlam3, &reference.dlam3, &se.dlam3) {
        cmp("dlam3", a, b, s, rounding(b3, h1, 1));
    }
    if let (Some(a), Some(b), Some(s)) = (&mc.ddlam2, &reference.ddlam2, &se.ddlam2) {
        cmp("ddlam2", a, b, s, rounding(b2, h2, 2));
    }
    Ok(out)
}

/// Reference for [`check_agreement`]: analytic arrays, with the derivative
/// arrays differenced at the Monte Carlo set's own steps so both carry the
/// same truncation error.
pub fn mc_reference(inst: &ModelInstance, mc: &CumulantSet<f64>) -> Result<CumulantSet<f64>, ModelError> {
    let meta = mc.mc_meta.as_ref().ok_or_else(|| ModelError::Config("not a Monte Carlo set".into()))?;
    let order = if mc.has_fourth_order() { CumulantOrder::Fourth } else { CumulantOrder::Third };
    cumulants_fd_with_steps(inst, order, &meta.step_first, &meta.step_second)
}

/// Largest differences between analytic derivative arrays and central
/// differences of analytic arrays with steps `scale * max(1, |theta|)`:
/// `(dlam2, dlam3, ddlam2)`.
pub fn fd_derivative_residuals(inst: &ModelInstance, scale: f64) -> Result<[f64; 3], ModelError> {
    let exact = cumulants_analytic::<f64>(inst, CumulantOrder::Fourth)?;
    let h: Vec<f64> = inst.theta.iter().map(|t| scale * t.abs().max(1.0)).collect();
    let fd = cumulants_fd_with_steps(inst, CumulantOrder::Fourth, &h, &h)?;
    Ok([
        exact.dlam2.max_abs_diff(&fd.dlam2),
        exact.dlam3.as_ref().unwrap().max_abs_diff(fd.dlam3.as_ref().unwrap()),
        exact.ddlam2.as_ref().unwrap().max_abs_diff(fd.ddlam2.as_ref().unwrap()),
    ])
}

/// Identity checks plus the finite-difference cross-check of the analytic
/// derivative arrays at default steps.
pub fn validate_analytic(inst: &ModelInstance) -> Result<Vec<IdentityCheck>, ModelError> {
    let cs = cumulants_analytic::<f64>(inst, CumulantOrder::Fourth)?;
    let mut checks = check_identities(&cs);
    let fd = cumulants_fd(inst, CumulantOrder::Fourth)?;
    let rel = |name: &str, a: &SymTensor<f64>, b: &SymTensor<f64>| {
        let scale = a.max_abs().max(1e-300);
        let r = a.max_abs_diff(b);
        IdentityCheck { name: name.into(), max_residual: r, scale, max_z: None, pass: r <= 1e-5 * scale }
    };
    checks.push(rel("fd-dlam2", &cs.dlam2, &fd.dlam2));
    checks.push(rel("fd-dlam3", cs.dlam3.as_ref().unwrap(), fd.dlam3.as_ref().unwrap()));
    checks.push(rel("fd-ddlam2", cs.ddlam2.as_ref().unwrap(), fd.ddlam2.as_ref().unwrap()));
    Ok(checks)
}
