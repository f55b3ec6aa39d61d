use likadj::inference::{constrained_mle, evaluate, mle, pivots, profile_derivatives, PlugIn};
use likadj::model::{loglik, Dataset, Model, ModelInstance};
use likadj::zoo::{report_for, InverseGaussian, MultiExp, NeymanScott, NormalRegression};
use likadj::AdjustmentReport64;
use proptest::prelude::*;

fn intercept_only(y: &[f64]) -> (Model, Dataset) {
    let n = y.len();
    let model = Model::NormalRegression(NormalRegression::new(n, 1, vec![1.0; n]).unwrap());
    (model, Dataset::new(n, 1, y.to_vec()).unwrap())
}

const Y: [f64; 8] = [1.3, -0.4, 2.2, 0.9, 0.1, 1.7, -1.1, 0.6];

fn mean_and_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    (m, y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

#[test]
fn intercept_only_mle_is_closed_form() {
    let (model, data) = intercept_only(&Y);
    let fit = mle(&model, &data).unwrap();
    let (m, v) = mean_and_var(&Y);
    assert!((fit.theta[1] - m).abs() < 1e-10);
    assert!((fit.theta[0] * fit.theta[0] - v).abs() < 1e-10);
    assert!(fit.score_norm < 1e-8);
}

#[test]
fn neyman_scott_constrained_means_are_row_means() {
    let inst = ModelInstance::new(Model::NeymanScott(NeymanScott::new(4, 3).unwrap()), vec![1.5, 0.0, 2.0, -1.0]).unwrap();
    let data = inst.sample(11, 0);
    let hat = mle(&inst.model, &data).unwrap();
    let mut ss = 0.0;
    for j in 0..3 {
        let (m, v) = mean_and_var(data.column(j));
        ss += 4.0 * v;
        for sigma in [0.3, 1.0, 4.0] {
            let t = constrained_mle(&inst.model, &data, sigma).unwrap();
            assert_eq!(t.theta[0], sigma);
            assert!((t.theta[j + 1] - m).abs() < 1e-9);
        }
    }
    assert!((hat.theta[0].powi(2) - ss / 12.0).abs() < 1e-10);
}

/// Dense grid over the two nuisance rates, refined around the best cell.
fn grid_oracle(model: &Model, data: &Dataset, psi: f64, center: &[f64]) -> Vec<f64> {
    let mut best = center.to_vec();
    let mut width = 0.5 * center[1].max(center[2]);
    for _ in 0..30 {
        let base = best.clone();
        let mut best_ll = f64::NEG_INFINITY;
        for a in -10..=10 {
            for b in -10..=10 {
                let t = vec![psi, base[1] + width * a as f64 / 10.0, base[2] + width * b as f64 / 10.0];
                if let Ok(ll) = loglik(model, &t, data) {
                    if ll.value > best_ll {
                        best_ll = ll.value;
                        best = t;
                    }
                }
            }
        }
        width *= 0.3;
    }
    best
}

#[test]
fn multi_exp_constrained_fit_matches_grid_search() {
    let me = MultiExp::new(15, 3, 0.5).unwrap();
    let theta = me.theta_from_rates(&[1.0, 0.7, 1.4]);
    let inst = ModelInstance::new(Model::MultiExp(me), theta).unwrap();
    let data = inst.sample(5, 0);
    let psi = inst.theta[0] * 1.05;
    let t = constrained_mle(&inst.model, &data, psi).unwrap();
    assert_eq!(t.theta[0], psi);
    let oracle = grid_oracle(&inst.model, &data, psi, &t.theta);
    for j in 1..3 {
        assert!((t.theta[j] - oracle[j]).abs() < 1e-4, "{:?} vs {:?}", t.theta, oracle);
    }
}

fn report(model: &Model, theta: &[f64]) -> AdjustmentReport64 {
    report_for(&ModelInstance::new(model.clone(), theta.to_vec()).unwrap()).unwrap()
}

#[test]
fn pivots_vanish_at_the_estimate() {
    let (model, data) = intercept_only(&Y);
    let hat = mle(&model, &data).unwrap();
    let res = pivots(&model, &data, hat.theta[0], &report(&model, &hat.theta)).unwrap();
    assert!(res.r.abs() < 1e-7 && res.w < 1e-12);
    assert!(res.wald_obs.abs() < 1e-15 && res.wald_exp.abs() < 1e-15);
}

#[test]
fn normal_scale_signed_root_closed_form() {
    let (model, data) = intercept_only(&Y);
    let n = Y.len() as f64;
    let (_, v) = mean_and_var(&Y);
    let shat = v.sqrt();
    for sigma in [0.5, 0.9, 1.2, 2.5] {
        let res = evaluate(&model, &data, sigma, PlugIn::Constrained).unwrap();
        let w = 2.0 * n * ((sigma / shat).ln() + shat * shat / (2.0 * sigma * sigma) - 0.5);
        let r = (shat - sigma).signum() * w.sqrt();
        assert!((res.r - r).abs() < 1e-9, "{} vs {}", res.r, r);
    }
}

#[test]
fn signed_root_decreases_in_psi() {
    let (model, data) = intercept_only(&Y);
    let res = evaluate(&model, &data, 1.0, PlugIn::Constrained).unwrap();
    let (shat, h) = (res.psi_hat, 1.0 / res.eta_hat.sqrt());
    let mut prev = f64::INFINITY;
    for i in -30..=30 {
        let psi = shat + h * i as f64 / 10.0;
        if psi <= 0.0 {
            continue;
        }
        let r = evaluate(&model, &data, psi, PlugIn::Constrained).unwrap().r;
        assert!(r < prev);
        prev = r;
    }
}

#[test]
fn profile_derivatives_of_normal_scale() {
    let (model, data) = intercept_only(&Y);
    let hat = mle(&model, &data).unwrap();
    let pd = profile_derivatives(&model, &data, hat.theta[0]).unwrap();
    let n = Y.len() as f64;
    let jp = 2.0 * n / hat.theta[0].powi(2);
    assert!(pd.m1_at_hat.abs() < 1e-6, "{pd:?}");
    assert!(pd.m1.abs() < 1e-6);
    assert!(((pd.j_p - jp) / jp).abs() < 1e-4);
    assert!(pd.j_p > 0.0);
    // M(s) = -n log s - n v / (2 s^2) has M'''(s_hat) = 10 n / s_hat^3
    let m3 = 10.0 * n / hat.theta[0].powi(3);
    assert!(((pd.m3_at_hat - m3) / m3).abs() < 1e-3);
}

#[test]
fn plug_in_shift_is_exact() {
    let inst = ModelInstance::new(Model::InverseGaussian(InverseGaussian::new(6, 3).unwrap()), vec![1.0, 0.5, 2.0, 1.0]).unwrap();
    let data = inst.sample(3, 0);
    for plug_in in [PlugIn::Constrained, PlugIn::Global] {
        let res = evaluate(&inst.model, &data, 1.3, plug_in).unwrap();
        let at = if plug_in == PlugIn::Constrained { &res.theta_tilde } else { &res.theta_hat };
        let rep = report(&inst.model, at);
        assert_eq!(res.r_a, res.r + rep.g_np + rep.g_inf);
    }
}

#[test]
fn normal_pivots_free_of_location() {
    let e = [0.3, -1.2, 0.8, 0.05, -0.4, 1.6, -0.9, 0.2, 0.7, -0.5];
    let (m0, d0) = intercept_only(&e);
    let shifted: Vec<f64> = e.iter().map(|v| v + 37.0).collect();
    let (m1, d1) = intercept_only(&shifted);
    let a = evaluate(&m0, &d0, 0.8, PlugIn::Constrained).unwrap();
    let b = evaluate(&m1, &d1, 0.8, PlugIn::Constrained).unwrap();
    assert!((a.r - b.r).abs() < 1e-9);
    assert!((a.r_a - b.r_a).abs() < 1e-9);

    let ns = Model::NeymanScott(NeymanScott::new(5, 2).unwrap());
    let da = Dataset::new(5, 2, e.to_vec()).unwrap();
    let db = Dataset::new(5, 2, e.iter().enumerate().map(|(i, v)| v + if i < 5 { -3.0 } else { 12.0 }).collect()).unwrap();
    let a = evaluate(&ns, &da, 0.8, PlugIn::Constrained).unwrap();
    let b = evaluate(&ns, &db, 0.8, PlugIn::Constrained).unwrap();
    assert!((a.r - b.r).abs() < 1e-9);
}

#[test]
fn degenerate_data_rejected() {
    let (model, data) = intercept_only(&[2.0; 6]);
    assert!(mle(&model, &data).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn likelihood_ratio_invariants(seed in 0u64..1000, psi_scale in 0.6f64..1.6) {
        let inst = ModelInstance::new(Model::NeymanScott(NeymanScott::new(4, 3).unwrap()), vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        let data = inst.sample(seed, 0);
        let res = evaluate(&inst.model, &data, psi_scale, PlugIn::Constrained).unwrap();
        prop_assert!(res.w >= 0.0);
        prop_assert!((res.w - res.r * res.r).abs() < 1e-10 * res.w.max(1.0));
        prop_assert!(res.profile_ll_hat >= res.profile_ll);
        if res.r != 0.0 {
            prop_assert_eq!(res.r.signum(), (res.psi_hat - psi_scale).signum());
        }
    }

    #[test]
    fn inverse_gaussian_fit_converges(seed in 0u64..1000) {
        let inst = ModelInstance::new(Model::InverseGaussian(InverseGaussian::new(5, 4).unwrap()), vec![1.0, 0.5, 1.0, 2.0, 4.0]).unwrap();
        let data = inst.sample(seed, 0);
        let fit = mle(&inst.model, &data).unwrap();
        prop_assert!(fit.score_norm < 1e-8);
        let t = constrained_mle(&inst.model, &data, fit.theta[0] * 1.5).unwrap();
        prop_assert!(t.loglik <= fit.loglik);
    }
}
