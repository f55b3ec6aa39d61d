use likadj::inference::{evaluate, PlugIn};
use likadj::simulation::{
    bootstrap_distribution, diagnostics, exact_normal_scale_r_cdf, ks_distance, normality_comparison, simulate_pivots,
    verify_expansion, ExpansionQuantity, SimError, SimOptions, SimPivot, Verdict,
};
use likadj::zoo::{self, NeymanScottConfig, NormalRegressionConfig};
use likadj::ModelConfig;

fn built(name: &str, n: usize, q: Option<usize>) -> likadj::ModelInstance {
    let mut c = ModelConfig::default_for(name).unwrap();
    c.set_size(Some(n), q).unwrap();
    c.build().unwrap()
}

#[test]
fn single_replicate_equals_direct_evaluation() {
    for name in ["inverse-gaussian", "neyman-scott", "multi-exp", "curved-normal"] {
        let inst = built(name, 8, Some(2));
        let study = simulate_pivots(&inst, &SimOptions::new(1, 99)).unwrap();
        let res = evaluate(&inst.model, &inst.sample(99, 0), inst.theta[0], PlugIn::Constrained).unwrap();
        let r = study.sample(SimPivot::R).values[0];
        let ra = study.sample(SimPivot::RA).values[0];
        assert!((r - res.r).abs() < 1e-8, "{name}: {r} vs {}", res.r);
        assert!((ra - res.r_a).abs() < 1e-8, "{name}: {ra} vs {}", res.r_a);
        assert_eq!(study.w.len(), 1);
    }
}

#[test]
fn neyman_scott_bootstrap_free_of_means() {
    let opts = SimOptions::new(500, 3);
    let a = zoo::neyman_scott(&NeymanScottConfig { n: 4, q: 3, sigma: 1.0, mu: Some(vec![0.0, 0.0, 0.0]) }).unwrap();
    let b = zoo::neyman_scott(&NeymanScottConfig { n: 4, q: 3, sigma: 1.0, mu: Some(vec![-4.0, 3.5, 10.0]) }).unwrap();
    let (da, db) = (a.sample(7, 0), b.sample(7, 0));
    let sa = bootstrap_distribution(&a.model, &da, 1.2, &opts).unwrap();
    let sb = bootstrap_distribution(&b.model, &db, 1.2, &opts).unwrap();
    assert!(sa.pivotal_reduction_applied);
    assert_eq!(sa.results, sb.results);

    let raw = SimOptions { pivotal_reduction: false, ..opts };
    let ua = bootstrap_distribution(&a.model, &da, 1.2, &raw).unwrap();
    let ub = bootstrap_distribution(&b.model, &db, 1.2, &raw).unwrap();
    assert!(!ua.pivotal_reduction_applied);
    for (x, y) in ua.sample(SimPivot::R).values.iter().zip(&ub.sample(SimPivot::R).values) {
        assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let inst = built("multi-exp", 6, Some(3));
    let run = |workers| {
        let mut s = simulate_pivots(&inst, &SimOptions { workers, ..SimOptions::new(400, 11) }).unwrap();
        s.options.workers = 0;
        format!("{s:?}")
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn seeds_give_distinct_streams() {
    let inst = built("inverse-gaussian", 6, Some(2));
    let a = simulate_pivots(&inst, &SimOptions::new(50, 1)).unwrap();
    let b = simulate_pivots(&inst, &SimOptions::new(50, 2)).unwrap();
    assert_ne!(a.sample(SimPivot::R).values, b.sample(SimPivot::R).values);
}

#[test]
fn normal_scale_bootstrap_matches_exact_law() {
    let (n, q) = (9, 2);
    let inst = zoo::normal_regression(&NormalRegressionConfig { n, q, sigma: 1.5, ..Default::default() }).unwrap();
    let data = inst.sample(4, 0);
    let reps = 4000;
    let study = bootstrap_distribution(&inst.model, &data, 1.5, &SimOptions::new(reps, 5)).unwrap();
    let ks = ks_distance(&study.sample(SimPivot::R).values, |r| exact_normal_scale_r_cdf(n, q, r));
    // 0.1% critical value of the one-sample KS statistic
    assert!(ks < 1.95 / (reps as f64).sqrt(), "ks = {ks}");
    let (pl, pu) = (study.p_lower.unwrap(), study.p_upper.unwrap());
    assert!(pl > 0.0 && pl <= 1.0 && pu > 0.0 && pu <= 1.0);
    assert!(pl + pu >= 1.0);
}

#[test]
fn exact_cdf_oracle_by_quadrature() {
    // P(R <= r) for r < 0 is P(n u <= n u_-(r)) with u_- < 1; check one
    // point against a direct chi-square sum for even degrees of freedom.
    let (n, q) = (8, 2);
    let r: f64 = -0.7;
    let target = r * r / n as f64;
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - 1.0 - mid.ln() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = n as f64 * 0.5 * (lo + hi) / 2.0;
    // chi^2 with 6 df: 1 - e^{-x} (1 + x + x^2 / 2)
    let cdf = 1.0 - (-x).exp() * (1.0 + x + x * x / 2.0);
    assert!((exact_normal_scale_r_cdf(n, q, r) - cdf).abs() < 1e-10);
}

#[test]
fn diagnostics_of_symmetric_sample() {
    let x: Vec<f64> = (-50..=50).map(|i| i as f64 / 25.0).collect();
    let d = diagnostics(&x);
    assert_eq!(d.count, 101);
    assert!(d.mean.abs() < 1e-15);
    assert!(d.skewness.abs() < 1e-12);
    assert_eq!(d.coverage.len(), 3);
}

#[test]
fn expansion_verdict_inconclusive_when_underpowered() {
    let inst = built("neyman-scott", 10, Some(2));
    let rep = verify_expansion(&inst, ExpansionQuantity::Er, &[10], &SimOptions::new(200, 1)).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(rep.rows[0].verdict, Verdict::Inconclusive);
}

#[test]
fn expansion_mean_r_small_study() {
    let inst = built("neyman-scott", 20, Some(3));
    let rep = verify_expansion(&inst, ExpansionQuantity::Er, &[20], &SimOptions::new(20_000, 8)).unwrap();
    let row = &rep.rows[0];
    assert_eq!(row.verdict, Verdict::Pass, "{row:?}");
}

#[test]
fn normality_report_consistent_with_study() {
    let inst = built("neyman-scott", 4, Some(6));
    let opts = SimOptions::new(3000, 2);
    let rep = normality_comparison(&inst, &opts).unwrap();
    let study = simulate_pivots(&inst, &opts).unwrap();
    let ks_r = study.sample(SimPivot::R).diagnostics.ks;
    let row = rep.rows.iter().find(|r| r.pivot == SimPivot::R).unwrap();
    assert_eq!(row.ks, ks_r);
    assert!(rep.ks_improved);
}

#[test]
fn zero_reps_rejected() {
    let inst = built("neyman-scott", 4, Some(2));
    assert!(matches!(simulate_pivots(&inst, &SimOptions::new(0, 1)), Err(SimError::Settings(_))));
}
