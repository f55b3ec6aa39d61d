use likadj::{contract, contract_scalar, info_geometry, Contracted, Rational, SymTensor};
use num_traits::{One, Zero};
use proptest::prelude::*;

fn sym(order: usize, d: usize, raw: &[f64]) -> SymTensor<f64> {
    SymTensor::from_vec(order, d, vec![(0..order).collect()], raw.to_vec()).unwrap()
}

fn raw(order: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3).prop_flat_map(move |d| {
        let len = d.pow(order as u32);
        (
            Just(d),
            prop::collection::vec(-2.0f64..2.0, len),
            prop::collection::vec(-2.0f64..2.0, len),
            prop::collection::vec(-2.0f64..2.0, d * d),
        )
    })
}

/// `a^{rs} b^{tu} c_{rst} c_{u..}` by explicit loops.
fn brute_two_three(a: &SymTensor<f64>, b: &SymTensor<f64>, c3: &SymTensor<f64>) -> f64 {
    let d = a.dim();
    let mut s = 0.0;
    for r in 0..d {
        for t in 0..d {
            for u in 0..d {
                for v in 0..d {
                    for w in 0..d {
                        for x in 0..d {
                            s += a.get(&[r, u]) * b.get(&[t, v]) * a.get(&[w, x]) * c3.get(&[r, t, w]) * c3.get(&[u, v, x]);
                        }
                    }
                }
            }
        }
    }
    s
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force((d, x, y, m) in raw(3)) {
        let c3 = sym(3, d, &x);
        let a = sym(2, d, &m);
        let b = sym(2, d, &y[..d * d]);
        let got = contract_scalar("^r^u,^t^v,^w^x,_r_t_w,_u_v_x", &[&a, &b, &a, &c3, &c3]).unwrap();
        prop_assert!(close(got, brute_two_three(&a, &b, &c3)));
    }

    #[test]
    fn multilinear((d, x, y, m) in raw(3), k in -3.0f64..3.0) {
        let (cx, cy) = (sym(3, d, &x), sym(3, d, &y));
        let a = sym(2, d, &m);
        let combo = cx.scaled(&k).axpy(&1.0, &cy);
        let spec = "^r^s,^t^u,_r_s_t,_u_v_w,^v^w";
        let f = |t: &SymTensor<f64>| contract_scalar(spec, &[&a, &a, t, &cx, &a]).unwrap();
        prop_assert!(close(f(&combo), k * f(&cx) + f(&cy)));
    }

    #[test]
    fn symmetrized_input_is_symmetric((d, x, _, _) in raw(4)) {
        let t = sym(4, d, &x);
        prop_assert!(t.is_symmetric());
        let again = SymTensor::from_vec(4, d, vec![vec![0, 1, 2, 3]], t.data().to_vec()).unwrap();
        prop_assert!(again.max_abs_diff(&t) <= 1e-14);
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(t.get(&[i, j, 0, 0]), t.get(&[0, j, i, 0]));
            }
        }
    }

    #[test]
    fn free_output_of_symmetric_contraction_is_symmetric((d, x, _, m) in raw(3)) {
        let c3 = sym(3, d, &x);
        let a = sym(2, d, &m);
        let Contracted::Tensor(out) = contract("^r^s,_r_s_t,_u_v_w,^v^w->_t_u", &[&a, &c3, &c3, &a]).unwrap() else {
            panic!("expected a tensor");
        };
        for i in 0..d {
            for j in 0..d {
                prop_assert!(close(*out.get(&[i, j]), *out.get(&[j, i])));
            }
        }
    }

    #[test]
    fn nuisance_block_of_nu_inverts_lambda(vals in prop::collection::vec(-1.0f64..1.0, 16), diag in 1.0f64..4.0) {
        let d = 4;
        // -lambda = B B^T + diag * I is positive definite
        let mut lam = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let bb: f64 = (0..d).map(|k| vals[i * d + k] * vals[j * d + k]).sum();
                lam[i * d + j] = -(bb + if i == j { diag } else { 0.0 });
            }
        }
        let lam = sym(2, d, &lam);
        let g = info_geometry(&lam).unwrap();
        for a in 1..d {
            for b in 1..d {
                let s: f64 = (1..d).map(|c| g.nu.get(&[a, c]) * lam.get(&[c, b])).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!(close(s, want));
            }
        }
        let l11 = *g.lambda_up.get(&[0, 0]);
        prop_assert!(close(g.eta, -1.0 / l11));
        let t11 = *g.tau.get(&[0, 0]);
        prop_assert!(close(t11, -l11));
    }
}

#[test]
fn exact_rational_contraction() {
    let q = |n: i64, d: i64| Rational::new(n.into(), d.into());
    let t = SymTensor::from_fn(3, 2, vec![vec![0, 1, 2]], |i| q(1 + i.iter().sum::<usize>() as i64, 3)).unwrap();
    let a = SymTensor::from_vec(2, 2, vec![vec![0, 1]], vec![q(1, 2), q(1, 7), q(1, 7), q(2, 5)]).unwrap();
    let got = contract_scalar("^r^s,^t^u,_r_s_t,^v^w,_u_v_w", &[&a, &a, &t, &a, &t]).unwrap();
    let mut want = Rational::zero();
    for r in 0..2 {
        for s in 0..2 {
            for tt in 0..2 {
                for u in 0..2 {
                    for v in 0..2 {
                        for w in 0..2 {
                            want += a.get(&[r, s]) * a.get(&[tt, u]) * t.get(&[r, s, tt]) * a.get(&[v, w]) * t.get(&[u, v, w]);
                        }
                    }
                }
            }
        }
    }
    assert_eq!(got, want);
    assert!(!got.is_one());
}

#[test]
fn f32_tracks_f64() {
    let x: Vec<f64> = (0..27).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
    let m = [2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 1.0];
    let c64 = sym(3, 3, &x);
    let a64 = sym(2, 3, &m);
    let c32 = SymTensor::from_vec(3, 3, vec![vec![0, 1, 2]], x.iter().map(|v| *v as f32).collect()).unwrap();
    let a32 = SymTensor::from_vec(2, 3, vec![vec![0, 1]], m.iter().map(|v| *v as f32).collect()).unwrap();
    let spec = "^r^s,^t^u,^v^w,_r_s_t,_u_v_w";
    let hi = contract_scalar(spec, &[&a64, &a64, &a64, &c64, &c64]).unwrap();
    let lo = contract_scalar(spec, &[&a32, &a32, &a32, &c32, &c32]).unwrap();
    assert!((lo as f64 - hi).abs() <= 1e-4 * hi.abs().max(1.0));
}
