//! Truncated multivariate Taylor expansions ("jets") up to fourth order.
//!
//! A jet carries a value and the full arrays of partial derivatives of orders
//! 1..=`order` with respect to `dim` local variables. Arithmetic and
//! composition with smooth univariate functions propagate all derivatives
//! exactly (Leibniz and Faa di Bruno), so log-likelihood derivative arrays and
//! reparameterizations never need symbolic differentiation.

use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    dim: usize,
    order: usize,
    v: T,
    d1: Vec<T>,
    d2: Vec<T>,
    d3: Vec<T>,
    d4: Vec<T>,
}

fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

impl<T: Scalar> Jet<T> {
    pub fn constant(dim: usize, order: usize, c: T) -> Self {
        assert!(order <= 4, "jets are truncated at fourth order");
        let size = |k: usize| if order >= k { dim.pow(k as u32) } else { 0 };
        Jet { dim, order, v: c, d1: zeros(size(1)), d2: zeros(size(2)), d3: zeros(size(3)), d4: zeros(size(4)) }
    }

    /// The coordinate function `x_i` evaluated at `value`.
    pub fn variable(dim: usize, order: usize, i: usize, value: T) -> Self {
        let mut j = Self::constant(dim, order, value);
        if order >= 1 {
            j.d1[i] = T::one();
        }
        j
    }

    /// Variables for every coordinate of `point`.
    pub fn variables(order: usize, point: &[T]) -> Vec<Self> {
        point.iter().enumerate().map(|(i, x)| Self::variable(point.len(), order, i, x.clone())).collect()
    }

    /// Sum of univariate functions of single coordinates plus a constant:
    /// `c + sum_k f_k(x_{i_k})`, where `terms[k] = (i_k, [f', f'', f''', f''''])`
    /// at the expansion point.
    pub fn separable(dim: usize, order: usize, value: T, terms: &[(usize, [T; 4])]) -> Self {
        let mut j = Self::constant(dim, order, value);
        for (i, der) in terms {
            let i = *i;
            if order >= 1 {
                j.d1[i] = j.d1[i].clone() + der[0].clone();
            }
            if order >= 2 {
                let o = i * dim + i;
                j.d2[o] = j.d2[o].clone() + der[1].clone();
            }
            if order >= 3 {
                let o = (i * dim + i) * dim + i;
                j.d3[o] = j.d3[o].clone() + der[2].clone();
            }
            if order >= 4 {
                let o = ((i * dim + i) * dim + i) * dim + i;
                j.d4[o] = j.d4[o].clone() + der[3].clone();
            }
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn value(&self) -> &T {
        &self.v
    }
    /// Gradient, length `dim`.
    pub fn d1(&self) -> &[T] {
        &self.d1
    }
    /// Row-major `dim^2` Hessian.
    pub fn d2(&self) -> &[T] {
        &self.d2
    }
    pub fn d3(&self) -> &[T] {
        &self.d3
    }
    pub fn d4(&self) -> &[T] {
        &self.d4
    }

    /// Derivative array of order `k` (0 gives the value as a one-element slice).
    pub fn deriv(&self, k: usize) -> &[T] {
        match k {
            0 => std::slice::from_ref(&self.v),
            1 => &self.d1,
            2 => &self.d2,
            3 => &self.d3,
            4 => &self.d4,
            _ => panic!("order {k} beyond jet truncation"),
        }
    }

    fn check(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        assert_eq!(self.order, other.order, "jet order mismatch");
    }

    fn zip(&self, other: &Self, f: impl Fn(&T, &T) -> T) -> Self {
        self.check(other);
        let z = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| f(x, y)).collect::<Vec<_>>();
        Jet {
            dim: self.dim,
            order: self.order,
            v: f(&self.v, &other.v),
            d1: z(&self.d1, &other.d1),
            d2: z(&self.d2, &other.d2),
            d3: z(&self.d3, &other.d3),
            d4: z(&self.d4, &other.d4),
        }
    }

    fn map_all(&self, f: impl Fn(&T) -> T) -> Self {
        let m = |a: &[T]| a.iter().map(&f).collect::<Vec<_>>();
        Jet {
            dim: self.dim,
            order: self.order,
            v: f(&self.v),
            d1: m(&self.d1),
            d2: m(&self.d2),
            d3: m(&self.d3),
            d4: m(&self.d4),
        }
    }

    pub fn scale(&self, c: &T) -> Self {
        self.map_all(|x| x.clone() * c.clone())
    }

    pub fn add_const(&self, c: &T) -> Self {
        let mut j = self.clone();
        j.v = j.v + c.clone();
        j
    }

    /// Product by the Leibniz rule.
    pub fn mul_jet(&self, g: &Self) -> Self {
        self.check(g);
        let f = self;
        let m = self.dim;
        let mut out = Self::constant(m, self.order, f.v.clone() * g.v.clone());
        if self.order >= 1 {
            for i in 0..m {
                out.d1[i] = f.d1[i].clone() * g.v.clone() + f.v.clone() * g.d1[i].clone();
            }
        }
        if self.order >= 2 {
            for i in 0..m {
                for j in 0..m {
                    let ij = i * m + j;
                    out.d2[ij] = f.d2[ij].clone() * g.v.clone()
                        + f.d1[i].clone() * g.d1[j].clone()
                        + f.d1[j].clone() * g.d1[i].clone()
                        + f.v.clone() * g.d2[ij].clone();
                }
            }
        }
        if self.order >= 3 {
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let ijk = (i * m + j) * m + k;
                        let (ij, ik, jk) = (i * m + j, i * m + k, j * m + k);
                        out.d3[ijk] = f.d3[ijk].clone() * g.v.clone()
                            + f.d2[ij].clone() * g.d1[k].clone()
                            + f.d2[ik].clone() * g.d1[j].clone()
                            + f.d2[jk].clone() * g.d1[i].clone()
                            + f.d1[i].clone() * g.d2[jk].clone()
                            + f.d1[j].clone() * g.d2[ik].clone()
                            + f.d1[k].clone() * g.d2[ij].clone()
                            + f.v.clone() * g.d3[ijk].clone();
                    }
                }
            }
        }
        if self.order >= 4 {
            let p2 = |a: usize, b: usize| a * m + b;
            let p3 = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        for l in 0..m {
                            let o = ((i * m + j) * m + k) * m + l;
                            let mut s = f.d4[o].clone() * g.v.clone() + f.v.clone() * g.d4[o].clone();
                            s = s
                                + f.d3[p3(i, j, k)].clone() * g.d1[l].clone()
                                + f.d3[p3(i, j, l)].clone() * g.d1[k].clone()
                                + f.d3[p3(i, k, l)].clone() * g.d1[j].clone()
                                + f.d3[p3(j, k, l)].clone() * g.d1[i].clone();
                            s = s
                                + f.d1[i].clone() * g.d3[p3(j, k, l)].clone()
                                + f.d1[j].clone() * g.d3[p3(i, k, l)].clone()
                                + f.d1[k].clone() * g.d3[p3(i, j, l)].clone()
                                + f.d1[l].clone() * g.d3[p3(i, j, k)].clone();
                            s = s
                                + f.d2[p2(i, j)].clone() * g.d2[p2(k, l)].clone()
                                + f.d2[p2(i, k)].clone() * g.d2[p2(j, l)].clone()
                                + f.d2[p2(i, l)].clone() * g.d2[p2(j, k)].clone()
                                + f.d2[p2(k, l)].clone() * g.d2[p2(i, j)].clone()
                                + f.d2[p2(j, l)].clone() * g.d2[p2(i, k)].clone()
                                + f.d2[p2(j, k)].clone() * g.d2[p2(i, l)].clone();
                            out.d4[o] = s;
                        }
                    }
                }
            }
        }
        out
    }

    /// `phi(self)` given `c[k]` = k-th derivative of `phi` at `self.value()`.
    pub fn compose(&self, c: &[T; 5]) -> Self {
        let m = self.dim;
        let f = self;
        let mut out = Self::constant(m, self.order, c[0].clone());
        if self.order >= 1 {
            for i in 0..m {
                out.d1[i] = c[1].clone() * f.d1[i].clone();
            }
        }
        if self.order >= 2 {
            for i in 0..m {
                for j in 0..m {
                    let ij = i * m + j;
                    out.d2[ij] = c[2].clone() * f.d1[i].clone() * f.d1[j].clone() + c[1].clone() * f.d2[ij].clone();
                }
            }
        }
        if self.order >= 3 {
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let ijk = (i * m + j) * m + k;
                        let pairs = f.d2[i * m + j].clone() * f.d1[k].clone()
                            + f.d2[i * m + k].clone() * f.d1[j].clone()
                            + f.d2[j * m + k].clone() * f.d1[i].clone();
                        out.d3[ijk] = c[3].clone() * f.d1[i].clone() * f.d1[j].clone() * f.d1[k].clone()
                            + c[2].clone() * pairs
                            + c[1].clone() * f.d3[ijk].clone();
                    }
                }
            }
        }
        if self.order >= 4 {
            let p2 = |a: usize, b: usize| a * m + b;
            let p3 = |a: usize, b: usize, cc: usize| (a * m + b) * m + cc;
            let g = &f.d1;
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        for l in 0..m {
                            let o = ((i * m + j) * m + k) * m + l;
                            let all = g[i].clone() * g[j].clone() * g[k].clone() * g[l].clone();
                            let one_pair = f.d2[p2(i, j)].clone() * g[k].clone() * g[l].clone()
                                + f.d2[p2(i, k)].clone() * g[j].clone() * g[l].clone()
                                + f.d2[p2(i, l)].clone() * g[j].clone() * g[k].clone()
                                + f.d2[p2(j, k)].clone() * g[i].clone() * g[l].clone()
                                + f.d2[p2(j, l)].clone() * g[i].clone() * g[k].clone()
                                + f.d2[p2(k, l)].clone() * g[i].clone() * g[j].clone();
                            let two_blocks = f.d2[p2(i, j)].clone() * f.d2[p2(k, l)].clone()
                                + f.d2[p2(i, k)].clone() * f.d2[p2(j, l)].clone()
                                + f.d2[p2(i, l)].clone() * f.d2[p2(j, k)].clone()
                                + f.d3[p3(i, j, k)].clone() * g[l].clone()
                                + f.d3[p3(i, j, l)].clone() * g[k].clone()
                                + f.d3[p3(i, k, l)].clone() * g[j].clone()
                                + f.d3[p3(j, k, l)].clone() * g[i].clone();
                            out.d4[o] = c[4].clone() * all
                                + c[3].clone() * one_pair
                                + c[2].clone() * two_blocks
                                + c[1].clone() * f.d4[o].clone();
                        }
                    }
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Self {
        let x = self.v.clone();
        let r = T::one() / x;
        let r2 = r.clone() * r.clone();
        let r3 = r2.clone() * r.clone();
        let r4 = r3.clone() * r.clone();
        let r5 = r4.clone() * r.clone();
        self.compose(&[r, -r2, T::from_f64(2.0) * r3, T::from_f64(-6.0) * r4, T::from_f64(24.0) * r5])
    }

    pub fn div_jet(&self, other: &Self) -> Self {
        self.mul_jet(&other.recip())
    }

    pub fn ln(&self) -> Self {
        let x = self.v.clone();
        let r = T::one() / x.clone();
        let r2 = r.clone() * r.clone();
        let r3 = r2.clone() * r.clone();
        let r4 = r3.clone() * r.clone();
        self.compose(&[x.ln(), r, -r2, T::from_f64(2.0) * r3, T::from_f64(-6.0) * r4])
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.compose(&[e.clone(), e.clone(), e.clone(), e.clone(), e])
    }

    /// `self^p` for real `p`; needs a positive value unless `p` is an integer.
    pub fn powf(&self, p: f64) -> Self {
        let x = self.v.clone();
        let pt = T::from_f64(p);
        let base = x.powf(p);
        let r = T::one() / x;
        let c1 = pt.clone() * base.clone() * r.clone();
        let c2 = c1.clone() * (pt.clone() - T::one()) * r.clone();
        let c3 = c2.clone() * (pt.clone() - T::from_f64(2.0)) * r.clone();
        let c4 = c3.clone() * (pt - T::from_f64(3.0)) * r;
        self.compose(&[base, c1, c2, c3, c4])
    }

    pub fn sqrt(&self) -> Self {
        let x = self.v.clone();
        let s = x.sqrt();
        let r = T::one() / x;
        let c1 = T::half() * s.clone() * r.clone();
        let c2 = T::from_ratio(-1, 2) * c1.clone() * r.clone();
        let c3 = T::from_ratio(-3, 2) * c2.clone() * r.clone();
        let c4 = T::from_ratio(-5, 2) * c3.clone() * r;
        self.compose(&[s, c1, c2, c3, c4])
    }

    pub fn square(&self) -> Self {
        self.mul_jet(self)
    }

    /// Lowers the truncation order, keeping the leading arrays.
    pub fn truncate(&self, order: usize) -> Self {
        assert!(order <= self.order);
        let mut j = self.clone();
        j.order = order;
        if order < 4 {
            j.d4.clear();
        }
        if order < 3 {
            j.d3.clear();
        }
        if order < 2 {
            j.d2.clear();
        }
        if order < 1 {
            j.d1.clear();
        }
        j
    }

    /// Jet of `self` re-expressed in new variables: `inner[i]` is the jet of
    /// the i-th old variable as a function of the new ones.
    pub fn chain(&self, inner: &[Jet<T>]) -> Self {
        assert_eq!(inner.len(), self.dim);
        let nd = inner[0].dim;
        let order = self.order.min(inner[0].order);
        let shifted: Vec<Jet<T>> = inner.iter().map(|j| j.add_const(&-j.v.clone()).truncate(order)).collect();
        // Taylor polynomial in the shifted inner jets
        let mut out = Jet::constant(nd, order, self.v.clone());
        let m = self.dim;
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        let mut idx = Vec::new();
        for k in 1..=order {
            let arr = self.deriv(k);
            idx.resize(k, 0);
            let c = T::from_f64(1.0 / fact[k]);
            for (flat, a) in arr.iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                let mut rest = flat;
                for slot in idx.iter_mut().rev() {
                    *slot = rest % m;
                    rest /= m;
                }
                let mut term = shifted[idx[0]].clone();
                for &i in &idx[1..] {
                    term = term.mul_jet(&shifted[i]);
                }
                out = out + term.scale(&(a.clone() * c.clone()));
            }
        }
        out
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Jet<T>;
    fn add(self, o: Jet<T>) -> Jet<T> {
        self.zip(&o, |a, b| a.clone() + b.clone())
    }
}

impl<T: Scalar> Add for &Jet<T> {
    type Output = Jet<T>;
    fn add(self, o: &Jet<T>) -> Jet<T> {
        self.zip(o, |a, b| a.clone() + b.clone())
    }
}

impl<T: Scalar> Sub for &Jet<T> {
    type Output = Jet<T>;
    fn sub(self, o: &Jet<T>) -> Jet<T> {
        self.zip(o, |a, b| a.clone() - b.clone())
    }
}

impl<T: Scalar> Sub for Jet<T> {
    type Output = Jet<T>;
    fn sub(self, o: Jet<T>) -> Jet<T> {
        &self - &o
    }
}

impl<T: Scalar> Mul for &Jet<T> {
    type Output = Jet<T>;
    fn mul(self, o: &Jet<T>) -> Jet<T> {
        self.mul_jet(o)
    }
}

impl<T: Scalar> Mul for Jet<T> {
    type Output = Jet<T>;
    fn mul(self, o: Jet<T>) -> Jet<T> {
        self.mul_jet(&o)
    }
}

impl<T: Scalar> Neg for &Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.map_all(|x| -x.clone())
    }
}

impl<T: Scalar> Neg for Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    // f(x, y) = exp(x y) / (1 + x^2) evaluated directly by nested
    // central differences serves as the oracle for the jet arrays.
    fn f_val(x: f64, y: f64) -> f64 {
        (x * y).exp() / (1.0 + x * x)
    }

    fn f_jet(x: f64, y: f64) -> Jet<f64> {
        let v = Jet::variables(4, &[x, y]);
        let num = (&v[0] * &v[1]).exp();
        let den = v[0].square().add_const(&1.0);
        num.div_jet(&den)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (x, y) = (0.3, -0.7);
        let j = f_jet(x, y);
        let h = 1e-4;
        let fx = (f_val(x + h, y) - f_val(x - h, y)) / (2.0 * h);
        assert!((j.d1()[0] - fx).abs() < 1e-8);
        let fxy = (f_val(x + h, y + h) - f_val(x + h, y - h) - f_val(x - h, y + h) + f_val(x - h, y - h)) / (4.0 * h * h);
        assert!((j.d2()[1] - fxy).abs() < 1e-6);
        // third derivative along x by differencing the jet's own Hessian
        let hx = 1e-5;
        let d3 = (f_jet(x + hx, y).d2()[0] - f_jet(x - hx, y).d2()[0]) / (2.0 * hx);
        assert!((j.d3()[0] - d3).abs() < 1e-6);
        let d4 = (f_jet(x + hx, y).d3()[1] - f_jet(x - hx, y).d3()[1]) / (2.0 * hx);
        assert!((j.d4()[1] - d4).abs() < 1e-5);
    }

    #[test]
    fn derivative_arrays_are_symmetric() {
        let j = f_jet(0.4, 1.1);
        let m = 2;
        for i in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let a = j.d3()[(i * m + k) * m + l];
                    let b = j.d3()[(l * m + i) * m + k];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn polynomial_is_exact_over_rationals() {
        let q = |n: i64| BigRational::from_ratio(n, 1);
        let v = Jet::variables(4, &[q(2), q(3)]);
        // p = x^3 y + 1/x
        let p = &(&v[0].square() * &v[0]) * &v[1] + v[0].recip();
        assert_eq!(*p.value(), BigRational::from_ratio(49, 2));
        // d/dx = 3x^2 y - 1/x^2 = 36 - 1/4
        assert_eq!(p.d1()[0], BigRational::from_ratio(143, 4));
        // d4/dx4 = 24 / x^5
        assert_eq!(p.d4()[0], BigRational::from_ratio(24, 32));
        // d4/dx3dy = 6
        assert_eq!(p.d4()[1], q(6));
    }

    #[test]
    fn chain_matches_direct_composition() {
        // g(u) = u0^2 u1 with u = (e^s, s t); compare against direct jets in (s, t)
        let s = Jet::<f64>::variables(4, &[0.2, -0.5]);
        let u0 = s[0].exp();
        let u1 = &s[0] * &s[1];
        let direct = &u0.square() * &u1;
        let outer_vars = Jet::variables(4, &[*u0.value(), *u1.value()]);
        let g = &outer_vars[0].square() * &outer_vars[1];
        let chained = g.chain(&[u0, u1]);
        for k in 0..=4 {
            for (a, b) in chained.deriv(k).iter().zip(direct.deriv(k)) {
                assert!((a - b).abs() < 1e-12, "order {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sqrt_and_powf_agree() {
        let x = Jet::<f64>::variables(4, &[2.5])[0].clone();
        let a = x.sqrt();
        let b = x.powf(0.5);
        for k in 0..=4 {
            assert!((a.deriv(k)[0] - b.deriv(k)[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn separable_matches_explicit_sum() {
        let p = [0.3f64, 0.8, 1.5];
        let v = Jet::variables(4, &p);
        let direct = &v[1].exp() + &v[2].exp();
        let e1 = p[1].exp();
        let e2 = p[2].exp();
        let sep = Jet::separable(3, 4, e1 + e2, &[(1, [e1; 4]), (2, [e2; 4])]);
        for k in 0..=4 {
            for (a, b) in sep.deriv(k).iter().zip(direct.deriv(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
