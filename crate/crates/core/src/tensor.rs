//! Dense symmetric index arrays, an Einstein-summation engine and the
//! information geometry derived from the expected information matrix.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor order {0} not supported (1..=4)")]
    BadOrder(usize),
    #[error("tensor dimension must be at least 1")]
    ZeroDim,
    #[error("symmetry groups do not partition the {0} index slots")]
    BadGroups(usize),
    #[error("data length {got} does not match dim^order = {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("malformed index spec `{spec}`: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("index `{label}` is not paired: {reason}")]
    UnpairedIndex { label: char, reason: String },
    #[error("dimension mismatch on index `{label}`: {a} vs {b}")]
    DimMismatch { label: char, a: usize, b: usize },
    #[error("non-regular information: eigenvalue {eigenvalue:e} of lambda_rs is not negative")]
    NonRegular { eigenvalue: f64 },
    #[error("contraction result has {0} free indices; expected a scalar")]
    NotScalar(usize),
}

/// Dense array of order 1..=4 over `dim` values per slot, with a declared
/// partition of slots into exchangeable groups.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor<T> {
    order: usize,
    dim: usize,
    groups: Vec<Vec<usize>>,
    data: Vec<T>,
}

fn check_shape(order: usize, dim: usize, groups: &[Vec<usize>]) -> Result<(), TensorError> {
    if !(1..=4).contains(&order) {
        return Err(TensorError::BadOrder(order));
    }
    if dim == 0 {
        return Err(TensorError::ZeroDim);
    }
    let mut seen = vec![false; order];
    for g in groups {
        for &s in g {
            if s >= order || seen[s] {
                return Err(TensorError::BadGroups(order));
            }
            seen[s] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(TensorError::BadGroups(order));
    }
    Ok(())
}

/// All permutations of `0..n` (n <= 4).
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

impl<T: Scalar> SymTensor<T> {
    pub fn zeros(order: usize, dim: usize, groups: Vec<Vec<usize>>) -> Result<Self, TensorError> {
        check_shape(order, dim, &groups)?;
        Ok(SymTensor { order, dim, groups, data: vec![T::zero(); dim.pow(order as u32)] })
    }

    /// Fully symmetric zero tensor.
    pub fn symmetric(order: usize, dim: usize) -> Result<Self, TensorError> {
        Self::zeros(order, dim, vec![(0..order).collect()])
    }

    /// Zero tensor whose slots are not exchangeable.
    pub fn plain(order: usize, dim: usize) -> Result<Self, TensorError> {
        Self::zeros(order, dim, (0..order).map(|s| vec![s]).collect())
    }

    /// Builds from raw row-major data and symmetrizes over the declared groups.
    pub fn from_vec(order: usize, dim: usize, groups: Vec<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        check_shape(order, dim, &groups)?;
        let expected = dim.pow(order as u32);
        if data.len() != expected {
            return Err(TensorError::BadLength { expected, got: data.len() });
        }
        let mut t = SymTensor { order, dim, groups, data };
        t.symmetrize();
        Ok(t)
    }

    pub fn from_fn(
        order: usize,
        dim: usize,
        groups: Vec<Vec<usize>>,
        f: impl Fn(&[usize]) -> T,
    ) -> Result<Self, TensorError> {
        check_shape(order, dim, &groups)?;
        let size = dim.pow(order as u32);
        let mut idx = vec![0usize; order];
        let mut data = Vec::with_capacity(size);
        for flat in 0..size {
            unflatten(flat, dim, &mut idx);
            data.push(f(&idx));
        }
        Self::from_vec(order, dim, groups, data)
    }

    /// Identity matrix, used as a mixed-variance Kronecker delta.
    pub fn kronecker(dim: usize) -> Result<Self, TensorError> {
        Self::from_fn(2, dim, vec![vec![0, 1]], |i| if i[0] == i[1] { T::one() } else { T::zero() })
    }

    /// Column vector from values.
    pub fn vector(values: Vec<T>) -> Result<Self, TensorError> {
        let dim = values.len();
        Self::from_vec(1, dim, vec![vec![0]], values)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &T {
        &self.data[self.offset(idx)]
    }

    /// Writes `v` at `idx` and at every position obtained by permuting slots
    /// within a symmetry group.
    pub fn set(&mut self, idx: &[usize], v: T) {
        for o in self.orbit(idx) {
            self.data[o] = v.clone();
        }
    }

    /// Slot permutations generated by the within-group permutations; the
    /// image of `idx` under `p` is `idx[p[s]]` at slot `s`.
    fn slot_perms(&self) -> Vec<[usize; 4]> {
        let mut out = vec![[0, 1, 2, 3]];
        for g in self.groups.iter().filter(|g| g.len() > 1) {
            let perms = permutations(g.len());
            let mut next = Vec::with_capacity(out.len() * perms.len());
            for base in &out {
                for p in &perms {
                    let mut c = *base;
                    for (k, &slot) in g.iter().enumerate() {
                        c[slot] = base[g[p[k]]];
                    }
                    next.push(c);
                }
            }
            out = next;
        }
        out
    }

    /// Sorted distinct offsets of the orbit of `idx`, written into `buf`.
    fn orbit_into(&self, idx: &[usize], perms: &[[usize; 4]], buf: &mut [usize; 24]) -> usize {
        for (k, p) in perms.iter().enumerate() {
            buf[k] = (0..self.order).fold(0, |acc, s| acc * self.dim + idx[p[s]]);
        }
        let b = &mut buf[..perms.len()];
        b.sort_unstable();
        let mut n = 0;
        for k in 0..b.len() {
            if k == 0 || b[k] != b[n - 1] {
                b[n] = b[k];
                n += 1;
            }
        }
        n
    }

    /// Distinct flat offsets reachable from `idx` by within-group permutations.
    fn orbit(&self, idx: &[usize]) -> Vec<usize> {
        let mut buf = [0usize; 24];
        let n = self.orbit_into(idx, &self.slot_perms(), &mut buf);
        buf[..n].to_vec()
    }

    fn is_canonical(&self, idx: &[usize]) -> bool {
        self.groups.iter().all(|g| g.windows(2).all(|w| idx[w[0]] <= idx[w[1]]))
    }

    /// Replaces every orbit by its average, so that symmetry holds exactly.
    pub fn symmetrize(&mut self) {
        if self.groups.iter().all(|g| g.len() < 2) {
            return;
        }
        let perms = self.slot_perms();
        let mut idx = [0usize; 4];
        let mut buf = [0usize; 24];
        for flat in 0..self.data.len() {
            unflatten(flat, self.dim, &mut idx[..self.order]);
            if !self.is_canonical(&idx) {
                continue;
            }
            let n = self.orbit_into(&idx, &perms, &mut buf);
            if n == 1 {
                continue;
            }
            let mut sum = T::zero();
            for &o in &buf[..n] {
                sum = sum + self.data[o].clone();
            }
            let avg = sum / T::from_usize(n);
            for &o in &buf[..n] {
                self.data[o] = avg.clone();
            }
        }
    }

    /// True when every orbit holds a single value.
    pub fn is_symmetric(&self) -> bool {
        let perms = self.slot_perms();
        let mut idx = [0usize; 4];
        let mut buf = [0usize; 24];
        for flat in 0..self.data.len() {
            unflatten(flat, self.dim, &mut idx[..self.order]);
            let v = &self.data[flat];
            let n = self.orbit_into(&idx, &perms, &mut buf);
            if buf[..n].iter().any(|&o| &self.data[o] != v) {
                return false;
            }
        }
        true
    }

    pub fn map(&self, f: impl Fn(&T) -> T) -> Self {
        SymTensor {
            order: self.order,
            dim: self.dim,
            groups: self.groups.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn scaled(&self, c: &T) -> Self {
        self.map(|x| x.clone() * c.clone())
    }

    /// Elementwise `self + c * other`; shapes must agree.
    pub fn axpy(&self, c: &T, other: &Self) -> Self {
        assert_eq!(self.data.len(), other.data.len(), "axpy shape mismatch");
        SymTensor {
            order: self.order,
            dim: self.dim,
            groups: self.groups.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() + c.clone() * b.clone())
                .collect(),
        }
    }

    pub fn to_f64(&self) -> SymTensor<f64> {
        SymTensor {
            order: self.order,
            dim: self.dim,
            groups: self.groups.clone(),
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Row-major d x d matrix view of an order-2 tensor in f64.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2);
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(&[i, j]).to_f64())
    }
}

fn unflatten(mut flat: usize, dim: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % dim;
        flat /= dim;
    }
}

// ---------------------------------------------------------------------------
// Contraction

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Variance {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Label {
    Index(char),
    Fixed(usize),
}

type Slots = Vec<(Variance, Label)>;

fn parse_slots(spec: &str, part: &str) -> Result<Slots, TensorError> {
    let bad = |reason: &str| TensorError::BadSpec { spec: spec.to_string(), reason: reason.to_string() };
    let mut out = Vec::new();
    let mut chars = part.chars().filter(|c| !c.is_whitespace());
    while let Some(v) = chars.next() {
        let var = match v {
            '^' => Variance::Upper,
            '_' => Variance::Lower,
            _ => return Err(bad("each slot must start with ^ or _")),
        };
        let l = chars.next().ok_or_else(|| bad("dangling variance marker"))?;
        let label = if let Some(k) = l.to_digit(10) {
            if k == 0 {
                return Err(bad("fixed components are 1-based"));
            }
            Label::Fixed(k as usize - 1)
        } else if l.is_ascii_alphabetic() {
            Label::Index(l)
        } else {
            return Err(bad("labels are ASCII letters or digits 1-9"));
        };
        out.push((var, label));
    }
    Ok(out)
}

/// Result of [`contract`].
#[derive(Clone, Debug, PartialEq)]
pub enum Contracted<T> {
    Scalar(T),
    Tensor(SymTensor<T>),
}

struct Work<T> {
    labels: Vec<char>,
    dims: Vec<usize>,
    data: Vec<T>,
}

/// Einstein summation over `tensors` following `spec`.
///
/// The spec lists one operand per tensor, separated by commas, optionally
/// followed by `->` and the free output slots. Each slot is `^x` (upper) or
/// `_x` (lower); `x` is a letter for a running index or a digit `1..9` for a
/// fixed component (1-based, so `1` is the interest parameter). A letter that
/// appears in the output must occur once among the operands with the same
/// variance; every other letter must occur exactly twice, once upper and once
/// lower, and is summed over its full range.
///
/// ```
/// use likadj::{contract_scalar, SymTensor};
/// let up = SymTensor::from_vec(2, 1, vec![vec![0, 1]], vec![-0.25f64]).unwrap();
/// let low = SymTensor::from_vec(2, 1, vec![vec![0, 1]], vec![-4.0f64]).unwrap();
/// assert_eq!(contract_scalar("^r^s,_r_s", &[&up, &low]).unwrap(), 1.0);
/// ```
pub fn contract<T: Scalar>(spec: &str, tensors: &[&SymTensor<T>]) -> Result<Contracted<T>, TensorError> {
    let bad = |reason: String| TensorError::BadSpec { spec: spec.to_string(), reason };
    let (lhs, rhs) = match spec.split_once("->") {
        Some((l, r)) => (l, r),
        None => (spec, ""),
    };
    let operands: Vec<Slots> = lhs.split(',').map(|p| parse_slots(spec, p)).collect::<Result<_, _>>()?;
    let output = parse_slots(spec, rhs)?;
    if operands.len() != tensors.len() {
        return Err(bad(format!("{} operands for {} tensors", operands.len(), tensors.len())));
    }
    for (k, (ops, t)) in operands.iter().zip(tensors).enumerate() {
        if ops.len() != t.order() {
            return Err(bad(format!("operand {} has {} slots but tensor order {}", k + 1, ops.len(), t.order())));
        }
    }

    // occurrences of each running index
    let mut occ: BTreeMap<char, Vec<(Variance, usize)>> = BTreeMap::new();
    for (ops, t) in operands.iter().zip(tensors) {
        for &(var, label) in ops {
            match label {
                Label::Index(c) => occ.entry(c).or_default().push((var, t.dim())),
                Label::Fixed(k) => {
                    if k >= t.dim() {
                        return Err(bad(format!("fixed component {} exceeds dimension {}", k + 1, t.dim())));
                    }
                }
            }
        }
    }
    let mut out_labels = Vec::new();
    for &(var, label) in &output {
        let c = match label {
            Label::Index(c) => c,
            Label::Fixed(_) => return Err(bad("fixed components cannot be output slots".into())),
        };
        if out_labels.contains(&c) {
            return Err(TensorError::UnpairedIndex { label: c, reason: "repeated in the output".into() });
        }
        match occ.get(&c).map(|v| v.as_slice()) {
            Some([(v, _)]) if *v == var => {}
            Some([_]) => {
                return Err(TensorError::UnpairedIndex { label: c, reason: "output variance differs".into() })
            }
            _ => {
                return Err(TensorError::UnpairedIndex {
                    label: c,
                    reason: "free index must appear exactly once among the operands".into(),
                })
            }
        }
        out_labels.push(c);
    }
    let mut dim_of: BTreeMap<char, usize> = BTreeMap::new();
    for (&c, list) in &occ {
        if !out_labels.contains(&c) {
            let ok = list.len() == 2 && list[0].0 != list[1].0;
            if !ok {
                return Err(TensorError::UnpairedIndex {
                    label: c,
                    reason: format!("appears {} time(s); summed indices need one upper and one lower", list.len()),
                });
            }
        }
        let d0 = list[0].1;
        for &(_, d) in list {
            if d != d0 {
                return Err(TensorError::DimMismatch { label: c, a: d0, b: d });
            }
        }
        dim_of.insert(c, d0);
    }

    let mut works: Vec<Work<T>> = operands.iter().zip(tensors).map(|(ops, t)| to_work(ops, t)).collect();
    while works.len() > 1 {
        let (i, j) = pick_pair(&works);
        let b = works.remove(j);
        let a = works.remove(i);
        works.push(pair_contract(&a, &b));
    }
    let last = works.pop().expect("at least one operand");
    if out_labels.is_empty() {
        return Ok(Contracted::Scalar(last.data[0].clone()));
    }
    if out_labels.len() > 4 {
        return Err(TensorError::BadOrder(out_labels.len()));
    }
    let dim = dim_of[&out_labels[0]];
    if out_labels.iter().any(|c| dim_of[c] != dim) {
        return Err(bad("output slots must share one dimension".into()));
    }
    let order = out_labels.len();
    let pos: Vec<usize> = out_labels.iter().map(|c| last.labels.iter().position(|x| x == c).unwrap()).collect();
    let strides = strides_of(&last.dims);
    let t = SymTensor::from_fn(order, dim, (0..order).map(|s| vec![s]).collect(), |idx| {
        let off: usize = idx.iter().zip(&pos).map(|(&v, &p)| v * strides[p]).sum();
        last.data[off].clone()
    })?;
    Ok(Contracted::Tensor(t))
}

/// Like [`contract`] but requires a full contraction.
pub fn contract_scalar<T: Scalar>(spec: &str, tensors: &[&SymTensor<T>]) -> Result<T, TensorError> {
    match contract(spec, tensors)? {
        Contracted::Scalar(s) => Ok(s),
        Contracted::Tensor(t) => Err(TensorError::NotScalar(t.order())),
    }
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Slices fixed components and traces labels repeated inside one operand.
fn to_work<T: Scalar>(ops: &Slots, t: &SymTensor<T>) -> Work<T> {
    let mut labels: Vec<char> = Vec::new();
    let mut traced: Vec<char> = Vec::new();
    for &(_, l) in ops {
        if let Label::Index(c) = l {
            if labels.contains(&c) {
                labels.retain(|&x| x != c);
                traced.push(c);
            } else if !traced.contains(&c) {
                labels.push(c);
            }
        }
    }
    let d = t.dim();
    let dims = vec![d; labels.len()];
    if traced.is_empty() && labels.len() == ops.len() {
        return Work { labels, dims, data: t.data().to_vec() };
    }
    let size: usize = dims.iter().product();
    let mut data = Vec::with_capacity(size);
    let mut free = vec![0usize; labels.len()];
    let mut tr = vec![0usize; traced.len()];
    let tr_size = d.pow(traced.len() as u32);
    let mut idx = vec![0usize; ops.len()];
    for flat in 0..size {
        unflatten_dims(flat, &dims, &mut free);
        let mut acc = T::zero();
        for tflat in 0..tr_size {
            unflatten(tflat, d, &mut tr);
            for (slot, &(_, l)) in ops.iter().enumerate() {
                idx[slot] = match l {
                    Label::Fixed(k) => k,
                    Label::Index(c) => match labels.iter().position(|&x| x == c) {
                        Some(p) => free[p],
                        None => tr[traced.iter().position(|&x| x == c).unwrap()],
                    },
                };
            }
            acc = acc + t.get(&idx).clone();
        }
        data.push(acc);
    }
    Work { labels, dims, data }
}

fn unflatten_dims(mut flat: usize, dims: &[usize], idx: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] = flat % dims[k];
        flat /= dims[k];
    }
}

/// Greedy choice: the pair sharing an index with the smallest result, else
/// the two smallest operands.
fn pick_pair<T>(works: &[Work<T>]) -> (usize, usize) {
    let mut best: Option<(bool, usize, usize, usize, usize)> = None;
    for i in 0..works.len() {
        for j in i + 1..works.len() {
            let shared = works[i].labels.iter().filter(|c| works[j].labels.contains(c)).count();
            let mut result = 1usize;
            let mut cost = 1usize;
            for (k, c) in works[i].labels.iter().enumerate() {
                cost *= works[i].dims[k];
                if !works[j].labels.contains(c) {
                    result *= works[i].dims[k];
                }
            }
            for (k, c) in works[j].labels.iter().enumerate() {
                if !works[i].labels.contains(c) {
                    cost *= works[j].dims[k];
                    result *= works[j].dims[k];
                }
            }
            let key = (shared == 0, result, cost, i, j);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
    }
    let b = best.expect("two operands");
    (b.3, b.4)
}

fn pair_contract<T: Scalar>(a: &Work<T>, b: &Work<T>) -> Work<T> {
    let shared: Vec<char> = a.labels.iter().copied().filter(|c| b.labels.contains(c)).collect();
    let mut labels = Vec::new();
    let mut dims = Vec::new();
    for (k, c) in a.labels.iter().enumerate() {
        if !shared.contains(c) {
            labels.push(*c);
            dims.push(a.dims[k]);
        }
    }
    for (k, c) in b.labels.iter().enumerate() {
        if !shared.contains(c) {
            labels.push(*c);
            dims.push(b.dims[k]);
        }
    }
    let sa = strides_of(&a.dims);
    let sb = strides_of(&b.dims);
    let stride_in = |w: &Work<T>, s: &[usize], c: char| w.labels.iter().position(|&x| x == c).map_or(0, |p| s[p]);
    let res_a: Vec<usize> = labels.iter().map(|&c| stride_in(a, &sa, c)).collect();
    let res_b: Vec<usize> = labels.iter().map(|&c| stride_in(b, &sb, c)).collect();
    let sh_dims: Vec<usize> = shared.iter().map(|&c| a.dims[a.labels.iter().position(|&x| x == c).unwrap()]).collect();
    let sh_a: Vec<usize> = shared.iter().map(|&c| stride_in(a, &sa, c)).collect();
    let sh_b: Vec<usize> = shared.iter().map(|&c| stride_in(b, &sb, c)).collect();
    let size: usize = dims.iter().product();
    let sh_size: usize = sh_dims.iter().product();
    let mut data = Vec::with_capacity(size);
    let mut ri = vec![0usize; labels.len()];
    let mut si = vec![0usize; shared.len()];
    for flat in 0..size {
        unflatten_dims(flat, &dims, &mut ri);
        let oa: usize = ri.iter().zip(&res_a).map(|(v, s)| v * s).sum();
        let ob: usize = ri.iter().zip(&res_b).map(|(v, s)| v * s).sum();
        let mut acc = T::zero();
        for sflat in 0..sh_size {
            unflatten_dims(sflat, &sh_dims, &mut si);
            let pa: usize = si.iter().zip(&sh_a).map(|(v, s)| v * s).sum();
            let pb: usize = si.iter().zip(&sh_b).map(|(v, s)| v * s).sum();
            acc = acc + a.data[oa + pa].clone() * b.data[ob + pb].clone();
        }
        data.push(acc);
    }
    Work { labels, dims, data }
}

// ---------------------------------------------------------------------------
// Information geometry

/// `lambda^{rs}`, `eta`, `tau^{rs}` and `nu^{rs}` at a regular point.
#[derive(Clone, Debug)]
pub struct InfoGeometry<T> {
    pub lambda_up: SymTensor<T>,
    pub eta: T,
    pub tau: SymTensor<T>,
    pub nu: SymTensor<T>,
    /// Ratio of largest to smallest eigenvalue magnitude of `lambda_rs`.
    pub condition: f64,
    pub eigenvalues: Vec<f64>,
}

/// Eigenvalues of a symmetric order-2 tensor, ascending.
pub fn eigenvalues(lam2: &SymTensor<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(lam2.to_matrix());
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Inverse of a symmetric positive definite matrix by an `LDL^T`
/// factorization without square roots, exact over rationals. Returns the
/// index of the first non-positive pivot on failure.
pub(crate) fn spd_inverse<T: Scalar>(a: &[T], d: usize) -> Result<Vec<T>, usize> {
    let mut l = vec![T::zero(); d * d];
    let mut diag = vec![T::zero(); d];
    for j in 0..d {
        let mut dj = a[j * d + j].clone();
        for k in 0..j {
            dj = dj - l[j * d + k].clone() * l[j * d + k].clone() * diag[k].clone();
        }
        if dj <= T::zero() {
            return Err(j);
        }
        diag[j] = dj;
        l[j * d + j] = T::one();
        for i in j + 1..d {
            let mut v = a[i * d + j].clone();
            for k in 0..j {
                v = v - l[i * d + k].clone() * l[j * d + k].clone() * diag[k].clone();
            }
            l[i * d + j] = v / diag[j].clone();
        }
    }
    let mut inv = vec![T::zero(); d * d];
    for col in 0..d {
        // L y = e_col
        let mut y = vec![T::zero(); d];
        for i in 0..d {
            let mut v = if i == col { T::one() } else { T::zero() };
            for k in 0..i {
                v = v - l[i * d + k].clone() * y[k].clone();
            }
            y[i] = v;
        }
        for i in 0..d {
            y[i] = y[i].clone() / diag[i].clone();
        }
        // L^T x = y
        for i in (0..d).rev() {
            let mut v = y[i].clone();
            for k in i + 1..d {
                v = v - l[k * d + i].clone() * inv[k * d + col].clone();
            }
            inv[i * d + col] = v;
        }
    }
    Ok(inv)
}

/// Builds the information geometry from `lambda_rs`, which must be negative
/// definite.
pub fn info_geometry<T: Scalar>(lam2: &SymTensor<T>) -> Result<InfoGeometry<T>, TensorError> {
    if lam2.order() != 2 {
        return Err(TensorError::BadOrder(lam2.order()));
    }
    let d = lam2.dim();
    let eig = eigenvalues(&lam2.to_f64());
    let scale = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let top = *eig.last().unwrap();
    if !(top < -1e-13 * scale) || !top.is_finite() {
        return Err(TensorError::NonRegular { eigenvalue: top });
    }
    let neg: Vec<T> = lam2.data().iter().map(|x| -x.clone()).collect();
    let inv = spd_inverse(&neg, d).map_err(|_| TensorError::NonRegular { eigenvalue: top })?;
    let lambda_up = SymTensor::from_vec(2, d, vec![vec![0, 1]], inv.into_iter().map(|x| -x).collect())?;
    let l11 = lambda_up.get(&[0, 0]).clone();
    let eta = -(T::one() / l11);
    let tau = SymTensor::from_fn(2, d, vec![vec![0, 1]], |i| {
        eta.clone() * lambda_up.get(&[0, i[0]]).clone() * lambda_up.get(&[0, i[1]]).clone()
    })?;
    // nu^{1s} = lambda^{1s}(1 + eta lambda^{11}) vanishes identically
    let nu = SymTensor::from_fn(2, d, vec![vec![0, 1]], |i| {
        if i[0] == 0 || i[1] == 0 {
            T::zero()
        } else {
            lambda_up.get(i).clone() + tau.get(i).clone()
        }
    })?;
    let small = eig.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
    Ok(InfoGeometry { lambda_up, eta, tau, nu, condition: scale / small, eigenvalues: eig })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn sym2(d: usize, v: &[f64]) -> SymTensor<f64> {
        SymTensor::from_vec(2, d, vec![vec![0, 1]], v.to_vec()).unwrap()
    }

    #[test]
    fn set_writes_orbit() {
        let mut t = SymTensor::<f64>::zeros(3, 3, vec![vec![0, 1], vec![2]]).unwrap();
        t.set(&[0, 2, 1], 5.0);
        assert_eq!(*t.get(&[2, 0, 1]), 5.0);
        assert_eq!(*t.get(&[0, 1, 2]), 0.0);
        assert!(t.is_symmetric());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert_eq!(SymTensor::<f64>::symmetric(5, 2).unwrap_err(), TensorError::BadOrder(5));
        assert_eq!(SymTensor::<f64>::symmetric(2, 0).unwrap_err(), TensorError::ZeroDim);
        assert!(SymTensor::<f64>::zeros(3, 2, vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn trace_with_inverse_d1() {
        let n = 7.0;
        let low = sym2(1, &[-n]);
        let up = sym2(1, &[-1.0 / n]);
        assert_eq!(contract_scalar("^r^s,_r_s", &[&up, &low]).unwrap(), 1.0);
    }

    #[test]
    fn kronecker_identity() {
        let v = SymTensor::vector(vec![1.5, -2.0, 3.25]).unwrap();
        let delta = SymTensor::<f64>::kronecker(3).unwrap();
        match contract("^r,_r^s->^s", &[&v, &delta]).unwrap() {
            Contracted::Tensor(t) => assert_eq!(t.data(), v.data()),
            _ => panic!("expected a tensor"),
        }
    }

    #[test]
    fn spec_errors() {
        let a = sym2(2, &[1.0, 0.0, 0.0, 1.0]);
        let b = sym2(3, &[0.0; 9]);
        assert!(matches!(contract_scalar("^r^s,_r_s", &[&a, &b]), Err(TensorError::DimMismatch { .. })));
        assert!(matches!(contract_scalar("^r^s,^r_s", &[&a, &a]), Err(TensorError::UnpairedIndex { label: 'r', .. })));
        assert!(matches!(contract_scalar("^r^r,_r_s", &[&a, &a]), Err(TensorError::UnpairedIndex { .. })));
        assert!(matches!(contract_scalar("^r^s", &[&a]), Err(TensorError::UnpairedIndex { .. })));
        assert!(matches!(contract_scalar("^r^s,_r", &[&a, &a]), Err(TensorError::BadSpec { .. })));
        assert!(matches!(contract_scalar("^3^s,_s_1", &[&a, &a]), Err(TensorError::BadSpec { .. })));
    }

    #[test]
    fn in_operand_trace() {
        let a = sym2(2, &[2.0, 1.0, 1.0, 3.0]);
        let delta = SymTensor::<f64>::kronecker(2).unwrap();
        assert_eq!(contract_scalar("^r_r,^s_s", &[&delta, &delta]).unwrap(), 4.0);
        assert_eq!(contract_scalar("^r_s,^s_r", &[&delta, &a]).unwrap(), 5.0);
    }

    #[test]
    fn geometry_d1() {
        let n = 12.0;
        let g = info_geometry(&sym2(1, &[-n])).unwrap();
        assert_eq!(g.eta, n);
        assert!((g.tau.get(&[0, 0]) - 1.0 / n).abs() < 1e-18);
        assert_eq!(*g.nu.get(&[0, 0]), 0.0);
    }

    #[test]
    fn geometry_rejects_indefinite() {
        let err = info_geometry(&sym2(2, &[-1.0, 0.0, 0.0, 2.0])).unwrap_err();
        assert_eq!(err, TensorError::NonRegular { eigenvalue: 2.0 });
        assert!(info_geometry(&sym2(2, &[-1.0, -1.0, -1.0, -1.0])).is_err());
    }

    #[test]
    fn geometry_exact_rational() {
        let q = |n, d| BigRational::from_ratio(n, d);
        let lam = SymTensor::from_vec(2, 2, vec![vec![0, 1]], vec![q(-3, 1), q(1, 2), q(1, 2), q(-2, 1)]).unwrap();
        let g = info_geometry(&lam).unwrap();
        // lambda lambda^{-1} = I exactly
        for i in 0..2 {
            for j in 0..2 {
                let mut s = q(0, 1);
                for k in 0..2 {
                    s = s + lam.get(&[i, k]).clone() * g.lambda_up.get(&[k, j]).clone();
                }
                assert_eq!(s, if i == j { q(1, 1) } else { q(0, 1) });
            }
        }
        let e = -(q(1, 1) / g.lambda_up.get(&[0, 0]).clone());
        assert_eq!(g.eta, e);
    }
}
