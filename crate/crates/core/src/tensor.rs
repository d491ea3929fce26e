//! Canonical-format tensors.
//!
//! A [`TensorSum`] is a list of rank-one terms, each a product of `d`
//! one-dimensional factors. Factors are either sparse eigen-coefficient vectors
//! ([`SparseVec`], modes counted from 1) or nodal piecewise-linear functions on
//! a uniform Dirichlet mesh ([`GridFunction`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SeparableOperator;

/// Operations a one-dimensional factor must support.
pub trait Factor: Clone {
    /// `L²` inner product of two factors.
    fn dot(&self, other: &Self) -> Result<f64>;
    /// Number of stored scalars.
    fn support(&self) -> usize;
    fn scale(&mut self, c: f64);

    fn norm(&self) -> f64 {
        self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    /// Sorts by mode, merges duplicates, and rejects mode 0.
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::domain("indices and values differ in length"));
        }
        if indices.contains(&0) {
            return Err(Error::domain("mode indices start at 1"));
        }
        let mut pairs: Vec<(usize, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        let mut out = SparseVec::default();
        for (k, v) in pairs {
            if out.indices.last() == Some(&k) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(k);
                out.values.push(v);
            }
        }
        Ok(out)
    }

    /// Coefficients for modes `1..=values.len()`.
    pub fn dense(values: Vec<f64>) -> Self {
        SparseVec {
            indices: (1..=values.len()).collect(),
            values,
        }
    }

    pub fn unit(k: usize) -> Self {
        SparseVec {
            indices: vec![k],
            values: vec![1.0],
        }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.indices
            .binary_search(&k)
            .map(|i| self.values[i])
            .unwrap_or(0.0)
    }

    pub fn max_mode(&self) -> usize {
        self.indices.last().copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// `Σ w(k) a_k b_k` over the common support.
    pub fn weighted_dot(&self, other: &SparseVec, w: impl Fn(usize) -> f64) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += w(self.indices[i]) * self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Keeps modes `1..=m`.
    pub fn truncated(&self, m: usize) -> SparseVec {
        let keep = self.indices.partition_point(|&k| k <= m);
        SparseVec {
            indices: self.indices[..keep].to_vec(),
            values: self.values[..keep].to_vec(),
        }
    }

    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> SparseVec {
        SparseVec {
            indices: self.indices.clone(),
            values: self.iter().map(|(k, v)| f(k, v)).collect(),
        }
    }
}

impl Factor for SparseVec {
    fn dot(&self, other: &Self) -> Result<f64> {
        Ok(self.weighted_dot(other, |_| 1.0))
    }

    fn support(&self) -> usize {
        self.indices.len()
    }

    fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }
}

/// Continuous piecewise-linear function on `[0, L]` with zero boundary values,
/// stored at the `n` interior nodes of a uniform mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub length: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize, length: f64) -> Self {
        GridFunction {
            length,
            values: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn sample(n: usize, length: f64, f: impl Fn(f64) -> f64) -> Self {
        let h = length / (n + 1) as f64;
        GridFunction {
            length,
            values: (1..=n).map(|i| f(i as f64 * h)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n() + 1) as f64
    }

    /// Nodal value at node `i` of the closed mesh (`0` and `n + 1` are boundary nodes).
    pub fn node(&self, i: usize) -> f64 {
        if i == 0 || i > self.n() {
            0.0
        } else {
            self.values[i - 1]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if !(0.0..=self.length).contains(&x) {
            return 0.0;
        }
        let t = x / self.spacing();
        let i = (t.floor() as usize).min(self.n());
        let s = t - i as f64;
        (1.0 - s) * self.node(i) + s * self.node(i + 1)
    }

    /// Interpolant on a mesh with `n` interior nodes.
    pub fn resample(&self, n: usize) -> GridFunction {
        if n == self.n() {
            return self.clone();
        }
        GridFunction::sample(n, self.length, |x| self.eval(x))
    }

    fn check_mesh(&self, other: &GridFunction) -> Result<()> {
        if self.n() != other.n() || (self.length - other.length).abs() > 1e-14 * self.length {
            return Err(Error::domain(format!(
                "grid mismatch: {} nodes on length {} vs {} nodes on length {}",
                self.n(),
                self.length,
                other.n(),
                other.length
            )));
        }
        Ok(())
    }

    /// `vᵀ K w` for `K = (a/h) tridiag(-1, 2, -1)`.
    pub fn energy(&self, other: &GridFunction, coefficient: f64) -> Result<f64> {
        self.check_mesh(other)?;
        let (v, w) = (&self.values, &other.values);
        let mut acc = 0.0;
        for i in 0..v.len() {
            acc += 2.0 * v[i] * w[i];
            if i + 1 < v.len() {
                acc -= v[i] * w[i + 1] + v[i + 1] * w[i];
            }
        }
        Ok(coefficient / self.spacing() * acc)
    }
}

impl Factor for GridFunction {
    /// `vᵀ M w` for `M = (h/6) tridiag(1, 4, 1)`.
    fn dot(&self, other: &Self) -> Result<f64> {
        self.check_mesh(other)?;
        let (v, w) = (&self.values, &other.values);
        let mut acc = 0.0;
        for i in 0..v.len() {
            acc += 4.0 * v[i] * w[i];
            if i + 1 < v.len() {
                acc += v[i] * w[i + 1] + v[i + 1] * w[i];
            }
        }
        Ok(self.spacing() / 6.0 * acc)
    }

    fn support(&self) -> usize {
        self.values.len()
    }

    fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneTerm<F> {
    pub factors: Vec<F>,
}

impl<F: Factor> RankOneTerm<F> {
    pub fn new(factors: Vec<F>) -> Self {
        RankOneTerm { factors }
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    pub fn scaled(mut self, c: f64) -> Self {
        if let Some(f) = self.factors.first_mut() {
            f.scale(c);
        }
        self
    }

    /// `Π_j ⟨u_j, v_j⟩`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.factors
            .iter()
            .zip(&other.factors)
            .try_fold(1.0, |acc, (a, b)| Ok(acc * a.dot(b)?))
    }

    /// Rescales the factors so their `L²` norms agree, keeping the product.
    pub fn balanced(mut self) -> Self {
        let norms: Vec<f64> = self.factors.iter().map(|f| f.norm()).collect();
        if norms.contains(&0.0) {
            return self;
        }
        let geo = (norms.iter().map(|n| n.ln()).sum::<f64>() / norms.len() as f64).exp();
        for (f, n) in self.factors.iter_mut().zip(norms) {
            f.scale(geo / n);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSum<F> {
    pub d: usize,
    pub terms: Vec<RankOneTerm<F>>,
}

pub type EigenTensor = TensorSum<SparseVec>;
pub type NodalTensor = TensorSum<GridFunction>;

impl<F: Factor> TensorSum<F> {
    pub fn zero(d: usize) -> Self {
        TensorSum { d, terms: vec![] }
    }

    pub fn new(d: usize, terms: Vec<RankOneTerm<F>>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.d() != d) {
            return Err(Error::domain(format!(
                "term with {} factors in a sum of dimension {d}",
                t.d()
            )));
        }
        Ok(TensorSum { d, terms })
    }

    pub fn rank_one(term: RankOneTerm<F>) -> Self {
        TensorSum {
            d: term.d(),
            terms: vec![term],
        }
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        TensorSum {
            d: self.d,
            terms: self.terms.iter().cloned().map(|t| t.scaled(c)).collect(),
        }
    }

    /// Concatenation of the term lists.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::domain("dimension mismatch in sum"));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(TensorSum { d: self.d, terms })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    pub fn l2_norm(&self) -> Result<f64> {
        Ok(l2_inner(self, self)?.max(0.0).sqrt())
    }
}

/// `Σ_{k,l} Π_j ⟨u_j^{(k)}, v_j^{(l)}⟩`.
pub fn l2_inner<F: Factor>(u: &TensorSum<F>, v: &TensorSum<F>) -> Result<f64> {
    if u.d != v.d {
        return Err(Error::domain("dimension mismatch in inner product"));
    }
    let mut acc = 0.0;
    for a in &u.terms {
        for b in &v.terms {
            acc += a.dot(b)?;
        }
    }
    Ok(acc)
}

/// `Σ_k Σ_j #supp(g_j^{(k)})`.
pub fn sparsity_cost(g: &EigenTensor) -> usize {
    g.terms
        .iter()
        .flat_map(|t| t.factors.iter())
        .map(|f| f.support())
        .sum()
}

/// Admissible sets `R_{m,j} = {1, …, m^A}` with one exponent per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSet {
    pub exponents: Vec<u32>,
}

impl RestrictionSet {
    pub fn uniform(d: usize, exponent: u32) -> Self {
        RestrictionSet {
            exponents: vec![exponent; d],
        }
    }

    /// Largest admissible mode in dimension `j` for a support of size `m`.
    pub fn bound(&self, j: usize, m: usize) -> usize {
        let a = self.exponents.get(j).or(self.exponents.last()).copied().unwrap_or(1);
        m.saturating_pow(a)
    }
}

pub fn check_restriction(g: &EigenTensor, set: &RestrictionSet) -> bool {
    g.terms.iter().all(|t| {
        t.factors.iter().enumerate().all(|(j, f)| {
            let m = f.indices.len();
            f.max_mode() <= set.bound(j, m)
        })
    })
}

/// Keeps modes `1..=m` of every factor. Returns the truncated term and the
/// bound `(λ*_{m+1})^{-δ/2} ‖τ‖_{t+δ}` on the `H^t` error.
pub fn truncate_rank_one(
    op: &SeparableOperator,
    tau: &RankOneTerm<SparseVec>,
    m: usize,
    t: f64,
    delta: f64,
) -> Result<(RankOneTerm<SparseVec>, f64)> {
    if !(delta > 0.0) {
        return Err(Error::domain("truncation needs delta > 0"));
    }
    if tau.d() != op.d() {
        return Err(Error::domain("term and operator dimensions differ"));
    }
    let lambda_star = op
        .factors
        .iter()
        .map(|f| f.lambda(m + 1))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let full = op.ht_norm(&TensorSum::rank_one(tau.clone()), t + delta)?;
    let bound = lambda_star.powf(-delta / 2.0) * full;
    let kept = RankOneTerm::new(tau.factors.iter().map(|f| f.truncated(m)).collect());
    Ok((kept, bound))
}

/// `max{‖g‖_s, ‖g^{(k)}‖_s}` for the given representation.
pub fn tripnorm_upper(op: &SeparableOperator, g: &EigenTensor, s: f64) -> Result<f64> {
    let mut best = op.ht_norm(g, s)?;
    for term in &g.terms {
        best = best.max(op.ht_norm(&TensorSum::rank_one(term.clone()), s)?);
    }
    Ok(best)
}

/// Plug-in upper bound `‖v - g‖_t + μ·tripnorm_upper(g, t + ζ)` on `K_r(v, μ)`.
pub fn kfunc_plugin(
    op: &SeparableOperator,
    v: &EigenTensor,
    g: &EigenTensor,
    mu: f64,
    t: f64,
    zeta: f64,
) -> Result<f64> {
    let residual = op.ht_norm(&v.minus(g)?, t)?;
    Ok(residual + mu * tripnorm_upper(op, g, t + zeta)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(idx: &[usize], val: &[f64]) -> SparseVec {
        SparseVec::new(idx.to_vec(), val.to_vec()).unwrap()
    }

    #[test]
    fn sparse_vec_merges_and_sorts() {
        let v = sv(&[3, 1, 3], &[1.0, 2.0, 0.5]);
        assert_eq!(v.indices, vec![1, 3]);
        assert_eq!(v.values, vec![2.0, 1.5]);
        assert!(SparseVec::new(vec![0], vec![1.0]).is_err());
    }

    #[test]
    fn orthonormal_modes() {
        let e11 = TensorSum::rank_one(RankOneTerm::new(vec![SparseVec::unit(1); 2]));
        let e22 = TensorSum::rank_one(RankOneTerm::new(vec![SparseVec::unit(2); 2]));
        assert_eq!(l2_inner(&e11, &e11).unwrap(), 1.0);
        assert_eq!(l2_inner(&e11, &e22).unwrap(), 0.0);
    }

    #[test]
    fn sparsity_cost_counts() {
        let t = RankOneTerm::new(vec![sv(&[1, 2, 3], &[1.0; 3]); 4]);
        assert_eq!(sparsity_cost(&TensorSum::rank_one(t)), 12);
        assert_eq!(sparsity_cost(&TensorSum::zero(3)), 0);
        let a = RankOneTerm::new(vec![sv(&[1, 2], &[1.0; 2]), sv(&[1, 2], &[1.0; 2])]);
        let b = RankOneTerm::new(vec![sv(&[1, 2, 3], &[1.0; 3]), sv(&[5], &[1.0])]);
        assert_eq!(sparsity_cost(&TensorSum::new(2, vec![a, b]).unwrap()), 8);
    }

    #[test]
    fn restriction_cases() {
        let set1 = RestrictionSet::uniform(2, 1);
        let ok = TensorSum::rank_one(RankOneTerm::new(vec![sv(&[1, 2, 3], &[1.0; 3]); 2]));
        assert!(check_restriction(&ok, &set1));
        let bad = TensorSum::rank_one(RankOneTerm::new(vec![sv(&[1, 3], &[1.0; 2]); 2]));
        assert!(!check_restriction(&bad, &set1));
        let set2 = RestrictionSet::uniform(1, 2);
        let edge = TensorSum::rank_one(RankOneTerm::new(vec![sv(&[1, 2, 9], &[1.0; 3])]));
        assert!(check_restriction(&edge, &set2));
        let over = TensorSum::rank_one(RankOneTerm::new(vec![sv(&[1, 2, 10], &[1.0; 3])]));
        assert!(!check_restriction(&over, &set2));
    }

    #[test]
    fn grid_mass_and_stiffness_match_closed_forms() {
        // ∫ x(1-x) dx over the interpolant, and ∫ (1 - 2x)² dx.
        let n = 999;
        let g = GridFunction::sample(n, 1.0, |x| x * (1.0 - x));
        let one = GridFunction::sample(n, 1.0, |_| 1.0);
        let h = g.spacing();
        let mass = g.dot(&g).unwrap();
        assert!((mass - 1.0 / 30.0).abs() < 2.0 * h * h);
        let stiff = g.energy(&g, 1.0).unwrap();
        assert!((stiff - 1.0 / 3.0).abs() < 2.0 * h * h);
        assert!((one.dot(&g).unwrap() - 1.0 / 6.0).abs() < 2.0 * h);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = GridFunction::zeros(4, 1.0);
        let b = GridFunction::zeros(5, 1.0);
        assert!(a.dot(&b).is_err());
    }

    #[test]
    fn resample_reproduces_linear_pieces() {
        let g = GridFunction::sample(3, 1.0, |x| x.min(1.0 - x));
        let fine = g.resample(7);
        assert!((fine.eval(0.5) - 0.5).abs() < 1e-15);
        assert!((fine.eval(0.125) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn balanced_keeps_product() {
        let t = RankOneTerm::new(vec![sv(&[1], &[8.0]), sv(&[2], &[0.5])]);
        let b = t.clone().balanced();
        assert!((b.factors[0].values[0] - 2.0).abs() < 1e-15);
        assert!((b.factors[1].values[0] - 2.0).abs() < 1e-15);
        let e = TensorSum::rank_one(t);
        let f = TensorSum::rank_one(b);
        assert!((l2_inner(&e, &f).unwrap() - 16.0).abs() < 1e-12);
    }
}
