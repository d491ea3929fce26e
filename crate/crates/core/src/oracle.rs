//! Brute-force references: dense spectral blocks, eigen-exact solutions,
//! dense matrix exponentials of 1D finite-element pencils, and error norms.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FactorSpectrum, SeparableOperator};
use crate::quad::GaussLegendre;
use crate::tensor::{EigenTensor, Factor, GridFunction, NodalTensor, SparseVec};

/// Entry cap of a [`DenseCoefficientBlock`].
pub const DENSE_CAP: u128 = 1 << 24;
/// Largest 1D pencil handled by [`FemExponential`].
pub const FEM_DENSE_CAP: usize = 4096;

/// Coefficients `⟨v, e_ν⟩` on a product of per-dimension mode lists,
/// stored row-major (last dimension fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCoefficientBlock {
    pub modes: Vec<Vec<usize>>,
    pub data: Vec<f64>,
}

fn product_size(modes: &[Vec<usize>]) -> u128 {
    modes.iter().map(|m| m.len() as u128).product()
}

/// `out += c · f₀ ⊗ f₁ ⊗ …` on a row-major block.
fn outer_accumulate(out: &mut [f64], factors: &[Vec<f64>], c: f64) {
    if factors.len() == 1 {
        for (o, v) in out.iter_mut().zip(&factors[0]) {
            *o += c * v;
        }
        return;
    }
    let stride = out.len() / factors[0].len();
    for (chunk, &a) in out.chunks_mut(stride).zip(&factors[0]) {
        if a != 0.0 {
            outer_accumulate(chunk, &factors[1..], c * a);
        }
    }
}

/// `Σ_i data_i Π_j vectors[j][i_j]`.
fn contract(data: &[f64], vectors: &[Vec<f64>]) -> f64 {
    if vectors.len() == 1 {
        return data.iter().zip(&vectors[0]).map(|(a, b)| a * b).sum();
    }
    let stride = data.len() / vectors[0].len();
    data.chunks(stride)
        .zip(&vectors[0])
        .map(|(chunk, &a)| if a == 0.0 { 0.0 } else { a * contract(chunk, &vectors[1..]) })
        .sum()
}

impl DenseCoefficientBlock {
    pub fn zeros(modes: Vec<Vec<usize>>, cap: u128) -> Result<Self> {
        let size = product_size(&modes);
        if size > cap {
            return Err(Error::Capacity {
                what: "dense coefficient block",
                needed: size,
                cap,
            });
        }
        Ok(DenseCoefficientBlock {
            data: vec![0.0; size as usize],
            modes,
        })
    }

    /// Block over `{1..M_1} × … × {1..M_d}`.
    pub fn contiguous(dims: &[usize]) -> Result<Self> {
        Self::zeros(dims.iter().map(|&m| (1..=m).collect()).collect(), DENSE_CAP)
    }

    /// Coefficients of `v` on `{1..M_j}`; support outside the box is an error.
    pub fn from_tensor(v: &EigenTensor, dims: &[usize]) -> Result<Self> {
        if dims.len() != v.d {
            return Err(Error::domain("block and tensor dimensions differ"));
        }
        let mut block = Self::contiguous(dims)?;
        block.accumulate(v)?;
        Ok(block)
    }

    /// Coefficients of `v` on the product of the per-dimension support unions.
    pub fn from_tensor_support(v: &EigenTensor, cap: u128) -> Result<Self> {
        let modes: Vec<Vec<usize>> = (0..v.d)
            .map(|j| {
                let mut m: Vec<usize> = v
                    .terms
                    .iter()
                    .flat_map(|t| t.factors[j].indices.iter().copied())
                    .collect();
                m.sort_unstable();
                m.dedup();
                m
            })
            .collect();
        let mut block = Self::zeros(modes, cap)?;
        block.accumulate(v)?;
        Ok(block)
    }

    /// Coefficients of `v` on the given per-dimension mode lists.
    pub fn on_modes(v: &EigenTensor, modes: Vec<Vec<usize>>) -> Result<Self> {
        let mut block = Self::zeros(modes, DENSE_CAP)?;
        block.accumulate(v)?;
        Ok(block)
    }

    fn accumulate(&mut self, v: &EigenTensor) -> Result<()> {
        if self.data.is_empty() {
            return Ok(());
        }
        for term in &v.terms {
            let mut dense = Vec::with_capacity(self.d());
            for (f, modes) in term.factors.iter().zip(&self.modes) {
                let mut row = vec![0.0; modes.len()];
                for (k, c) in f.iter() {
                    let pos = modes.binary_search(&k).map_err(|_| {
                        Error::domain(format!("mode {k} outside the block"))
                    })?;
                    row[pos] = c;
                }
                dense.push(row);
            }
            outer_accumulate(&mut self.data, &dense, 1.0);
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.modes.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `λ_ν` for every entry.
    pub fn lambda(&self, op: &SeparableOperator) -> Result<Vec<f64>> {
        if op.d() != self.d() {
            return Err(Error::domain("block and operator dimensions differ"));
        }
        let mut lam = vec![0.0; self.len()];
        if lam.is_empty() {
            return Ok(lam);
        }
        let mut stride = self.len();
        for (modes, spec) in self.modes.iter().zip(&op.factors) {
            let vals = modes
                .iter()
                .map(|&k| spec.lambda(k))
                .collect::<Result<Vec<_>>>()?;
            let inner = stride / modes.len();
            for (i, l) in lam.iter_mut().enumerate() {
                *l += vals[(i / inner) % modes.len()];
            }
            stride = inner;
        }
        Ok(lam)
    }

    pub fn map_with_lambda(
        &self,
        op: &SeparableOperator,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<Self> {
        let lam = self.lambda(op)?;
        let data = self
            .data
            .par_iter()
            .zip(&lam)
            .map(|(&c, &l)| f(c, l))
            .collect();
        Ok(DenseCoefficientBlock {
            modes: self.modes.clone(),
            data,
        })
    }

    /// `(Σ_ν λ_ν^t c_ν²)^{1/2}`.
    pub fn ht_norm(&self, op: &SeparableOperator, t: f64) -> Result<f64> {
        let lam = self.lambda(op)?;
        Ok(self
            .data
            .iter()
            .zip(&lam)
            .map(|(c, l)| l.powf(t) * c * c)
            .sum::<f64>()
            .sqrt())
    }

    /// `Σ_ν c_ν Π_j e_{j,ν_j}(x_j)`.
    pub fn synthesize(&self, op: &SeparableOperator, x: &[f64]) -> Result<f64> {
        let vectors = eigenfunction_rows(op, &self.modes, x)?;
        Ok(contract(&self.data, &vectors))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.modes != other.modes {
            return Err(Error::domain("blocks live on different mode sets"));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn eigenfunction_rows(
    op: &SeparableOperator,
    modes: &[Vec<usize>],
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if x.len() != op.d() || modes.len() != op.d() {
        return Err(Error::domain("point dimension differs from the operator"));
    }
    modes
        .iter()
        .zip(&op.factors)
        .zip(x)
        .map(|((m, spec), &xj)| {
            m.iter()
                .map(|&k| {
                    spec.eigenfunction(k, xj)
                        .ok_or_else(|| Error::domain("factor has no eigenfunction evaluator"))
                })
                .collect()
        })
        .collect()
}

/// Entrywise `λ_ν^{-1} f_ν`.
pub fn dense_inverse_solve(
    op: &SeparableOperator,
    f: &DenseCoefficientBlock,
) -> Result<DenseCoefficientBlock> {
    f.map_with_lambda(op, |c, l| c / l)
}

/// Entrywise `λ_ν f_ν`.
pub fn dense_forward(
    op: &SeparableOperator,
    f: &DenseCoefficientBlock,
) -> Result<DenseCoefficientBlock> {
    f.map_with_lambda(op, |c, l| c * l)
}

/// `u(x) = Σ_ν λ_ν^{-1} ⟨f, e_ν⟩ Π_j e_{j,ν_j}(x_j)`, term by term over each
/// product support.
pub fn eigen_exact_pointwise(op: &SeparableOperator, f: &EigenTensor, x: &[f64]) -> Result<f64> {
    if x.len() != op.d() || f.d != op.d() {
        return Err(Error::domain("point, tensor and operator dimensions differ"));
    }
    let size: u128 = f
        .terms
        .iter()
        .map(|t| t.factors.iter().map(|g| g.support() as u128).product::<u128>())
        .sum();
    if size > crate::model::ENUMERATION_CAP {
        return Err(Error::Capacity {
            what: "eigen-exact enumeration",
            needed: size,
            cap: crate::model::ENUMERATION_CAP,
        });
    }
    let d = op.d();
    let mut total = 0.0;
    for term in &f.terms {
        let mut lam = Vec::with_capacity(d);
        let mut val = Vec::with_capacity(d);
        for ((g, spec), &xj) in term.factors.iter().zip(&op.factors).zip(x) {
            let mut l = Vec::with_capacity(g.support());
            let mut v = Vec::with_capacity(g.support());
            for (k, c) in g.iter() {
                l.push(spec.lambda(k)?);
                let e = spec
                    .eigenfunction(k, xj)
                    .ok_or_else(|| Error::domain("factor has no eigenfunction evaluator"))?;
                v.push(c * e);
            }
            lam.push(l);
            val.push(v);
        }
        if val.iter().any(|v| v.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; d];
        loop {
            let mut l = 0.0;
            let mut p = 1.0;
            for j in 0..d {
                l += lam[j][idx[j]];
                p *= val[j][idx[j]];
            }
            total += p / l;
            let mut j = d;
            loop {
                if j == 0 {
                    break;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < val[j].len() {
                    break;
                }
                idx[j] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    Ok(total)
}

/// Mass and stiffness matrices of the piecewise-linear discretization of
/// `-a d²/dx²` on `n` interior nodes of `[0, L]`.
pub fn fem_matrices(n: usize, length: f64, coefficient: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = length / (n + 1) as f64;
    let mut m = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 4.0 * h / 6.0;
        k[(i, i)] = 2.0 * coefficient / h;
        if i + 1 < n {
            m[(i, i + 1)] = h / 6.0;
            m[(i + 1, i)] = h / 6.0;
            k[(i, i + 1)] = -coefficient / h;
            k[(i + 1, i)] = -coefficient / h;
        }
    }
    (m, k)
}

/// `e^{-α M⁻¹K}` through `M = LLᵀ` and the symmetric matrix `A = L⁻¹ K L⁻ᵀ`,
/// using `e^{-αM⁻¹K} = L⁻ᵀ e^{-αA} Lᵀ`.
pub struct FemExponential {
    chol: DMatrix<f64>,
    a: DMatrix<f64>,
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl FemExponential {
    pub fn new(n: usize, length: f64, coefficient: f64) -> Result<Self> {
        if n == 0 || n > FEM_DENSE_CAP {
            return Err(Error::Capacity {
                what: "dense 1D pencil",
                needed: n as u128,
                cap: FEM_DENSE_CAP as u128,
            });
        }
        let (m, k) = fem_matrices(n, length, coefficient);
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::domain("mass matrix is not positive definite"))?
            .l();
        let linv_k = chol.solve_lower_triangular(&k).unwrap();
        let a = chol
            .solve_lower_triangular(&linv_k.transpose())
            .unwrap()
            .transpose();
        let a = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a.clone());
        Ok(FemExponential { chol, a, eig })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Eigenvalues of `M⁻¹K`, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eig.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn to_sym(&self, v: &[f64]) -> DVector<f64> {
        self.chol.transpose() * DVector::from_column_slice(v)
    }

    fn unsym(&self, w: DVector<f64>) -> Vec<f64> {
        self.chol
            .transpose()
            .solve_upper_triangular(&w)
            .unwrap()
            .iter()
            .copied()
            .collect()
    }

    /// Eigendecomposition route.
    pub fn apply(&self, alpha: f64, v: &[f64]) -> Vec<f64> {
        let w = self.to_sym(v);
        let q = &self.eig.eigenvectors;
        let mut coeff = q.transpose() * w;
        for (c, l) in coeff.iter_mut().zip(self.eig.eigenvalues.iter()) {
            *c *= (-alpha * l).exp();
        }
        self.unsym(q * coeff)
    }

    /// Scaling and squaring with the degree-13 Padé approximant.
    pub fn apply_pade(&self, alpha: f64, v: &[f64]) -> Vec<f64> {
        let e = expm_pade13(&(&self.a * -alpha));
        self.unsym(e * self.to_sym(v))
    }
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn expm_pade13(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let norm1 = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = x * 2f64.powi(-s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u).lu().solve(&(&v + &u)).expect("Padé denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `e^{-α M⁻¹K} v` for the piecewise-linear pencil on `n` interior nodes.
pub fn dense_matrix_exponential(
    n: usize,
    length: f64,
    coefficient: f64,
    alpha: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(Error::domain("vector length differs from the mesh"));
    }
    Ok(FemExponential::new(n, length, coefficient)?.apply(alpha, v))
}

/// `Σ_ν a_ν b_ν λ_ν^{-p}` for eigen tensors with arbitrarily many modes, via
/// `λ^{-p} = Γ(p)^{-1} ∫₀^∞ t^{p-1} e^{-tλ} dt` and the trapezoid rule in `ln t`.
pub fn inverse_moment(
    factors: &[FactorSpectrum],
    a: &EigenTensor,
    b: &EigenTensor,
    p: u32,
) -> Result<f64> {
    if p == 0 || p > 2 {
        return Err(Error::domain("inverse moments are implemented for p ∈ {1, 2}"));
    }
    if a.d != factors.len() || b.d != factors.len() {
        return Err(Error::domain("tensor and operator dimensions differ"));
    }
    let lam_min: f64 = factors.iter().map(|f| f.lambda_min()).sum();
    let s0 = (1.0 / lam_min).ln();
    let step = 0.05;
    let grid: Vec<f64> = {
        let (lo, hi) = (s0 - 42.0, s0 + 5.0);
        let n = ((hi - lo) / step).ceil() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    };
    let mut total = 0.0;
    for ta in &a.terms {
        for tb in &b.terms {
            // Common support of each factor pair, with eigenvalues.
            let mut pairs = Vec::with_capacity(factors.len());
            for ((fa, fb), spec) in ta.factors.iter().zip(&tb.factors).zip(factors) {
                let mut common = Vec::new();
                for (k, ca) in fa.iter() {
                    let cb = fb.get(k);
                    if cb != 0.0 {
                        common.push((spec.eigenvalue_any(k)?, ca * cb));
                    }
                }
                pairs.push(common);
            }
            if pairs.iter().any(|c| c.is_empty()) {
                continue;
            }
            let integral: f64 = grid
                .par_iter()
                .map(|&s| {
                    let t = s.exp();
                    let prod: f64 = pairs
                        .iter()
                        .map(|c| c.iter().map(|(l, w)| w * (-t * l).exp()).sum::<f64>())
                        .product();
                    t.powi(p as i32) * prod
                })
                .collect::<Vec<f64>>()
                .iter()
                // Sequential sum keeps the result independent of the thread count.
                .sum::<f64>()
                * step;
            total += integral;
        }
    }
    Ok(total)
}

pub type FactorFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional data factor known both as a function and by its
/// eigen-coefficients.
#[derive(Clone)]
pub struct ExactFactor {
    pub coeffs: SparseVec,
    pub func: FactorFn,
}

/// `‖f‖` data and norms of the exact solution `u = 𝔅⁻¹f` for a low-rank `f`.
#[derive(Clone)]
pub struct ExactSolution {
    pub factors: Vec<FactorSpectrum>,
    pub terms: Vec<Vec<ExactFactor>>,
    /// `‖u‖₁² = Σ f_ν²/λ_ν`, which is also `‖f‖₋₁²`.
    pub energy_sq: f64,
    /// `‖u‖₀² = Σ f_ν²/λ_ν²`.
    pub l2_sq: f64,
}

/// `⟨f, e_k⟩` for `k = 1..=m` by composite Gauss-Legendre quadrature.
pub fn project_function(spec: &FactorSpectrum, f: &dyn Fn(f64) -> f64, m: usize) -> Result<SparseVec> {
    if !spec.has_eigenfunctions() {
        return Err(Error::domain("factor has no eigenfunction evaluator"));
    }
    let rule = GaussLegendre::new(16 * m.max(8), spec.length, 4);
    let fx: Vec<f64> = rule.points.iter().map(|&x| f(x)).collect();
    let coeffs = (1..=m)
        .into_par_iter()
        .map(|k| {
            rule.points
                .iter()
                .zip(&rule.weights)
                .zip(&fx)
                .map(|((&x, &w), &v)| w * v * spec.eigenfunction(k, x).unwrap())
                .sum()
        })
        .collect();
    Ok(SparseVec::dense(coeffs))
}

/// `⟨g, e_k⟩` for a piecewise-linear `g`, exact: the hat function centred at
/// `x_i` has sine transform `sin(ωx_i) · 2(1 - cos ωh)/(ω² h)`.
pub fn project_nodal(spec: &FactorSpectrum, g: &GridFunction, m: usize) -> Result<SparseVec> {
    if !spec.has_eigenfunctions() {
        return Err(Error::domain("factor has no eigenfunction evaluator"));
    }
    let h = g.spacing();
    let l = spec.length;
    let coeffs = (1..=m)
        .map(|k| {
            let w = k as f64 * std::f64::consts::PI / l;
            let hat = 2.0 * (1.0 - (w * h).cos()) / (w * w * h);
            let s: f64 = g
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v * (w * (i + 1) as f64 * h).sin())
                .sum();
            (2.0 / l).sqrt() * hat * s
        })
        .collect();
    Ok(SparseVec::dense(coeffs))
}

impl ExactSolution {
    pub fn new(factors: Vec<FactorSpectrum>, terms: Vec<Vec<ExactFactor>>) -> Result<Self> {
        if terms.iter().any(|t| t.len() != factors.len()) {
            return Err(Error::domain("data terms and operator dimensions differ"));
        }
        let data = coefficient_tensor(factors.len(), &terms);
        let energy_sq = inverse_moment(&factors, &data, &data, 1)?;
        let l2_sq = inverse_moment(&factors, &data, &data, 2)?;
        Ok(ExactSolution {
            factors,
            terms,
            energy_sq,
            l2_sq,
        })
    }

    /// Projects each data function onto the first `modes` eigenfunctions.
    pub fn from_functions(
        factors: Vec<FactorSpectrum>,
        terms: Vec<Vec<FactorFn>>,
        modes: usize,
    ) -> Result<Self> {
        let exact = terms
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .zip(&factors)
                    .map(|(func, spec)| {
                        Ok(ExactFactor {
                            coeffs: project_function(spec, func.as_ref(), modes)?,
                            func,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors, exact)
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    pub fn data_tensor(&self) -> EigenTensor {
        coefficient_tensor(self.d(), &self.terms)
    }

    /// `‖u‖₁ = ‖f‖₋₁`.
    pub fn energy_norm(&self) -> f64 {
        self.energy_sq.sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_sq.sqrt()
    }
}

fn coefficient_tensor(d: usize, terms: &[Vec<ExactFactor>]) -> EigenTensor {
    EigenTensor {
        d,
        terms: terms
            .iter()
            .map(|t| crate::tensor::RankOneTerm::new(t.iter().map(|f| f.coeffs.clone()).collect()))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
}

/// `‖v‖₀²` and `b(v, v)` of a nodal tensor sum from factor Gram matrices.
pub fn nodal_norms_sq(factors: &[FactorSpectrum], v: &NodalTensor) -> Result<(f64, f64)> {
    let mut l2 = 0.0;
    let mut energy = 0.0;
    for a in &v.terms {
        for b in &v.terms {
            let mut mass = Vec::with_capacity(v.d);
            let mut stiff = Vec::with_capacity(v.d);
            for ((fa, fb), spec) in a.factors.iter().zip(&b.factors).zip(factors) {
                mass.push(fa.dot(fb)?);
                stiff.push(fa.energy(fb, spec.coefficient)?);
            }
            l2 += mass.iter().product::<f64>();
            for j in 0..v.d {
                energy += stiff[j]
                    * mass
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != j)
                        .map(|(_, m)| m)
                        .product::<f64>();
            }
        }
    }
    Ok((l2, energy))
}

/// `‖u - ū‖` for a nodal approximation of the exact solution. The energy
/// error uses `b(u, ū) = ⟨f, ū⟩`; the `L²` error projects `ū` onto the modes
/// carried by the exact data.
pub fn error_norms(approx: &NodalTensor, exact: &ExactSolution, norm: NormKind) -> Result<f64> {
    if approx.d != exact.d() {
        return Err(Error::domain("approximation and exact solution dimensions differ"));
    }
    for t in &approx.terms {
        for (g, spec) in t.factors.iter().zip(&exact.factors) {
            if (g.length - spec.length).abs() > 1e-14 * spec.length {
                return Err(Error::domain("grid length differs from the factor domain"));
            }
        }
    }
    let (l2_sq, energy_sq) = nodal_norms_sq(&exact.factors, approx)?;
    let sq = match norm {
        NormKind::H1 => {
            let mut cross = 0.0;
            for ft in &exact.terms {
                for at in &approx.terms {
                    let mut p = 1.0;
                    for (f, g) in ft.iter().zip(&at.factors) {
                        let rule = GaussLegendre::new(g.n() + 1, g.length, 4);
                        p *= rule.integrate(|x| (f.func)(x) * g.eval(x));
                    }
                    cross += p;
                }
            }
            exact.energy_sq - 2.0 * cross + energy_sq
        }
        NormKind::L2 => {
            let modes = exact
                .terms
                .iter()
                .flat_map(|t| t.iter().map(|f| f.coeffs.max_mode()))
                .max()
                .unwrap_or(0);
            let proj = EigenTensor {
                d: approx.d,
                terms: approx
                    .terms
                    .iter()
                    .map(|t| {
                        t.factors
                            .iter()
                            .zip(&exact.factors)
                            .map(|(g, spec)| project_nodal(spec, g, modes))
                            .collect::<Result<Vec<_>>>()
                            .map(crate::tensor::RankOneTerm::new)
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let cross = inverse_moment(&exact.factors, &exact.data_tensor(), &proj, 1)?;
            exact.l2_sq - 2.0 * cross + l2_sq
        }
    };
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dirichlet_laplacian_factor;
    use crate::tensor::{RankOneTerm, TensorSum};
    use std::f64::consts::PI;

    fn laplace(d: usize, m: usize) -> SeparableOperator {
        SeparableOperator::uniform(d, dirichlet_laplacian_factor(m, 1.0).unwrap()).unwrap()
    }

    fn mode(nu: &[usize]) -> EigenTensor {
        TensorSum::rank_one(RankOneTerm::new(nu.iter().map(|&k| SparseVec::unit(k)).collect()))
    }

    #[test]
    fn inverse_of_first_mode() {
        let op = laplace(2, 4);
        let f = DenseCoefficientBlock::from_tensor(&mode(&[1, 1]), &[4, 4]).unwrap();
        let u = dense_inverse_solve(&op, &f).unwrap();
        assert!((u.data[0] - 0.05066059182116889).abs() < 1e-16);
        assert!(u.data[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_first_mode() {
        let op = laplace(2, 4);
        let v = eigen_exact_pointwise(&op, &mode(&[1, 1]), &[0.5, 0.5]).unwrap();
        assert!((v - 1.0 / (PI * PI)).abs() < 1e-15);
        let edge = eigen_exact_pointwise(&op, &mode(&[1, 1]), &[0.0, 0.3]).unwrap();
        assert_eq!(edge, 0.0);
    }

    #[test]
    fn block_capacity_is_enforced() {
        assert!(matches!(
            DenseCoefficientBlock::contiguous(&[4097, 4097]),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn inverse_moment_single_mode() {
        let op = laplace(2, 4);
        let e = mode(&[1, 1]);
        let m1 = inverse_moment(&op.factors, &e, &e, 1).unwrap();
        let m2 = inverse_moment(&op.factors, &e, &e, 2).unwrap();
        let l = 2.0 * PI * PI;
        assert!((m1 * l - 1.0).abs() < 1e-13);
        assert!((m2 * l * l - 1.0).abs() < 1e-13);
    }

    #[test]
    fn fem_exponential_of_discrete_eigenvector() {
        // Discrete eigenpair of the uniform pencil: sin(kπ i/(n+1)) with
        // λ_h = (6a/h²)(1 - cos θ)/(2 + cos θ), θ = kπ h / L.
        let n = 63;
        let fe = FemExponential::new(n, 1.0, 1.0).unwrap();
        let h = 1.0 / (n + 1) as f64;
        let theta = PI * h;
        let lam = 6.0 / (h * h) * (1.0 - theta.cos()) / (2.0 + theta.cos());
        assert!((fe.eigenvalues()[0] - lam).abs() < 1e-10 * lam);
        let v: Vec<f64> = (1..=n).map(|i| (PI * i as f64 * h).sin()).collect();
        let out = fe.apply(0.3, &v);
        let scale = (-0.3 * lam).exp();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - scale * b).abs() < 1e-13);
        }
        assert_eq!(fe.apply(0.0, &v).len(), n);
        for (a, b) in fe.apply(0.0, &v).iter().zip(&v) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_of_nodal_matches_quadrature() {
        let spec = dirichlet_laplacian_factor(8, 1.0).unwrap();
        let g = GridFunction::sample(31, 1.0, |x| x * (1.0 - x) * (x + 0.3));
        let exact = project_nodal(&spec, &g, 8).unwrap();
        let quad = project_function(&spec, &|x| g.eval(x), 8).unwrap();
        for (a, b) in exact.values.iter().zip(&quad.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nodal_norms_of_separable_product() {
        let spec = dirichlet_laplacian_factor(4, 1.0).unwrap();
        let g = GridFunction::sample(50, 1.0, |x| x * (1.0 - x));
        let t = TensorSum::rank_one(RankOneTerm::new(vec![g.clone(), g.clone()]));
        let (l2, en) = nodal_norms_sq(&[spec.clone(), spec], &t).unwrap();
        let m = g.dot(&g).unwrap();
        let k = g.energy(&g, 1.0).unwrap();
        assert!((l2 - m * m).abs() < 1e-15);
        assert!((en - 2.0 * k * m).abs() < 1e-14);
    }
}
