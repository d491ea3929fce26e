//! Kronecker-sum operators `𝔅 = Σ_j I ⊗ … ⊗ 𝔅_j ⊗ … ⊗ I` described by their
//! factor spectra.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expsum::ExpSum;
use crate::oracle::DenseCoefficientBlock;
use crate::tensor::{EigenTensor, RankOneTerm, SparseVec, TensorSum};

/// Enumeration cap for `H^t` norms that have no separable formula.
pub const ENUMERATION_CAP: u128 = 1_000_000;
/// Largest integer order handled by the separable norm formula.
pub const SEPARABLE_MAX_T: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    /// `-a d²/dx²` on `(0, L)` with zero boundary values.
    DirichletLaplacian,
    /// Eigenvalues given directly; no eigenfunctions or discretization.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpectrum {
    pub kind: FactorKind,
    pub eigenvalues: Vec<f64>,
    pub length: f64,
    /// Diffusion coefficient `a`; 1 unless the factor was rescaled.
    pub coefficient: f64,
}

/// `λ_k = (kπ/L)²`, `e_k(x) = √(2/L) sin(kπx/L)`.
pub fn dirichlet_laplacian_factor(n_modes: usize, length: f64) -> Result<FactorSpectrum> {
    if n_modes == 0 || !(length > 0.0) {
        return Err(Error::domain("need n_modes ≥ 1 and length > 0"));
    }
    Ok(FactorSpectrum {
        kind: FactorKind::DirichletLaplacian,
        eigenvalues: (1..=n_modes)
            .map(|k| (k as f64 * PI / length).powi(2))
            .collect(),
        length,
        coefficient: 1.0,
    })
}

pub fn explicit_factor(eigenvalues: Vec<f64>) -> Result<FactorSpectrum> {
    if eigenvalues.is_empty() {
        return Err(Error::domain("explicit factor needs at least one eigenvalue"));
    }
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::domain("eigenvalues must be positive and finite"));
    }
    if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("eigenvalues must be nondecreasing"));
    }
    Ok(FactorSpectrum {
        kind: FactorKind::Explicit,
        eigenvalues,
        length: 1.0,
        coefficient: 1.0,
    })
}

impl FactorSpectrum {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::domain("mode indices start at 1"));
        }
        self.eigenvalues.get(k - 1).copied().ok_or_else(|| {
            Error::domain(format!("mode {k} beyond the {} available", self.n_modes()))
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `λ_k` for any `k ≥ 1` where a closed form exists, else within the table.
    pub fn eigenvalue_any(&self, k: usize) -> Result<f64> {
        match self.kind {
            FactorKind::DirichletLaplacian if k >= 1 => {
                Ok(self.coefficient * (k as f64 * PI / self.length).powi(2))
            }
            _ => self.lambda(k),
        }
    }

    pub fn has_eigenfunctions(&self) -> bool {
        self.kind == FactorKind::DirichletLaplacian
    }

    pub fn eigenfunction(&self, k: usize, x: f64) -> Option<f64> {
        match self.kind {
            FactorKind::DirichletLaplacian => {
                let l = self.length;
                Some((2.0 / l).sqrt() * (k as f64 * PI * x / l).sin())
            }
            FactorKind::Explicit => None,
        }
    }

    /// Multiplies the factor operator by `c > 0`.
    pub fn scaled(&self, c: f64) -> FactorSpectrum {
        FactorSpectrum {
            eigenvalues: self.eigenvalues.iter().map(|l| l * c).collect(),
            coefficient: self.coefficient * c,
            ..self.clone()
        }
    }

    /// Largest deviation of the Gram matrix of the first `m` eigenfunctions
    /// from the identity, by composite Gauss-Legendre quadrature.
    pub fn orthonormality_defect(&self, m: usize) -> Option<f64> {
        if !self.has_eigenfunctions() {
            return None;
        }
        let cells = 8 * m.max(4);
        let rule = crate::quad::GaussLegendre::new(cells, self.length, 4);
        let mut worst: f64 = 0.0;
        for a in 1..=m {
            for b in a..=m {
                let g = rule.integrate(|x| {
                    self.eigenfunction(a, x).unwrap() * self.eigenfunction(b, x).unwrap()
                });
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        Some(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableOperator {
    pub factors: Vec<FactorSpectrum>,
}

/// Diagonal actions in the eigenbasis.
#[derive(Debug, Clone, Copy)]
pub enum DiagMode<'a> {
    Inverse,
    Exp(f64),
    ExpSum(&'a ExpSum),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagOutput {
    Tensor(EigenTensor),
    Dense(DenseCoefficientBlock),
}

impl SeparableOperator {
    pub fn new(factors: Vec<FactorSpectrum>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::domain("operator needs d ≥ 1 factors"));
        }
        let op = SeparableOperator { factors };
        if op.lambda_min() < 1.0 {
            log::warn!(
                "smallest eigenvalue {:.3e} is below 1; rescale the operator for the normalized constants",
                op.lambda_min()
            );
        }
        Ok(op)
    }

    pub fn uniform(d: usize, factor: FactorSpectrum) -> Result<Self> {
        Self::new(vec![factor; d])
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    /// `λ̲ = Σ_j λ_{j,1}`.
    pub fn lambda_min(&self) -> f64 {
        self.factors.iter().map(|f| f.lambda_min()).sum()
    }

    /// Smallest single-factor eigenvalue.
    pub fn factor_lambda_min(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| f.lambda_min())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_nu(&self, nu: &[usize]) -> Result<f64> {
        if nu.len() != self.d() {
            return Err(Error::domain(format!(
                "multi-index has {} entries, operator has d = {}",
                nu.len(),
                self.d()
            )));
        }
        self.factors
            .iter()
            .zip(nu)
            .try_fold(0.0, |acc, (f, &k)| Ok(acc + f.lambda(k)?))
    }

    fn check_support(&self, v: &EigenTensor) -> Result<()> {
        if v.d != self.d() {
            return Err(Error::domain("tensor and operator dimensions differ"));
        }
        for term in &v.terms {
            for (f, spec) in term.factors.iter().zip(&self.factors) {
                if f.max_mode() > spec.n_modes() {
                    return Err(Error::domain(format!(
                        "coefficient at mode {} beyond the {} available",
                        f.max_mode(),
                        spec.n_modes()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(Σ_ν λ_ν^t ⟨v, e_ν⟩²)^{1/2}`: separable for integer `0 ≤ t ≤ 8`, by
    /// enumeration of the product support otherwise.
    pub fn ht_norm(&self, v: &EigenTensor, t: f64) -> Result<f64> {
        self.check_support(v)?;
        let sq = if t >= 0.0 && t <= SEPARABLE_MAX_T as f64 && t.fract() == 0.0 {
            self.separable_moment(v, t as usize)
        } else {
            let block = DenseCoefficientBlock::from_tensor_support(v, ENUMERATION_CAP)?;
            let lam = block.lambda(self)?;
            block
                .data
                .iter()
                .zip(&lam)
                .map(|(c, l)| l.powf(t) * c * c)
                .sum()
        };
        Ok(sq.max(0.0).sqrt())
    }

    /// `Σ_ν λ_ν^t ⟨v, e_ν⟩²` as `t!` times the `s^t` coefficient of
    /// `Π_j Σ_m s^m/m! G_{j,m}` with `G_{j,m} = Σ_k λ_{j,k}^m a_k b_k`.
    pub(crate) fn separable_moment(&self, v: &EigenTensor, t: usize) -> f64 {
        let mut total = 0.0;
        for a in &v.terms {
            for b in &v.terms {
                let mut poly = vec![0.0; t + 1];
                poly[0] = 1.0;
                for ((fa, fb), spec) in a.factors.iter().zip(&b.factors).zip(&self.factors) {
                    let mut g = vec![0.0; t + 1];
                    let mut fact = 1.0;
                    for (m, gm) in g.iter_mut().enumerate() {
                        if m > 0 {
                            fact *= m as f64;
                        }
                        *gm = fa.weighted_dot(fb, |k| spec.eigenvalues[k - 1].powi(m as i32)) / fact;
                    }
                    let mut next = vec![0.0; t + 1];
                    for (i, p) in poly.iter().enumerate() {
                        for (m, gm) in g[..=t - i].iter().enumerate() {
                            next[i + m] += p * gm;
                        }
                    }
                    poly = next;
                }
                total += poly[t];
            }
        }
        total * (1..=t).map(|m| m as f64).product::<f64>()
    }

    /// `e^{-α𝔅} v`: factor `j` coefficient at mode `k` times `e^{-αλ_{j,k}}`.
    pub fn apply_exp(&self, v: &EigenTensor, alpha: f64) -> Result<EigenTensor> {
        self.check_support(v)?;
        let terms = v
            .terms
            .iter()
            .map(|t| self.exp_term(t, alpha, 1.0))
            .collect();
        TensorSum::new(v.d, terms)
    }

    fn exp_term(&self, t: &RankOneTerm<SparseVec>, alpha: f64, c: f64) -> RankOneTerm<SparseVec> {
        let factors = t
            .factors
            .iter()
            .zip(&self.factors)
            .map(|(f, spec)| f.map_values(|k, x| x * (-alpha * spec.eigenvalues[k - 1]).exp()))
            .collect();
        RankOneTerm::new(factors).scaled(c)
    }

    /// `S(𝔅) v = Σ_k ω_k e^{-α_k 𝔅} v`; zero-weight terms are skipped.
    pub fn apply_expsum(&self, v: &EigenTensor, s: &ExpSum) -> Result<EigenTensor> {
        self.check_support(v)?;
        let mut terms = Vec::with_capacity(s.len() * v.rank());
        for (alpha, omega) in s.active_terms() {
            for t in &v.terms {
                terms.push(self.exp_term(t, alpha, omega));
            }
        }
        TensorSum::new(v.d, terms)
    }

    /// `𝔅 v` as a sum of `d · rank(v)` rank-one terms.
    pub fn apply_forward(&self, v: &EigenTensor) -> Result<EigenTensor> {
        self.check_support(v)?;
        let mut terms = Vec::with_capacity(self.d() * v.rank());
        for t in &v.terms {
            for j in 0..self.d() {
                let mut f = t.factors.clone();
                let spec = &self.factors[j];
                f[j] = f[j].map_values(|k, x| x * spec.eigenvalues[k - 1]);
                terms.push(RankOneTerm::new(f));
            }
        }
        TensorSum::new(v.d, terms)
    }

    /// Dense `λ_ν^{-1} ⟨v, e_ν⟩` over the product support; `1/λ_ν` is not separable.
    pub fn apply_inverse_dense(&self, v: &EigenTensor) -> Result<DenseCoefficientBlock> {
        self.check_support(v)?;
        let block = DenseCoefficientBlock::from_tensor_support(v, ENUMERATION_CAP)?;
        crate::oracle::dense_inverse_solve(self, &block)
    }

    pub fn apply_diag(&self, v: &EigenTensor, mode: DiagMode<'_>) -> Result<DiagOutput> {
        Ok(match mode {
            DiagMode::Inverse => DiagOutput::Dense(self.apply_inverse_dense(v)?),
            DiagMode::Exp(alpha) => DiagOutput::Tensor(self.apply_exp(v, alpha)?),
            DiagMode::ExpSum(s) => DiagOutput::Tensor(self.apply_expsum(v, s)?),
        })
    }

    /// `Π_j ‖τ_j‖_{H^s_j}` pieces: per-factor `(Σ_k λ_{j,k}^s c_k²)^{1/2}`.
    pub fn factor_norm(&self, j: usize, f: &SparseVec, s: f64) -> f64 {
        let spec = &self.factors[j];
        f.iter()
            .map(|(k, c)| spec.eigenvalues[k - 1].powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }
}

/// `A = Qᵀ D Q` for symmetric positive definite `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPreprocess {
    pub q: DMatrix<f64>,
    pub d: Vec<f64>,
}

pub fn rotate_spd(a: &DMatrix<f64>) -> Result<RotationPreprocess> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::domain("rotation needs a nonempty square matrix"));
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-10 * scale {
        return Err(Error::domain("matrix is not symmetric"));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let d: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("matrix is not positive definite"));
    }
    let mut q = DMatrix::zeros(n, n);
    for (row, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        // Sign convention: first nonzero entry positive.
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        q.row_mut(row).copy_from(&v.transpose());
    }
    Ok(RotationPreprocess { q, d })
}

impl RotationPreprocess {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.d.clone()));
        self.q.transpose() * dm * &self.q
    }

    /// Operator of the rotated problem: factor `k` scaled by `D_kk`.
    pub fn operator(&self, base: &FactorSpectrum) -> Result<SeparableOperator> {
        SeparableOperator::new(self.d.iter().map(|&c| base.scaled(c)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(d: usize, m: usize) -> SeparableOperator {
        SeparableOperator::uniform(d, dirichlet_laplacian_factor(m, 1.0).unwrap()).unwrap()
    }

    fn mode(nu: &[usize]) -> EigenTensor {
        TensorSum::rank_one(RankOneTerm::new(
            nu.iter().map(|&k| SparseVec::unit(k)).collect(),
        ))
    }

    #[test]
    fn dirichlet_spectrum() {
        let f = dirichlet_laplacian_factor(5, 1.0).unwrap();
        assert!((f.lambda(1).unwrap() - PI * PI).abs() < 1e-14);
        let g = dirichlet_laplacian_factor(5, 2.0).unwrap();
        assert!((g.lambda(3).unwrap() - (1.5 * PI).powi(2)).abs() < 1e-12);
        assert!(f.orthonormality_defect(6).unwrap() < 1e-8);
    }

    #[test]
    fn lambda_nu_sums() {
        let op = laplace(3, 4);
        assert!((op.lambda_nu(&[1, 2, 3]).unwrap() - 14.0 * PI * PI).abs() < 1e-12);
        assert!((op.lambda_nu(&[1, 1, 1]).unwrap() - op.lambda_min()).abs() < 1e-12);
        assert!(op.lambda_nu(&[1, 2, 5]).is_err());
        let e = SeparableOperator::uniform(2, explicit_factor(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(e.lambda_nu(&[2, 2]).unwrap(), 4.0);
    }

    #[test]
    fn explicit_factor_validation() {
        assert!(explicit_factor(vec![]).is_err());
        assert!(explicit_factor(vec![2.0, 1.0]).is_err());
        assert!(explicit_factor(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn single_mode_norms() {
        let op = laplace(2, 4);
        let v = mode(&[1, 1]);
        assert!((op.ht_norm(&v, 1.0).unwrap() - (2.0 * PI * PI).sqrt()).abs() < 1e-12);
        assert!((op.ht_norm(&v, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let n15 = op.ht_norm(&v, 1.5).unwrap();
        assert!((n15 - (2.0 * PI * PI).powf(0.75)).abs() < 1e-10);
    }

    #[test]
    fn exp_of_first_mode() {
        let op = laplace(2, 4);
        let out = op.apply_exp(&mode(&[1, 1]), 0.1).unwrap();
        let c = out.terms[0].factors[0].values[0] * out.terms[0].factors[1].values[0];
        assert!((c - 0.13891113314280026).abs() < 1e-15);
        assert_eq!(op.apply_exp(&mode(&[2, 3]), 0.0).unwrap(), mode(&[2, 3]));
    }

    #[test]
    fn rotation_identity_and_diagonal() {
        let r = rotate_spd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(r.d, vec![1.0; 3]);
        assert!((r.q.clone() - DMatrix::identity(3, 3)).amax() < 1e-14);
        let r = rotate_spd(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(r.d, vec![2.0, 3.0]);
        assert!((r.q.clone() - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn rotation_of_coupled_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = rotate_spd(&a).unwrap();
        assert!((r.d[0] - 1.0).abs() < 1e-14 && (r.d[1] - 3.0).abs() < 1e-14);
        assert!((r.reconstruct() - &a).amax() < 1e-10);
        assert!((r.q.transpose() * &r.q - DMatrix::identity(2, 2)).amax() < 1e-10);
        let s = 0.5f64.sqrt();
        assert!((r.q[(0, 0)].abs() - s).abs() < 1e-14 && (r.q[(0, 1)].abs() - s).abs() < 1e-14);
        assert!(r.q[(0, 0)] * r.q[(0, 1)] < 0.0);
        assert!(r.q[(1, 0)] * r.q[(1, 1)] > 0.0);
    }

    #[test]
    fn rotation_rejects_bad_input() {
        assert!(rotate_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(rotate_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn rotated_operator_scales_factors() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let op = rotate_spd(&a)
            .unwrap()
            .operator(&dirichlet_laplacian_factor(3, 1.0).unwrap())
            .unwrap();
        assert!((op.lambda_min() - 4.0 * PI * PI).abs() < 1e-12);
        assert_eq!(op.factors[1].coefficient, 3.0);
    }

    #[test]
    fn separable_norm_matches_enumeration() {
        let op = laplace(3, 5);
        let f = |a: f64| SparseVec::dense((1..=5).map(|k| (a * k as f64).sin()).collect());
        let v = TensorSum::new(
            3,
            vec![
                RankOneTerm::new(vec![f(0.7), f(1.3), f(2.1)]),
                RankOneTerm::new(vec![f(0.4), f(2.9), f(1.7)]),
            ],
        )
        .unwrap();
        let block = DenseCoefficientBlock::from_tensor(&v, &[5, 5, 5]).unwrap();
        for t in 0..=4 {
            let a = op.ht_norm(&v, t as f64).unwrap();
            let b = block.ht_norm(&op, t as f64).unwrap();
            assert!((a - b).abs() <= 1e-11 * b, "t = {t}: {a} vs {b}");
        }
    }
}
