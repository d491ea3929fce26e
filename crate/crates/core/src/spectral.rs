//! Eigenbasis solution path: `S̄_R(𝔅)` applied exactly to tensor-sparse data,
//! parameter selection from a growth class, and representation counts.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expsum::{self, t_r, BuildOptions, ExpSum};
use crate::growth::GrowthClass;
use crate::model::SeparableOperator;
use crate::oracle::{dense_inverse_solve, DenseCoefficientBlock};
use crate::scheme::SolveReport;
use crate::tensor::{tripnorm_upper, EigenTensor, Factor, TensorSum};

/// Tolerance used when rounding parameter formulas up to integers.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeParameters {
    /// Data smoothness index.
    pub t: f64,
    /// Excess regularity of the data.
    pub zeta: f64,
    #[serde(rename = "A_1")]
    pub a1: f64,
    pub a_under: f64,
    pub c6: f64,
    /// Strip half-width.
    pub b: f64,
    /// Hyperbola shift; `min(1, λ̲_j/2)` when absent.
    pub c_under: Option<f64>,
    #[serde(rename = "Cbar0")]
    pub cbar0: f64,
    /// Exponent of the uniform solve budget `(ε/d)^ρ̄/10`.
    pub rho_bar: f64,
    /// Mesh constant in `n = ⌈C₈ δ^{-1/ζ}⌉`.
    pub c8: f64,
    /// Resolvent bound entering `C(α)`.
    #[serde(rename = "M")]
    pub m_resolvent: f64,
    /// Use the polished exponential sums.
    pub polish: bool,
}

impl Default for SchemeParameters {
    fn default() -> Self {
        SchemeParameters {
            t: -1.0,
            zeta: 2.0,
            a1: 1.0,
            a_under: 2.5,
            c6: 0.6,
            b: PI / 12.0,
            c_under: None,
            cbar0: 10.0,
            rho_bar: 1.2,
            c8: crate::fem::C8_DEFAULT,
            m_resolvent: 1.0,
            polish: true,
        }
    }
}

impl SchemeParameters {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool, &str); 9] = [
            ("zeta", self.zeta > 0.0 && self.zeta <= 2.0, "must lie in (0, 2]"),
            ("A_1", self.a1 >= 1.0, "must be at least 1"),
            ("a_under", self.a_under > 0.0 && self.a_under < PI, "must lie in (0, π)"),
            ("c6", self.c6 > 0.0, "must be positive"),
            ("b", self.b > 0.0 && self.b < PI / 6.0, "must lie in (0, π/6)"),
            ("c_under", self.c_under.is_none_or(|c| c > 0.0), "must be positive"),
            ("Cbar0", self.cbar0 > 0.0, "must be positive"),
            ("rho_bar", self.rho_bar > 0.0 && self.c8 > 0.0, "rho_bar and c8 must be positive"),
            ("M", self.m_resolvent > 0.0, "must be positive"),
        ];
        for (field, ok, msg) in checks {
            if !ok {
                return Err(Error::config(field, msg));
            }
        }
        Ok(())
    }

    /// `c̲` for an operator whose smallest factor eigenvalue is `factor_lambda_min`.
    pub fn c_under_for(&self, factor_lambda_min: f64) -> f64 {
        self.c_under.unwrap_or_else(|| (factor_lambda_min / 2.0).min(1.0))
    }

    /// `C̄₁(ζ) = 4/(a̲ζ)²`.
    pub fn cbar1(&self) -> f64 {
        4.0 / (self.a_under * self.zeta).powi(2)
    }
}

/// `S_r` (or `S̄_r`) rescaled to `[λ̲, ∞)`.
pub fn operator_expsum(
    op: &SeparableOperator,
    r: usize,
    clipped: bool,
    opts: BuildOptions,
) -> Result<ExpSum> {
    let base = expsum::cached(r, opts)?;
    let s = base.rescale(op.lambda_min())?;
    Ok(if clipped { s.clip() } else { s })
}

/// `S_r(𝔅) g = Σ_k ω_k e^{-α_k 𝔅} g` with the sum rescaled to `λ̲`.
pub fn approx_inverse_apply(
    op: &SeparableOperator,
    g: &EigenTensor,
    r: usize,
    clipped: bool,
    opts: BuildOptions,
) -> Result<EigenTensor> {
    let s = operator_expsum(op, r, clipped, opts)?;
    op.apply_expsum(g, &s)
}

/// `C₀ e^{-(2-ξ)π√r/2}` with `C₀ = max{8, 2/λ̲}`.
pub fn operator_error_bound(r: usize, xi: f64, lambda_min: f64) -> f64 {
    let c0 = 8f64.max(2.0 / lambda_min);
    c0 * (-(2.0 - xi) * PI * (r as f64).sqrt() / 2.0).exp()
}

/// Smallest `r ≥ 1` with `γ(r) ≥ 4A₁/ε`.
pub fn choose_r(gamma: &GrowthClass, eps: f64, a1: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("choose_r needs eps > 0, got {eps}")));
    }
    gamma.validate()?;
    let target = (4.0 * a1 / eps).ln();
    let guess = gamma.inverse(4.0 * a1 / eps);
    if !guess.is_finite() || guess > 1e9 {
        return Err(Error::domain("growth class too slow for the requested eps"));
    }
    let mut r = (guess.ceil() as usize).saturating_sub(1).max(1);
    while gamma.ln_gamma(r as f64) < target - 1e-12 * target.abs().max(1.0) {
        r += 1;
    }
    Ok(r)
}

/// `R = ⌈C̄₁(ζ) (log(C̄₀ γ(r)))²⌉`, at least 1.
pub fn choose_big_r(gamma: &GrowthClass, r: usize, params: &SchemeParameters) -> usize {
    let log = (params.cbar0.ln() + gamma.ln_gamma(r as f64)).max(0.0);
    let value = params.cbar1() * log * log;
    ((value - CEIL_SLACK).ceil() as usize).max(1)
}

/// Lower bound `8e^{-π}(C̄₀γ(r))^{-2π/(a̲ζ)}` on every retained node of `S̄_R` (β = 1 units).
pub fn alpha_floor(gamma: &GrowthClass, r: usize, params: &SchemeParameters) -> f64 {
    let log = params.cbar0.ln() + gamma.ln_gamma(r as f64);
    8.0 * (-PI - 2.0 * PI / (params.a_under * params.zeta) * log).exp()
}

/// Total scalar count `Σ_terms Σ_j |support|`.
pub fn count_parameters<F: Factor>(u: &TensorSum<F>) -> usize {
    u.terms
        .iter()
        .flat_map(|t| t.factors.iter())
        .map(Factor::support)
        .sum()
}

/// `ū = S̄_R(𝔅) g_r` with `r = choose_r(γ, ε, A₁)` and `R = choose_R`.
///
/// `g_r` maps the selected `r` to the caller's rank-`r` approximation of `f`.
/// Errors against the dense oracle are recorded whenever the joint support fits.
pub fn solve_spectral(
    op: &SeparableOperator,
    f: &EigenTensor,
    g_r: &dyn Fn(usize) -> Result<EigenTensor>,
    eps: f64,
    params: &SchemeParameters,
    gamma: &GrowthClass,
    clipped: bool,
) -> Result<(EigenTensor, SolveReport)> {
    params.validate()?;
    let r = choose_r(gamma, eps, params.a1)?;
    let big_r = choose_big_r(gamma, r, params);
    let g = g_r(r)?;
    let opts = BuildOptions { polish: params.polish };
    let s = operator_expsum(op, big_r, clipped, opts)?;
    let u = op.apply_expsum(&g, &s)?;

    let lam = op.lambda_min();
    let c0 = 8f64.max(2.0 / lam);
    let mut report = SolveReport::new(r, big_r, params.clone());
    report.rank_in = g.rank();
    report.rank_out = u.rank();
    report.retained_terms = s.active_terms().count();
    report.parameter_count = count_parameters(&u);
    report.alpha_min = s.active_terms().map(|(a, _)| a).reduce(f64::min);
    let t = params.t;
    let bounds = &mut report.bounds;
    bounds.insert("expsum_sup_error".into(), s.measured_sup_error);
    bounds.insert("operator_error_bound_xi0".into(), operator_error_bound(big_r, 0.0, lam));
    bounds.insert("clip_threshold".into(), s.clip_threshold());
    bounds.insert("alpha_floor".into(), alpha_floor(gamma, r, params) / lam);
    bounds.insert("T_R".into(), t_r(big_r));
    let tg = tripnorm_upper(op, &g, t + params.zeta)?;
    let tu = tripnorm_upper(op, &u, t + 2.0 + params.zeta)?;
    report.stability.insert("tripnorm_g_t_plus_zeta".into(), tg);
    report.stability.insert("tripnorm_u_t_plus_2_plus_zeta".into(), tu);
    report.stability.insert("tripnorm_u_t_plus_2".into(), tripnorm_upper(op, &u, t + 2.0)?);
    report.stability.insert("bound_factor".into(), 1.0 + c0);

    if let Ok(errs) = oracle_errors(op, f, &u, t) {
        report.errors = errs;
    }
    Ok((u, report))
}

/// `‖𝔅⁻¹f - u‖` at orders `0`, `1` and `t + 2` on the joint support.
pub fn oracle_errors(
    op: &SeparableOperator,
    f: &EigenTensor,
    u: &EigenTensor,
    t: f64,
) -> Result<BTreeMap<String, f64>> {
    let joint = DenseCoefficientBlock::from_tensor_support(&f.plus(u)?, crate::model::ENUMERATION_CAP)?;
    let exact = dense_inverse_solve(op, &DenseCoefficientBlock::on_modes(f, joint.modes.clone())?)?;
    let approx = DenseCoefficientBlock::on_modes(u, joint.modes)?;
    let diff = DenseCoefficientBlock {
        data: exact.data.iter().zip(&approx.data).map(|(a, b)| a - b).collect(),
        modes: exact.modes,
    };
    let mut out = BTreeMap::new();
    out.insert("l2".into(), diff.ht_norm(op, 0.0)?);
    out.insert("h1".into(), diff.ht_norm(op, 1.0)?);
    out.insert("t_plus_2".into(), diff.ht_norm(op, t + 2.0)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dirichlet_laplacian_factor;
    use crate::tensor::{RankOneTerm, SparseVec};

    fn laplace(d: usize, m: usize) -> SeparableOperator {
        SeparableOperator::uniform(d, dirichlet_laplacian_factor(m, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn error_bound_values() {
        let lam = 2.0 * PI * PI;
        assert!((operator_error_bound(16, 0.0, lam) - 2.789873884967198e-5).abs() < 1e-18);
        assert_eq!(operator_error_bound(16, 2.0, lam), 8.0);
        assert_eq!(operator_error_bound(0, 0.0, lam), 8.0);
        assert_eq!(operator_error_bound(4, 2.0, 0.1), 20.0);
    }

    #[test]
    fn choose_r_examples() {
        let cube = GrowthClass::Polynomial { alpha: 3.0 };
        assert_eq!(choose_r(&cube, 0.032, 1.0).unwrap(), 5);
        let e = GrowthClass::default();
        assert_eq!(choose_r(&e, 4.0 / (2f64).exp(), 1.0).unwrap(), 2);
        let tab = GrowthClass::Tabulated { values: vec![1.0, 10.0, 100.0, 1000.0] };
        assert_eq!(choose_r(&tab, 0.05, 1.0).unwrap(), 2);
        assert_eq!(choose_r(&e, 100.0, 1.0).unwrap(), 1);
        assert!(choose_r(&e, 0.0, 1.0).is_err());
    }

    #[test]
    fn choose_big_r_examples() {
        let p = SchemeParameters { zeta: 2.0, a_under: 2.0, cbar0: 1.0, ..Default::default() };
        assert_eq!(choose_big_r(&GrowthClass::default(), 4, &p), 4);
        let flat = GrowthClass::Polynomial { alpha: 1.0 };
        assert_eq!(choose_big_r(&flat, 1, &p), 1);
        let q = SchemeParameters { zeta: 1.0, a_under: 3.0, cbar0: 10.0, ..Default::default() };
        let sq = GrowthClass::Polynomial { alpha: 2.0 };
        assert_eq!(choose_big_r(&sq, 20, &q), 31);
        let raw = q.cbar1() * 4000f64.ln().powi(2);
        assert!((raw - 30.5738930811007).abs() < 1e-9);
    }

    #[test]
    fn parameter_defaults_validate() {
        let p = SchemeParameters::default();
        p.validate().unwrap();
        assert_eq!(p.c_under_for(PI * PI), 1.0);
        assert_eq!(p.c_under_for(1.5), 0.75);
        let bad = SchemeParameters { b: PI / 6.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_mode_inverse() {
        let op = laplace(2, 4);
        let g = TensorSum::rank_one(RankOneTerm::new(vec![SparseVec::unit(1); 2]));
        let opts = BuildOptions { polish: false };
        let u = approx_inverse_apply(&op, &g, 25, false, opts).unwrap();
        let coeff: f64 = u
            .terms
            .iter()
            .map(|t| t.factors[0].get(1) * t.factors[1].get(1))
            .sum();
        let s = operator_expsum(&op, 25, false, opts).unwrap();
        let lam = 2.0 * PI * PI;
        assert!((coeff - 1.0 / lam).abs() <= s.measured_sup_error * (1.0 + 1e-9));
        assert!((coeff - s.eval(lam).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn rank_bookkeeping() {
        let op = laplace(2, 4);
        let g = TensorSum::new(
            2,
            (1..=3)
                .map(|k| RankOneTerm::new(vec![SparseVec::unit(k); 2]))
                .collect(),
        )
        .unwrap();
        let u = approx_inverse_apply(&op, &g, 1, false, BuildOptions::default()).unwrap();
        assert!(u.rank() <= 3);
        let u = approx_inverse_apply(&op, &g, 9, false, BuildOptions::default()).unwrap();
        assert_eq!(u.rank(), 27);
        assert_eq!(count_parameters(&u), 27 * 2);
        assert_eq!(count_parameters(&EigenTensor::zero(3)), 0);
    }
}
