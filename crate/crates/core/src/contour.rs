//! Hyperbola contour `Γ(x) = c̲ + cosh(x + iπ/6)` and the truncated trapezoid
//! rule for `e^{-α𝔅_j}`.

use std::f64::consts::{FRAC_PI_6, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `c̲ + cosh(x)cos(π/6) + i sinh(x)sin(π/6)`.
pub fn hyperbola_point(x: f64, c_under: f64) -> Complex64 {
    Complex64::new(
        c_under + x.cosh() * FRAC_PI_6.cos(),
        x.sinh() * FRAC_PI_6.sin(),
    )
}

/// `Γ'(x) = sinh(x + iπ/6)`.
pub fn hyperbola_derivative(x: f64) -> Complex64 {
    Complex64::new(x, FRAC_PI_6).sinh()
}

fn beta0(alpha: f64) -> f64 {
    alpha / 2.0 * FRAC_PI_6.cos()
}

/// One-sided node count `N(h)`.
pub fn choose_n(h: f64, alpha: f64, b: f64) -> usize {
    let b0 = beta0(alpha);
    let term = |v: f64| (v / h).floor() + 1.0;
    let n = term((1.0 / b0).ln())
        .max(term((2.0 * PI * b / (b0 * h)).ln()))
        .max(0.0);
    n as usize
}

/// `C(α)` in the quadrature bound `C(α)e^{-2πb/h}`.
pub fn error_constant(alpha: f64, b: f64, m: f64, c_under: f64) -> f64 {
    let b0 = beta0(alpha);
    let b1 = alpha / 2.0 * (FRAC_PI_6 + b).cos();
    let b2 = alpha / 2.0 * (FRAC_PI_6 - b).cos();
    let e2 = 2f64.exp();
    m / PI
        * (-c_under * alpha).exp()
        * (1.0 / b0 + e2 / (e2 - 1.0) * ((-b1).exp() / b1 + (-b2).exp() / b2))
}

/// `h(ε) = c₆ / log(d/ε)`.
pub fn choose_h(eps: f64, d: usize, c6: f64) -> Result<f64> {
    let ratio = d as f64 / eps;
    if !(eps > 0.0) || ratio <= 1.0 {
        return Err(Error::domain(format!("choose_h needs d/eps > 1, got d = {d}, eps = {eps}")));
    }
    Ok(c6 / ratio.ln())
}

/// Largest admissible strip half-width; `π/6` itself is excluded up to roundoff.
fn b_max() -> f64 {
    FRAC_PI_6 * (1.0 - 1e-12)
}

/// Strip condition `cos(π/6 - b) + c̲ < λ̲`, `0 < b < π/6`, `c̲ ≤ λ̲/2`.
pub fn validate_strip(b: f64, c_under: f64, lambda_min: f64) -> bool {
    b > 0.0
        && b < b_max()
        && c_under <= lambda_min / 2.0
        && (FRAC_PI_6 - b).cos() + c_under < lambda_min
}

/// Trapezoid rule on `q = -N..=N` for one `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourRule {
    pub h: f64,
    pub n: usize,
    pub c_under: f64,
    pub b: f64,
    pub alpha: f64,
    /// `z_q = Γ(qh)`, `q = -N..=N`.
    pub nodes: Vec<Complex64>,
    /// `-(1/2πi) sinh(qh + iπ/6) e^{-αΓ(qh)}`, `q = -N..=N`.
    pub prefactors: Vec<Complex64>,
}

/// Serialized form of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub h: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub b: f64,
    pub c_under: f64,
    pub alpha: f64,
}

impl ContourRule {
    /// Rule with `N = choose_n(h, α, b)`.
    pub fn new(alpha: f64, h: f64, b: f64, c_under: f64) -> Result<Self> {
        Self::with_n(alpha, h, b, c_under, choose_n(h, alpha, b))
    }

    pub fn with_n(alpha: f64, h: f64, b: f64, c_under: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && h > 0.0) {
            return Err(Error::domain(format!("rule needs alpha, h > 0, got {alpha}, {h}")));
        }
        if !(b > 0.0 && b < b_max()) {
            return Err(Error::domain(format!("strip half-width {b} outside (0, π/6)")));
        }
        let scale = Complex64::new(0.0, 1.0 / (2.0 * PI));
        let mut nodes = Vec::with_capacity(2 * n + 1);
        let mut prefactors = Vec::with_capacity(2 * n + 1);
        for q in -(n as i64)..=(n as i64) {
            let x = q as f64 * h;
            let z = hyperbola_point(x, c_under);
            nodes.push(z);
            prefactors.push(scale * hyperbola_derivative(x) * (-alpha * z).exp());
        }
        Ok(ContourRule { h, n, c_under, b, alpha, nodes, prefactors })
    }

    /// `z_q` for `q ∈ -N..=N`.
    pub fn node(&self, q: i64) -> Complex64 {
        self.nodes[(q + self.n as i64) as usize]
    }

    pub fn prefactor(&self, q: i64) -> Complex64 {
        self.prefactors[(q + self.n as i64) as usize]
    }

    pub fn summary(&self) -> RuleSummary {
        RuleSummary {
            h: self.h,
            n: self.n,
            b: self.b,
            c_under: self.c_under,
            alpha: self.alpha,
        }
    }

    /// `h Σ_q prefactor_q / (z_q - λ)`: the rule applied to one eigenvalue.
    pub fn apply_scalar(&self, lambda: f64) -> f64 {
        let total: Complex64 = self
            .nodes
            .iter()
            .zip(&self.prefactors)
            .map(|(z, p)| p / (z - lambda))
            .sum();
        self.h * total.re
    }
}
