//! Growth sequences `γ` with `γ(0) = 1` that encode tensor approximation rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthClass {
    /// `max(1, x)^alpha`.
    Polynomial { alpha: f64 },
    /// `exp(c x^beta)`.
    StretchedExponential { c: f64, beta: f64 },
    /// `γ(k) = values[k]`, log-linear in between and beyond the last entry.
    Tabulated { values: Vec<f64> },
}

/// Numerical check of the admissibility conditions on `x ≤ 10³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    /// Estimate of `C̄` in `γ⁻¹(x) + 1 ≤ γ⁻¹(C̄x)`, i.e. `max γ(y + 1)/γ(y)`.
    pub cbar: f64,
    /// Estimate of the `μ` with `x^μ ≤ Cγ(x)`.
    pub mu: f64,
    pub satisfied: bool,
}

impl Default for GrowthClass {
    fn default() -> Self {
        GrowthClass::StretchedExponential { c: 1.0, beta: 1.0 }
    }
}

impl GrowthClass {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            GrowthClass::Polynomial { alpha } => *alpha > 0.0,
            GrowthClass::StretchedExponential { c, beta } => *c > 0.0 && *beta > 0.0,
            GrowthClass::Tabulated { values } => {
                values.len() >= 2
                    && values[0] == 1.0
                    && values.windows(2).all(|w| w[1] > w[0])
                    && values.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid growth class {self:?}")))
        }
    }

    /// `ln γ(x)`, finite where `γ(x)` itself would overflow.
    pub fn ln_gamma(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            GrowthClass::Polynomial { alpha } => alpha * x.max(1.0).ln(),
            GrowthClass::StretchedExponential { c, beta } => c * x.powf(*beta),
            GrowthClass::Tabulated { values } => {
                let last = values.len() - 1;
                let i = (x.floor() as usize).min(last - 1);
                let (a, b) = (values[i].ln(), values[i + 1].ln());
                a + (x - i as f64) * (b - a)
            }
        }
    }

    pub fn gamma(&self, x: f64) -> f64 {
        self.ln_gamma(x).exp()
    }

    /// `γ⁻¹(y)`; `0` for `y ≤ 1`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 1.0 {
            return 0.0;
        }
        let ly = y.ln();
        match self {
            GrowthClass::Polynomial { alpha } => (ly / alpha).exp(),
            GrowthClass::StretchedExponential { c, beta } => (ly / c).powf(1.0 / beta),
            GrowthClass::Tabulated { values } => {
                let last = values.len() - 1;
                let i = values[..last]
                    .iter()
                    .rposition(|v| v.ln() <= ly)
                    .unwrap_or(0)
                    .min(last - 1);
                let (a, b) = (values[i].ln(), values[i + 1].ln());
                i as f64 + (ly - a) / (b - a)
            }
        }
    }

    pub fn check_conditions(&self) -> GrowthCheck {
        let step = 0.25;
        let ratio = |y: f64| self.ln_gamma(y + 1.0) - self.ln_gamma(y);
        let grid = (0..=4000).map(|i| i as f64 * step);
        let log_cbar = grid.clone().map(ratio).fold(f64::NEG_INFINITY, f64::max);
        let mu = grid
            .filter(|&x| x >= 2.0)
            .map(|x| self.ln_gamma(x) / x.ln())
            .fold(f64::INFINITY, f64::min);
        let bounded = ratio(1000.0) <= ratio(500.0) + 1e-9;
        GrowthCheck {
            cbar: log_cbar.exp(),
            mu,
            satisfied: log_cbar.is_finite() && bounded && mu > 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_zero_is_one() {
        for g in [
            GrowthClass::Polynomial { alpha: 2.0 },
            GrowthClass::StretchedExponential { c: 0.5, beta: 0.5 },
            GrowthClass::Tabulated { values: vec![1.0, 10.0, 100.0] },
        ] {
            assert_eq!(g.gamma(0.0), 1.0);
            assert!(g.check_conditions().satisfied, "{g:?}");
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let g = GrowthClass::Polynomial { alpha: 3.0 };
        assert!((g.inverse(125.0) - 5.0).abs() < 1e-12);
        let t = GrowthClass::Tabulated { values: vec![1.0, 10.0, 100.0] };
        assert!((t.inverse(100.0) - 2.0).abs() < 1e-12);
        assert!((t.gamma(2.5) - 1000f64.sqrt() * 10.0).abs() < 1e-9);
        assert!((t.inverse(t.gamma(3.7)) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn fast_growth_fails_first_condition() {
        let g = GrowthClass::StretchedExponential { c: 1.0, beta: 1.5 };
        assert!(!g.check_conditions().satisfied);
        let e = GrowthClass::default();
        let chk = e.check_conditions();
        assert!((chk.cbar - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(GrowthClass::Tabulated { values: vec![2.0, 3.0] }.validate().is_err());
        assert!(GrowthClass::Tabulated { values: vec![1.0, 1.0] }.validate().is_err());
        assert!(GrowthClass::Polynomial { alpha: 0.0 }.validate().is_err());
    }
}
