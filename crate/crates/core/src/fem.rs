//! Piecewise-linear Galerkin solves of `(zI - 𝔅_j)u = w` on `(0, L)` with
//! Dirichlet conditions, and the contour-assembled factor exponential.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contour::ContourRule;
use crate::error::{Error, Result};
use crate::model::FactorSpectrum;
use crate::oracle::project_nodal;
use crate::tensor::GridFunction;

/// Default `C₈`, calibrated at `δ = 10⁻³`, `ζ = 2`.
pub const C8_DEFAULT: f64 = 4.0;
/// Modes used by the dual-norm surrogate of a load.
pub const SURROGATE_MODES: usize = 64;

// Real flops per complex operation.
const CADD: u64 = 2;
const CMUL: u64 = 6;
const CDIV: u64 = 11;

/// Relative pivot size treated as singular.
const PIVOT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    pub n: usize,
    pub length: f64,
}

impl Mesh1D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n == 0 || !(length > 0.0) {
            return Err(Error::domain(format!("mesh needs n ≥ 1 and L > 0, got {n}, {length}")));
        }
        Ok(Mesh1D { n, length })
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGridFunction {
    pub mesh: Mesh1D,
    pub values: Vec<Complex64>,
}

impl ComplexGridFunction {
    pub fn re(&self) -> GridFunction {
        GridFunction {
            length: self.mesh.length,
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }

    pub fn max_abs_re(&self) -> f64 {
        self.values.iter().map(|v| v.re.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_im(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

/// Sub, main and super diagonals of `zM - K` for the P1 mass `M` and stiffness `K`.
pub fn pencil(z: Complex64, mesh: &Mesh1D, coefficient: f64) -> (Complex64, Complex64) {
    let h = mesh.spacing();
    let diag = z * (2.0 * h / 3.0) - 2.0 * coefficient / h;
    let off = z * (h / 6.0) + coefficient / h;
    (diag, off)
}

/// `M w` for the P1 mass matrix.
pub fn mass_apply(w: &[f64], h: f64) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { w[i - 1] } else { 0.0 };
            let right = if i + 1 < n { w[i + 1] } else { 0.0 };
            h / 6.0 * (left + 4.0 * w[i] + right)
        })
        .collect()
}

/// LU factorization of a complex tridiagonal matrix with partial pivoting.
struct TridiagLu {
    dl: Vec<Complex64>,
    d: Vec<Complex64>,
    du: Vec<Complex64>,
    du2: Vec<Complex64>,
    swapped: Vec<bool>,
    flops: u64,
}

impl TridiagLu {
    fn factor(
        mut dl: Vec<Complex64>,
        mut d: Vec<Complex64>,
        mut du: Vec<Complex64>,
        z: Complex64,
    ) -> Result<Self> {
        let n = d.len();
        let scale = d
            .iter()
            .chain(&dl)
            .chain(&du)
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        let mut du2 = vec![Complex64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let mut flops = 0;
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() > PIVOT_FLOOR * scale {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                    flops += CDIV + CMUL + CADD;
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                flops += CDIV + CMUL + CADD;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                    flops += CMUL;
                }
                swapped[i] = true;
            }
        }
        for (row, piv) in d.iter().enumerate() {
            if !(piv.norm() > PIVOT_FLOOR * scale) {
                return Err(Error::Singular {
                    re: z.re,
                    im: z.im,
                    row,
                    pivot: piv.norm(),
                });
            }
        }
        Ok(TridiagLu { dl, d, du, du2, swapped, flops })
    }

    fn solve(&self, b: &mut [Complex64]) -> u64 {
        let n = b.len();
        let mut flops = 0;
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
            flops += CMUL + CADD;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            if i + 1 < n {
                acc -= self.du[i] * b[i + 1];
                flops += CMUL + CADD;
            }
            if i + 2 < n {
                acc -= self.du2[i] * b[i + 2];
                flops += CMUL + CADD;
            }
            b[i] = acc / self.d[i];
            flops += CDIV;
        }
        flops
    }
}

/// A resolvent solution with the real flop count of assembly, factorization
/// and substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolve {
    pub u: ComplexGridFunction,
    pub flops: u64,
}

/// Galerkin solution of `z⟨u, v⟩ - b_j(u, v) = ⟨w, v⟩`, i.e. `(zM - K)u = Mw`.
pub fn solve_resolvent(
    z: Complex64,
    w: &GridFunction,
    mesh: &Mesh1D,
    coefficient: f64,
) -> Result<ResolventSolve> {
    if w.n() != mesh.n {
        return Err(Error::domain(format!(
            "load has {} nodes, mesh has {}",
            w.n(),
            mesh.n
        )));
    }
    let n = mesh.n;
    let (diag, off) = pencil(z, mesh, coefficient);
    let lu = TridiagLu::factor(vec![off; n - 1], vec![diag; n], vec![off; n - 1], z)?;
    let mut b: Vec<Complex64> = mass_apply(&w.values, mesh.spacing())
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    let assembly = 5 * n as u64 + 2 * CMUL + 4 * CADD;
    let flops = assembly + lu.flops + lu.solve(&mut b);
    Ok(ResolventSolve {
        u: ComplexGridFunction { mesh: *mesh, values: b },
        flops,
    })
}

/// Normwise backward error `‖(zM - K)u - Mw‖_∞ / (‖zM - K‖_∞ ‖u‖_∞ + ‖Mw‖_∞)`.
pub fn resolvent_residual(z: Complex64, w: &GridFunction, u: &ComplexGridFunction, coefficient: f64) -> f64 {
    let (diag, off) = pencil(z, &u.mesh, coefficient);
    let load = mass_apply(&w.values, u.mesh.spacing());
    let v = &u.values;
    let n = v.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut acc = diag * v[i];
        if i > 0 {
            acc += off * v[i - 1];
        }
        if i + 1 < n {
            acc += off * v[i + 1];
        }
        worst = worst.max((acc - load[i]).norm());
    }
    let a_norm = diag.norm() + 2.0 * off.norm();
    let u_norm = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let b_norm = load.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let scale = a_norm * u_norm + b_norm;
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// `n = ⌈C₈ δ^{-1/ζ}⌉`.
pub fn mesh_for_target(delta: f64, zeta: f64, c8: f64, length: f64) -> Result<Mesh1D> {
    if !(delta > 0.0) || !(1.0..=2.0).contains(&zeta) {
        return Err(Error::domain(format!(
            "mesh_for_target needs delta > 0 and zeta in [1, 2], got {delta}, {zeta}"
        )));
    }
    let n = (c8 * delta.powf(-1.0 / zeta) - 1e-9).ceil();
    if n > 1e8 {
        return Err(Error::config("delta", format!("mesh of {n} nodes exceeds the solver limit")));
    }
    Mesh1D::new(n.max(1.0) as usize, length)
}

/// `(Σ_{k ≤ 64} λ_k^s ⟨w, e_k⟩²)^{1/2}` for a nodal load.
pub fn surrogate_norm(spec: &FactorSpectrum, w: &GridFunction, s: f64) -> Result<f64> {
    let c = project_nodal(spec, w, SURROGATE_MODES)?;
    Ok(c.iter()
        .map(|(k, v)| spec.eigenvalue_any(k).map(|l| l.powf(s) * v * v))
        .sum::<Result<f64>>()?
        .sqrt())
}

/// `(a ∫ |u' - v'|²)^{1/2}` for piecewise-linear `u`, `v` on different uniform
/// meshes of the same interval, exact over the merged breakpoints.
pub fn energy_distance(u: &ComplexGridFunction, v: &ComplexGridFunction, coefficient: f64) -> f64 {
    let slopes = |f: &ComplexGridFunction| {
        let h = f.mesh.spacing();
        let node = |i: usize| {
            if i == 0 || i > f.mesh.n {
                Complex64::new(0.0, 0.0)
            } else {
                f.values[i - 1]
            }
        };
        (0..=f.mesh.n)
            .map(|i| (node(i + 1) - node(i)) / h)
            .collect::<Vec<_>>()
    };
    let (su, sv) = (slopes(u), slopes(v));
    let (hu, hv) = (u.mesh.spacing(), v.mesh.spacing());
    let length = u.mesh.length;
    let (mut i, mut j, mut x) = (0usize, 0usize, 0.0f64);
    let mut acc = 0.0;
    while i < su.len() && j < sv.len() {
        let next_u = (i + 1) as f64 * hu;
        let next_v = (j + 1) as f64 * hv;
        let next = next_u.min(next_v).min(length);
        acc += (su[i] - sv[j]).norm_sqr() * (next - x);
        x = next;
        let tol = 1e-12 * length;
        if next_u - next <= tol {
            i += 1;
        }
        if next_v - next <= tol {
            j += 1;
        }
    }
    (coefficient * acc).sqrt()
}

/// Outcome of one factor exponential `E_j(τ_j, α, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFactor {
    pub value: GridFunction,
    /// Executed solves, `q = 0..=N`.
    pub solves: u64,
    /// Flops of the executed solves.
    pub flops: u64,
    /// Flops of all `2N + 1` solves, each `q < 0` charged as its conjugate partner.
    pub logical_flops: u64,
}

fn contour_solves(
    tau: &GridFunction,
    coefficient: f64,
    rule: &ContourRule,
    mesh: &Mesh1D,
    qs: impl Iterator<Item = i64>,
) -> Result<Vec<(i64, Vec<Complex64>, u64)>> {
    let w = tau.resample(mesh.n);
    let mut out = Vec::new();
    for q in qs {
        let solve = solve_resolvent(rule.node(q), &w, mesh, coefficient)?;
        let p = rule.prefactor(q);
        out.push((q, solve.u.values.into_iter().map(|v| p * v).collect(), solve.flops));
    }
    Ok(out)
}

/// `E_j = h(ū₀ + 2 Re Σ_{q=1}^N ū_q)` on `mesh`, with `ū_q` the prefactor times
/// the resolvent solve at `Γ(qh)`. Only `q ≥ 0` is solved.
pub fn exp_factor(
    tau: &GridFunction,
    coefficient: f64,
    rule: &ContourRule,
    mesh: &Mesh1D,
) -> Result<ExpFactor> {
    let parts = contour_solves(tau, coefficient, rule, mesh, 0..=rule.n as i64)?;
    let mut acc = vec![0.0; mesh.n];
    let (mut flops, mut logical_flops) = (0, 0);
    for (q, u, f) in &parts {
        let weight = if *q == 0 { 1.0 } else { 2.0 };
        for (a, v) in acc.iter_mut().zip(u) {
            *a += weight * v.re;
        }
        flops += f;
        logical_flops += if *q == 0 { *f } else { 2 * f };
    }
    acc.iter_mut().for_each(|a| *a *= rule.h);
    Ok(ExpFactor {
        value: GridFunction { length: mesh.length, values: acc },
        solves: parts.len() as u64,
        flops,
        logical_flops,
    })
}

/// `h Σ_{q=-N}^N ū_q` without the conjugation shortcut.
pub fn exp_factor_full(
    tau: &GridFunction,
    coefficient: f64,
    rule: &ContourRule,
    mesh: &Mesh1D,
) -> Result<ComplexGridFunction> {
    let n = rule.n as i64;
    let parts = contour_solves(tau, coefficient, rule, mesh, -n..=n)?;
    let mut acc = vec![Complex64::new(0.0, 0.0); mesh.n];
    for (_, u, _) in &parts {
        for (a, v) in acc.iter_mut().zip(u) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a *= rule.h);
    Ok(ComplexGridFunction { mesh: *mesh, values: acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{hyperbola_point, ContourRule};
    use crate::model::dirichlet_laplacian_factor;
    use crate::oracle::FemExponential;
    use std::f64::consts::PI;

    fn sine(n: usize) -> GridFunction {
        GridFunction::sample(n, 1.0, |x| (2f64).sqrt() * (PI * x).sin())
    }

    fn smooth(n: usize) -> GridFunction {
        GridFunction::sample(n, 1.0, |x| x * (1.0 - x) * (1.0 + x).exp())
    }

    fn amplitude(u: &GridFunction) -> f64 {
        let spec = dirichlet_laplacian_factor(4, 1.0).unwrap();
        project_nodal(&spec, u, 1).unwrap().get(1)
    }

    #[test]
    fn single_mode_resolvent() {
        let z = hyperbola_point(0.0, 1.0);
        assert!((z.re - 1.86603).abs() < 1e-5);
        let expected = 1.0 / (z.re - PI * PI);
        assert!((expected + 0.12494410317393438).abs() < 1e-15);
        let mesh = Mesh1D::new(400, 1.0).unwrap();
        let u = solve_resolvent(z, &sine(400), &mesh, 1.0).unwrap().u;
        assert!(u.max_abs_im() == 0.0);
        let a = amplitude(&u.re());
        assert!((a - expected).abs() < 1e-4, "{a}");
    }

    #[test]
    fn zero_load_gives_zero() {
        let mesh = Mesh1D::new(17, 1.0).unwrap();
        let u = solve_resolvent(Complex64::new(2.0, 1.0), &GridFunction::zeros(17, 1.0), &mesh, 1.0).unwrap();
        assert!(u.u.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn backward_stable_residual() {
        let mesh = Mesh1D::new(1000, 1.0).unwrap();
        for q in [0.0, 1.0, 3.0, -2.5] {
            let z = hyperbola_point(q, 1.0);
            let w = smooth(1000);
            let u = solve_resolvent(z, &w, &mesh, 1.0).unwrap().u;
            assert!(resolvent_residual(z, &w, &u, 1.0) < 1e-12);
        }
    }

    #[test]
    fn singular_shift_is_reported() {
        let n = 9;
        let h = 1.0 / (n + 1) as f64;
        let lam = 6.0 / (h * h) * (1.0 - (PI * h).cos()) / (2.0 + (PI * h).cos());
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let err = solve_resolvent(Complex64::new(lam, 0.0), &sine(n), &mesh, 1.0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }), "{err}");
    }

    #[test]
    fn mesh_rule_examples() {
        assert_eq!(mesh_for_target(1e-2, 2.0, 4.0, 1.0).unwrap().n, 40);
        let a = mesh_for_target(1e-2, 1.0, 4.0, 1.0).unwrap().n;
        let b = mesh_for_target(5e-3, 1.0, 4.0, 1.0).unwrap().n;
        assert_eq!(b, 2 * a);
        assert!(mesh_for_target(1e-2, 0.5, 4.0, 1.0).is_err());
    }

    #[test]
    fn self_convergence_is_first_order() {
        let z = hyperbola_point(0.1, 1.0);
        let fine = Mesh1D::new(4095, 1.0).unwrap();
        let reference = solve_resolvent(z, &smooth(4095), &fine, 1.0).unwrap().u;
        let err = |n: usize| {
            let mesh = Mesh1D::new(n, 1.0).unwrap();
            let u = solve_resolvent(z, &smooth(n), &mesh, 1.0).unwrap().u;
            energy_distance(&u, &reference, 1.0)
        };
        let (e1, e2) = (err(255), err(511));
        let rate = (e1 / e2).log2();
        assert!((0.9..1.1).contains(&rate), "rate {rate}");
    }

    #[test]
    fn calibration_of_c8() {
        let spec = dirichlet_laplacian_factor(SURROGATE_MODES, 1.0).unwrap();
        let z = hyperbola_point(0.0, 1.0);
        let delta = 1e-3;
        let n_ref = (1 << 14) - 1;
        let fine = Mesh1D::new(n_ref, 1.0).unwrap();
        let reference = solve_resolvent(z, &smooth(n_ref), &fine, 1.0).unwrap().u;
        let budget = delta * surrogate_norm(&spec, &smooth(n_ref), 1.0).unwrap();
        let err = |n: usize| {
            let mesh = Mesh1D::new(n, 1.0).unwrap();
            let u = solve_resolvent(z, &smooth(n), &mesh, 1.0).unwrap().u;
            energy_distance(&u, &reference, 1.0)
        };
        let (mut lo, mut hi) = (1usize, 4096usize);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if err(mid) <= budget {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let c8 = lo as f64 * delta.sqrt();
        assert!(c8 <= C8_DEFAULT && c8 > 0.8 * C8_DEFAULT, "calibrated C8 = {c8}");
    }

    #[test]
    fn exp_factor_matches_dense_exponential() {
        let n = 255;
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let tau = sine(n);
        let dense = FemExponential::new(n, 1.0, 1.0).unwrap();
        for alpha in [0.1, 0.5] {
            let rule = ContourRule::new(alpha, 0.2, PI / 12.0, 1.0).unwrap();
            let e = exp_factor(&tau, 1.0, &rule, &mesh).unwrap();
            let reference = dense.apply(alpha, &tau.values);
            let err = e
                .value
                .values
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-3, "alpha {alpha}: {err}");
            assert_eq!(e.solves, rule.n as u64 + 1);
        }
        let rule = ContourRule::new(0.1, 0.1, PI / 12.0, 1.0).unwrap();
        let amp = amplitude(&exp_factor(&tau, 1.0, &rule, &mesh).unwrap().value);
        assert!((amp - 0.37270783885343794).abs() < 2e-3, "{amp}");
    }

    #[test]
    fn strong_decay_for_large_alpha() {
        let n = 127;
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let rule = ContourRule::new(5.0, 0.2, PI / 12.0, 1.0).unwrap();
        let e = exp_factor(&sine(n), 1.0, &rule, &mesh).unwrap().value;
        let norm = crate::tensor::Factor::norm(&e);
        let budget = crate::contour::error_constant(5.0, PI / 12.0, 1.0, 1.0)
            * (-2.0 * PI * (PI / 12.0) / 0.2).exp();
        assert!(norm <= 1e-15 + budget, "{norm} vs {budget}");
    }

    #[test]
    fn full_sum_is_real() {
        let n = 200;
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let rule = ContourRule::new(0.3, 0.15, PI / 12.0, 1.0).unwrap();
        let full = exp_factor_full(&smooth(n), 1.0, &rule, &mesh).unwrap();
        assert!(full.max_abs_im() <= 1e-12 * full.max_abs_re());
        let half = exp_factor(&smooth(n), 1.0, &rule, &mesh).unwrap().value;
        let diff = half
            .values
            .iter()
            .zip(&full.values)
            .map(|(a, b)| (a - b.re).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-13 * full.max_abs_re());
    }
}
