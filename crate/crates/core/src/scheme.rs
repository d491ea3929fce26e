//! Scheme-Exp: contour quadrature of every factor exponential, assembled into
//! `ū(ε) = Σ_ℓ Σ_k ω̄_k ⊗_j E_j(g_j^ℓ, α_k, h)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{choose_h, choose_n, ContourRule, RuleSummary, validate_strip};
use crate::error::{Error, Result};
use crate::expsum::{t_r, BuildOptions, ExpSum};
use crate::fem::{exp_factor, mesh_for_target, Mesh1D};
use crate::growth::GrowthClass;
use crate::model::{FactorKind, SeparableOperator};
use crate::oracle::nodal_norms_sq;
use crate::spectral::{
    alpha_floor, choose_big_r, choose_r, count_parameters, operator_expsum, SchemeParameters,
};
use crate::tensor::{NodalTensor, RankOneTerm, TensorSum};

/// Smallest admissible solve budget `δ`.
pub const DELTA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounters {
    /// `(2N + 1) · rank(g_r) · K · d`, `K` the retained exponential terms.
    pub solves: u64,
    /// Solves actually run (`q ≥ 0`).
    pub executed_solves: u64,
    /// Mean flops of one executed solve.
    pub flops_per_solve: u64,
    /// Flops of the executed solves.
    pub executed_flops: u64,
    /// Flops of all `solves`, each `q < 0` solve charged as its conjugate.
    pub flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub n: usize,
    pub length: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub r: usize,
    #[serde(rename = "R")]
    pub big_r: usize,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_quad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub rank_in: usize,
    pub rank_out: usize,
    /// Exponential terms with nonzero clipped weight.
    pub retained_terms: usize,
    pub parameter_count: usize,
    /// Smallest retained node, in the units of `𝔅`.
    pub alpha_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub meshes: Vec<MeshInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work: Option<WorkCounters>,
    pub errors: BTreeMap<String, f64>,
    pub bounds: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub stability: BTreeMap<String, f64>,
    pub constants_used: SchemeParameters,
}

impl SolveReport {
    pub fn new(r: usize, big_r: usize, params: SchemeParameters) -> Self {
        SolveReport {
            r,
            big_r,
            n_quad: None,
            h: None,
            rank_in: 0,
            rank_out: 0,
            retained_terms: 0,
            parameter_count: 0,
            alpha_min: None,
            meshes: Vec::new(),
            rules: Vec::new(),
            work: None,
            errors: BTreeMap::new(),
            bounds: BTreeMap::new(),
            checks: BTreeMap::new(),
            stability: BTreeMap::new(),
            constants_used: params,
        }
    }
}

/// Every parameter of a run, fixed before any solve.
#[derive(Debug, Clone)]
pub struct SchemePlan {
    pub r: usize,
    pub big_r: usize,
    pub h: f64,
    pub n_quad: usize,
    pub delta: f64,
    pub c_under: f64,
    /// Clipped `S̄_R` rescaled to `[λ̲, ∞)`.
    pub sum: ExpSum,
    /// Retained `(α_k, ω̄_k)`, `k` ascending.
    pub terms: Vec<(f64, f64)>,
    pub rules: Vec<ContourRule>,
    pub meshes: Vec<Mesh1D>,
    pub alpha_floor: f64,
}

/// Steps (i) and (ii): `r`, `R`, `h`, `N`, clipped weights, meshes.
pub fn plan_scheme(
    op: &SeparableOperator,
    eps: f64,
    params: &SchemeParameters,
    gamma: &GrowthClass,
) -> Result<SchemePlan> {
    params.validate()?;
    if params.zeta < 1.0 {
        return Err(Error::config(
            "zeta",
            "Scheme-Exp needs 1 ≤ zeta ≤ 2: the L² accuracy of the factor solves \
             follows from the energy accuracy by a duality argument only in that range",
        ));
    }
    if let Some(j) = op.factors.iter().position(|f| f.kind != FactorKind::DirichletLaplacian) {
        return Err(Error::domain(format!(
            "factor {j} has no finite-element discretization"
        )));
    }
    let d = op.d();
    let factor_min = op.factor_lambda_min();
    let c_under = params.c_under_for(factor_min);
    if !validate_strip(params.b, c_under, factor_min) {
        return Err(Error::config(
            "b",
            format!(
                "strip condition cos(π/6 - b) + c_under < λ_min fails for b = {}, c_under = {c_under}, λ_min = {factor_min}",
                params.b
            ),
        ));
    }
    let r = choose_r(gamma, eps, params.a1)?;
    let big_r = choose_big_r(gamma, r, params);
    let sum = operator_expsum(op, big_r, true, BuildOptions { polish: params.polish })?;
    let terms: Vec<(f64, f64)> = sum.active_terms().collect();
    let h = choose_h(eps, d, params.c6)?;
    let alpha_min = terms.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let n_quad = if terms.is_empty() { 0 } else { choose_n(h, alpha_min, params.b) };
    let rules = terms
        .iter()
        .map(|&(alpha, _)| ContourRule::with_n(alpha, h, params.b, c_under, n_quad))
        .collect::<Result<Vec<_>>>()?;
    let delta = (1e-2f64).min((eps / d as f64).powf(params.rho_bar) / 10.0);
    if delta < DELTA_FLOOR {
        return Err(Error::config(
            "rho_bar",
            format!("solve budget delta = {delta:e} is below the floor {DELTA_FLOOR:e}"),
        ));
    }
    let meshes = op
        .factors
        .iter()
        .map(|f| mesh_for_target(delta, params.zeta, params.c8, f.length))
        .collect::<Result<Vec<_>>>()?;
    Ok(SchemePlan {
        r,
        big_r,
        h,
        n_quad,
        delta,
        c_under,
        alpha_floor: alpha_floor(gamma, r, params),
        sum,
        terms,
        rules,
        meshes,
    })
}

/// Runs Scheme-Exp on the nodal rank-`r` data `g_r`.
pub fn run_scheme_exp(
    op: &SeparableOperator,
    g_r: &NodalTensor,
    eps: f64,
    params: &SchemeParameters,
    gamma: &GrowthClass,
) -> Result<(NodalTensor, SolveReport)> {
    if g_r.d != op.d() {
        return Err(Error::domain("data and operator dimensions differ"));
    }
    let plan = plan_scheme(op, eps, params, gamma)?;
    let d = op.d();
    let tasks: Vec<(usize, usize, usize)> = (0..g_r.rank())
        .flat_map(|l| (0..plan.terms.len()).flat_map(move |k| (0..d).map(move |j| (l, k, j))))
        .collect();
    let factors = tasks
        .par_iter()
        .map(|&(l, k, j)| {
            exp_factor(
                &g_r.terms[l].factors[j],
                op.factors[j].coefficient,
                &plan.rules[k],
                &plan.meshes[j],
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut terms = Vec::with_capacity(g_r.rank() * plan.terms.len());
    for (chunk, &(_, k, _)) in factors.chunks(d).zip(tasks.iter().step_by(d.max(1))) {
        let term = RankOneTerm::new(chunk.iter().map(|e| e.value.clone()).collect());
        terms.push(term.scaled(plan.terms[k].1).balanced());
    }
    let u = TensorSum::new(d, terms)?;

    let executed_solves: u64 = factors.iter().map(|e| e.solves).sum();
    let executed_flops: u64 = factors.iter().map(|e| e.flops).sum();
    let work = WorkCounters {
        solves: (2 * plan.n_quad as u64 + 1) * tasks.len() as u64,
        executed_solves,
        flops_per_solve: executed_flops.checked_div(executed_solves).unwrap_or(0),
        executed_flops,
        flops: factors.iter().map(|e| e.logical_flops).sum(),
    };

    let lam = op.lambda_min();
    let mut report = SolveReport::new(plan.r, plan.big_r, params.clone());
    report.n_quad = Some(plan.n_quad);
    report.h = Some(plan.h);
    report.rank_in = g_r.rank();
    report.rank_out = u.rank();
    report.retained_terms = plan.terms.len();
    report.parameter_count = count_parameters(&u);
    report.alpha_min = plan.terms.iter().map(|t| t.0).reduce(f64::min);
    report.meshes = plan
        .meshes
        .iter()
        .map(|m| MeshInfo { n: m.n, length: m.length, delta: plan.delta })
        .collect();
    report.rules = plan.rules.iter().map(ContourRule::summary).collect();
    report.work = Some(work);

    let inv_t = 1.0 / t_r(plan.big_r);
    let unit_min = report.alpha_min.map_or(f64::INFINITY, |a| a * lam);
    report.bounds.insert("expsum_sup_error".into(), plan.sum.measured_sup_error);
    report.bounds.insert("alpha_min_unit".into(), unit_min);
    report.bounds.insert("inverse_T_R".into(), inv_t);
    report.bounds.insert("alpha_floor".into(), plan.alpha_floor);
    report.bounds.insert("delta".into(), plan.delta);
    report.bounds.insert("c_under".into(), plan.c_under);
    report
        .checks
        .insert("alpha_floor".into(), unit_min >= inv_t && inv_t >= plan.alpha_floor);
    report
        .checks
        .insert("rank_bound".into(), u.rank() <= plan.r * plan.big_r);
    report.checks.insert(
        "solve_count".into(),
        work.solves == (2 * plan.n_quad as u64 + 1) * (g_r.rank() * plan.terms.len() * d) as u64,
    );
    stability(op, g_r, &u, params.zeta, &mut report)?;
    Ok((u, report))
}

/// `tripnorm(ū, 1)` against `tripnorm(g_r, ζ - 1)` from nodal Gram sums;
/// only integer `ζ - 1` is evaluated.
fn stability(
    op: &SeparableOperator,
    g: &NodalTensor,
    u: &NodalTensor,
    zeta: f64,
    report: &mut SolveReport,
) -> Result<()> {
    let trip = |v: &NodalTensor, energy: bool| -> Result<f64> {
        let pick = |x: &NodalTensor| -> Result<f64> {
            let (l2, e) = nodal_norms_sq(&op.factors, x)?;
            Ok(if energy { e } else { l2 }.max(0.0).sqrt())
        };
        let mut best = pick(v)?;
        for t in &v.terms {
            best = best.max(pick(&TensorSum::rank_one(t.clone()))?);
        }
        Ok(best)
    };
    let tu = trip(u, true)?;
    report.stability.insert("tripnorm_u_h1".into(), tu);
    let s = zeta - 1.0;
    if s == 0.0 || s == 1.0 {
        let tg = trip(g, s == 1.0)?;
        report.stability.insert("tripnorm_g_zeta_minus_1".into(), tg);
        if tg > 0.0 {
            report.stability.insert("ratio".into(), tu / tg);
        }
    }
    Ok(())
}

/// Total cost `Σ_{q,ℓ,k,j} cost(q, k, ℓ, j)` in real flops.
pub fn work_estimate(report: &SolveReport) -> u64 {
    report.work.map_or(0, |w| w.flops)
}
