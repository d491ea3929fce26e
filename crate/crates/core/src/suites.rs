//! Acceptance criteria and the validation suites built from them.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::contour::{choose_n, ContourRule};
use crate::error::{Error, Result};
use crate::expsum::{self, best_bound, t_r, BuildOptions};
use crate::fem::{exp_factor, Mesh1D};
use crate::growth::GrowthClass;
use crate::model::{dirichlet_laplacian_factor, SeparableOperator};
use crate::oracle::{
    dense_forward, dense_inverse_solve, eigen_exact_pointwise, error_norms, DenseCoefficientBlock,
    ExactSolution, FactorFn, FemExponential, NormKind,
};
use crate::scheme::{run_scheme_exp, work_estimate, SolveReport};
use crate::spectral::{approx_inverse_apply, count_parameters, SchemeParameters};
use crate::tensor::{
    truncate_rank_one, EigenTensor, Factor, GridFunction, NodalTensor, RankOneTerm, SparseVec,
    TensorSum,
};

pub const DEFAULT_SEED: u64 = 20_240_611;
/// Interior nodes at which nodal data are sampled.
pub const DATA_NODES: usize = 2047;
/// Modes used to project the exact data.
pub const EXACT_MODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Expsum,
    Spectral,
    Contour,
    Scheme,
    All,
}

impl Suite {
    pub fn criteria(self) -> &'static [u32] {
        match self {
            Suite::Expsum => &[1, 2],
            Suite::Spectral => &[3, 5, 6, 9],
            Suite::Contour => &[4],
            Suite::Scheme => &[7, 8],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9],
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "expsum" => Suite::Expsum,
            "spectral" => Suite::Spectral,
            "contour" => Suite::Contour,
            "scheme" => Suite::Scheme,
            "all" => Suite::All,
            other => return Err(Error::config("suite", format!("unknown suite `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub seconds: f64,
    pub limit_seconds: f64,
    pub failures: Vec<String>,
    pub measured: Map<String, Value>,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {} ({}): {:.2}s of {:.0}s{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.limit_seconds,
            if self.failures.is_empty() {
                String::new()
            } else {
                format!(" | {}", self.failures.join("; "))
            }
        )
    }
}

struct Checker {
    failures: Vec<String>,
    measured: Map<String, Value>,
}

impl Checker {
    fn new() -> Self {
        Checker { failures: Vec::new(), measured: Map::new() }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }

    fn record(&mut self, key: &str, value: impl Serialize) {
        self.measured.insert(key.into(), json!(value));
    }
}

fn run(
    id: u32,
    name: &str,
    limit_seconds: f64,
    body: impl FnOnce(&mut Checker) -> Result<()>,
) -> CriterionOutcome {
    let start = Instant::now();
    let mut c = Checker::new();
    if let Err(e) = body(&mut c) {
        c.failures.push(format!("error: {e}"));
    }
    let seconds = start.elapsed().as_secs_f64();
    if seconds >= limit_seconds {
        c.failures.push(format!("runtime {seconds:.1}s exceeds {limit_seconds}s"));
    }
    CriterionOutcome {
        id,
        name: name.into(),
        passed: c.failures.is_empty(),
        seconds,
        limit_seconds,
        failures: c.failures,
        measured: c.measured,
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

const EXPSUM_RANKS: [usize; 6] = [4, 9, 16, 25, 36, 49];

fn laplace(d: usize, modes: usize) -> Result<SeparableOperator> {
    SeparableOperator::uniform(d, dirichlet_laplacian_factor(modes, 1.0)?)
}

fn random_dense(rng: &mut ChaCha8Rng, m: usize) -> SparseVec {
    SparseVec::dense((0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `x(1 - x)` on every factor, sampled at [`DATA_NODES`] interior nodes.
pub fn bubble_data(d: usize) -> NodalTensor {
    let g = GridFunction::sample(DATA_NODES, 1.0, |x| x * (1.0 - x));
    NodalTensor::rank_one(RankOneTerm::new(vec![g; d]))
}

/// Eigen-exact solution for the `x(1 - x)` data on the unit cube.
pub fn bubble_exact(op: &SeparableOperator) -> Result<ExactSolution> {
    let f: FactorFn = Arc::new(|x: f64| x * (1.0 - x));
    ExactSolution::from_functions(op.factors.clone(), vec![vec![f; op.d()]], EXACT_MODES)
}

pub fn criterion_1() -> CriterionOutcome {
    run(1, "exponential-sum tail domination", 10.0, |c| {
        for r in EXPSUM_RANKS {
            let s = expsum::cached(r, BuildOptions::default())?;
            let t = t_r(r);
            let worst = expsum::log_grid(t, 1e6 * t, 100_000)
                .map(|x| x * s.eval_unchecked(x))
                .fold(0.0, f64::max);
            c.record(&format!("max_xS_r{r}"), worst);
            c.check(worst <= 1.0 + 1e-14, || format!("r = {r}: max x·S(x) = {worst}"));
        }
        Ok(())
    })
}

pub fn criterion_2() -> CriterionOutcome {
    run(2, "exponential-sum decay", 60.0, |c| {
        let roots: Vec<f64> = EXPSUM_RANKS.iter().map(|&r| (r as f64).sqrt()).collect();
        for (label, polish) in [("plain", false), ("polished", true)] {
            let errs = EXPSUM_RANKS
                .iter()
                .map(|&r| Ok(expsum::cached(r, BuildOptions { polish })?.measured_sup_error))
                .collect::<Result<Vec<f64>>>()?;
            let logs: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
            let slope = fit_slope(&roots, &logs);
            c.record(&format!("{label}_errors"), &errs);
            c.record(&format!("{label}_slope"), slope);
            c.check(slope <= -1.5, || format!("{label} slope {slope} > -1.5"));
        }
        let e25 = expsum::cached(25, BuildOptions { polish: true })?.measured_sup_error;
        let limit = 50.0 * best_bound(25, 1.0);
        c.record("polished_r25_limit", limit);
        c.check(e25 <= limit, || format!("polished r = 25 error {e25} > {limit}"));
        Ok(())
    })
}

pub fn criterion_3(seed: u64) -> CriterionOutcome {
    run(3, "approximate-inverse error", 30.0, |c| {
        let op = laplace(3, 6)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..2)
            .map(|_| RankOneTerm::new((0..3).map(|_| random_dense(&mut rng, 6)).collect()))
            .collect();
        let f = TensorSum::new(3, terms)?;
        let block = DenseCoefficientBlock::from_tensor(&f, &[6, 6, 6])?;
        let exact = dense_inverse_solve(&op, &block)?;
        let f_minus2 = block.ht_norm(&op, -2.0)?;
        let c0 = 8f64.max(2.0 / op.lambda_min());
        let mut roots = Vec::new();
        let mut logs = Vec::new();
        for r in [9usize, 16, 25, 36] {
            let u = approx_inverse_apply(&op, &f, r, false, BuildOptions { polish: true })?;
            let approx = DenseCoefficientBlock::from_tensor(&u, &[6, 6, 6])?;
            let diff = DenseCoefficientBlock {
                modes: exact.modes.clone(),
                data: exact.data.iter().zip(&approx.data).map(|(a, b)| a - b).collect(),
            };
            let err = diff.ht_norm(&op, 0.0)?;
            let bound = 10.0 * c0 * (-PI * (r as f64).sqrt()).exp() * f_minus2;
            c.record(&format!("error_r{r}"), err);
            c.record(&format!("bound_r{r}"), bound);
            c.check(err <= bound, || format!("r = {r}: error {err:e} > bound {bound:e}"));
            roots.push((r as f64).sqrt());
            logs.push(err.ln());
        }
        let slope = fit_slope(&roots, &logs);
        c.record("slope", slope);
        c.record("f_minus2", f_minus2);
        c.check(slope <= -2.5, || format!("slope {slope} > -2.5"));
        Ok(())
    })
}

pub fn criterion_4(seed: u64) -> CriterionOutcome {
    run(4, "Dunford quadrature convergence", 60.0, |c| {
        let n = 512;
        let b = PI / 12.0;
        let mesh = Mesh1D::new(n, 1.0)?;
        let dense = FemExponential::new(n, 1.0, 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = GridFunction {
            length: 1.0,
            values: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let steps = [0.5, 0.33, 0.25, 0.2];
        let limit = -0.8 * 2.0 * PI * b;
        for alpha in [0.1, 0.5] {
            let reference = dense.apply(alpha, &v.values);
            let mut inv = Vec::new();
            let mut logs = Vec::new();
            for h in steps {
                let rule = ContourRule::with_n(alpha, h, b, 1.0, choose_n(h, alpha, b))?;
                let e = exp_factor(&v, 1.0, &rule, &mesh)?.value;
                let diff = GridFunction {
                    length: 1.0,
                    values: e.values.iter().zip(&reference).map(|(a, b)| a - b).collect(),
                };
                let err = diff.norm();
                c.record(&format!("error_alpha{alpha}_h{h}"), err);
                inv.push(1.0 / h);
                logs.push(err.ln());
            }
            let slope = fit_slope(&inv, &logs);
            c.record(&format!("slope_alpha{alpha}"), slope);
            c.check(slope <= limit, || format!("alpha = {alpha}: slope {slope} > {limit}"));
        }
        Ok(())
    })
}

pub fn criterion_5(seed: u64) -> CriterionOutcome {
    run(5, "truncation lemma", 20.0, |c| {
        let modes = 12;
        let op = laplace(2, modes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for case in 0..200 {
            let decay = rng.random_range(0.0..2.5);
            let tau = RankOneTerm::new(
                (0..2)
                    .map(|_| {
                        SparseVec::dense(
                            (1..=modes)
                                .map(|k| rng.random_range(-1.0..1.0) * (k as f64).powf(-decay))
                                .collect(),
                        )
                    })
                    .collect(),
            );
            let m = rng.random_range(1..modes);
            let t = [-1.0, 0.0, 0.5, 1.0, 2.0][rng.random_range(0..5)];
            let delta = rng.random_range(0.1..2.0);
            let (kept, bound) = truncate_rank_one(&op, &tau, m, t, delta)?;
            let rest = TensorSum::rank_one(tau).minus(&TensorSum::rank_one(kept))?;
            let err = op.ht_norm(&rest, t)?;
            worst = worst.max(err / bound);
            c.check(err <= bound, || {
                format!("case {case}: m = {m}, t = {t}, delta = {delta}: {err} > {bound}")
            });
        }
        c.record("max_error_over_bound", worst);
        Ok(())
    })
}

const SANDWICH_ROUNDOFF: f64 = 1e-14;

pub fn criterion_6(seed: u64) -> CriterionOutcome {
    run(6, "rank-one norm sandwich", 20.0, |c| {
        let modes = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slack_lo = f64::INFINITY;
        let mut slack_hi = f64::INFINITY;
        for d in [2usize, 3, 4] {
            let op = laplace(d, modes)?;
            for case in 0..200 {
                let tau = RankOneTerm::new((0..d).map(|_| random_dense(&mut rng, modes)).collect())
                    .balanced();
                let v = TensorSum::rank_one(tau.clone());
                for s in [0.0, 1.0, 2.0] {
                    let full = op.ht_norm(&v, s)?;
                    let l2: Vec<f64> = tau.factors.iter().map(|f| f.norm()).collect();
                    let hs: Vec<f64> =
                        (0..d).map(|j| op.factor_norm(j, &tau.factors[j], s)).collect();
                    let piece = |j: usize| {
                        hs[j] * (0..d).filter(|&i| i != j).map(|i| l2[i]).product::<f64>()
                    };
                    let lower = (0..d).map(piece).fold(0.0, f64::max);
                    let upper = (d as f64).powf((s - 1.0).max(0.0)).sqrt()
                        * (0..d).map(piece).sum::<f64>();
                    slack_lo = slack_lo.min(full / lower);
                    slack_hi = slack_hi.min(upper / full);
                    // The s = 0 bounds are equalities, so allow summation roundoff.
                    let tol = SANDWICH_ROUNDOFF * full;
                    c.check(lower <= full + tol && full <= upper + tol, || {
                        format!("d = {d}, case {case}, s = {s}: {lower} ≤ {full} ≤ {upper} fails")
                    });
                }
            }
        }
        c.record("min_full_over_lower", slack_lo);
        c.record("min_upper_over_full", slack_hi);
        Ok(())
    })
}

/// Runs Scheme-Exp on the `x(1 - x)` data and fills the oracle errors.
pub fn bubble_run(
    d: usize,
    eps: f64,
    params: &SchemeParameters,
    gamma: &GrowthClass,
) -> Result<(NodalTensor, SolveReport, ExactSolution)> {
    let op = laplace(d, EXACT_MODES)?;
    let (u, mut report) = run_scheme_exp(&op, &bubble_data(d), eps, params, gamma)?;
    let exact = bubble_exact(&op)?;
    report.errors.insert("h1".into(), error_norms(&u, &exact, NormKind::H1)?);
    report.errors.insert("l2".into(), error_norms(&u, &exact, NormKind::L2)?);
    report.errors.insert("data_norm".into(), exact.energy_norm());
    Ok((u, report, exact))
}

pub fn criterion_7() -> CriterionOutcome {
    run(7, "end-to-end Scheme-Exp", 300.0, |c| {
        let params = SchemeParameters::default();
        let gamma = GrowthClass::default();
        for d in [2usize, 4] {
            for eps in [1e-1, 1e-2] {
                let (_, rep, exact) = bubble_run(d, eps, &params, &gamma)?;
                let err = rep.errors["h1"];
                let limit = 10.0 * eps * exact.energy_norm();
                let key = format!("d{d}_eps{eps:e}");
                c.record(
                    &key,
                    json!({
                        "r": rep.r, "R": rep.big_r, "N": rep.n_quad, "rank": rep.rank_out,
                        "h1_error": err, "limit": limit, "mesh_n": rep.meshes[0].n,
                        "alpha_min_unit": rep.bounds["alpha_min_unit"],
                        "alpha_floor": rep.bounds["alpha_floor"],
                    }),
                );
                c.check(err <= limit, || format!("{key}: H1 error {err:e} > {limit:e}"));
                c.check(rep.rank_out <= rep.r * rep.big_r, || {
                    format!("{key}: rank {} > r·R = {}", rep.rank_out, rep.r * rep.big_r)
                });
                c.check(rep.checks["alpha_floor"], || format!("{key}: alpha floor violated"));
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub r: usize,
    #[serde(rename = "R")]
    pub big_r: usize,
    #[serde(rename = "N")]
    pub n_quad: usize,
    pub rank: usize,
    pub params: usize,
    pub work: u64,
    pub h1_error: f64,
}

/// Scheme-Exp on the `x(1 - x)` data for every `d`.
pub fn bench_dims(
    dims: &[usize],
    eps: f64,
    params: &SchemeParameters,
    gamma: &GrowthClass,
) -> Result<Vec<(BenchRow, SolveReport)>> {
    dims.iter()
        .map(|&d| {
            let (_, rep, _) = bubble_run(d, eps, params, gamma)?;
            let row = BenchRow {
                d,
                r: rep.r,
                big_r: rep.big_r,
                n_quad: rep.n_quad.unwrap_or(0),
                rank: rep.rank_out,
                params: rep.parameter_count,
                work: work_estimate(&rep),
                h1_error: rep.errors["h1"],
            };
            Ok((row, rep))
        })
        .collect()
}

pub fn criterion_8() -> CriterionOutcome {
    run(8, "tractability scaling", 600.0, |c| {
        let dims = [2usize, 4, 8];
        let rows = bench_dims(&dims, 1e-2, &SchemeParameters::default(), &GrowthClass::default())?;
        let ld: Vec<f64> = dims.iter().map(|&d| (d as f64).ln()).collect();
        let lw: Vec<f64> = rows.iter().map(|(r, _)| (r.work as f64).ln()).collect();
        let slope = fit_slope(&ld, &lw);
        c.record("rows", rows.iter().map(|(r, _)| r).collect::<Vec<_>>());
        c.record("work_slope", slope);
        c.check(slope <= 2.0, || format!("work slope {slope} > 2"));
        for (row, rep) in &rows {
            let per_factor = rep.rank_out * rep.meshes[0].n;
            c.check(row.params == per_factor * row.d, || {
                format!("d = {}: {} parameters, expected {} · d", row.d, row.params, per_factor)
            });
        }
        let op_counts = dims
            .iter()
            .map(|&d| {
                let op = laplace(d, 8)?;
                let g = EigenTensor::rank_one(RankOneTerm::new(vec![SparseVec::dense(vec![1.0; 8]); d]));
                let u = approx_inverse_apply(&op, &g, 9, true, BuildOptions::default())?;
                Ok(count_parameters(&u) as f64 / d as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        c.record("spectral_params_per_dim", &op_counts);
        c.check(op_counts.windows(2).all(|w| w[0] == w[1]), || {
            format!("spectral parameter count not linear in d: {op_counts:?}")
        });
        Ok(())
    })
}

pub fn criterion_9(seed: u64) -> CriterionOutcome {
    run(9, "oracle self-consistency", 30.0, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op3 = laplace(3, 16)?;
        let terms = (0..3)
            .map(|_| RankOneTerm::new((0..3).map(|_| random_dense(&mut rng, 16)).collect()))
            .collect();
        let f = TensorSum::new(3, terms)?;
        let block = DenseCoefficientBlock::from_tensor(&f, &[16, 16, 16])?;
        let back = dense_inverse_solve(&op3, &dense_forward(&op3, &block)?)?;
        let trip = back.max_abs_diff(&block)?;
        c.record("round_trip", trip);
        c.check(trip <= 1e-14, || format!("round trip {trip:e}"));

        let n = 512;
        let fem = FemExponential::new(n, 1.0, 1.0)?;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = fem.apply(0.5, &v);
        let b = fem.apply_pade(0.5, &v);
        let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
        c.record("expm_relative_diff", diff);
        c.check(diff <= 1e-10, || format!("exponential routes differ by {diff:e}"));

        let op2 = laplace(2, 12)?;
        let terms = (0..2)
            .map(|_| RankOneTerm::new((0..2).map(|_| random_dense(&mut rng, 12)).collect()))
            .collect();
        let f2 = TensorSum::new(2, terms)?;
        let u_block = dense_inverse_solve(&op2, &DenseCoefficientBlock::from_tensor(&f2, &[12, 12])?)?;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let p = eigen_exact_pointwise(&op2, &f2, &x)?;
            let q = u_block.synthesize(&op2, &x)?;
            worst = worst.max((p - q).abs());
        }
        c.record("pointwise_diff", worst);
        c.check(worst <= 1e-12, || format!("eigen-exact vs dense differ by {worst:e}"));
        Ok(())
    })
}

/// Criterion `id` with the given seed.
pub fn criterion(id: u32, seed: u64) -> Result<CriterionOutcome> {
    Ok(match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(seed),
        4 => criterion_4(seed),
        5 => criterion_5(seed),
        6 => criterion_6(seed),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(seed),
        _ => return Err(Error::domain(format!("no criterion {id}"))),
    })
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CriterionOutcome>> {
    suite.criteria().iter().map(|&id| criterion(id, seed)).collect()
}
