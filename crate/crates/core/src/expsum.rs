//! Exponential sums `S_r(x) = Σ ω_k e^{-α_k x}` approximating `1/x` on `[β, ∞)`.
//!
//! Sums are built on `[1, ∞)` by sinc quadrature of `1/x = ∫ e^{s - x e^s} ds`.
//! Polished sums are the best approximations on `[1, T_r]`, found by Remez
//! exchange with continuation in `r`; Lawson-reweighted least squares is the
//! fallback. Use [`ExpSum::rescale`] to move a sum to `[β, ∞)`.

use std::collections::HashMap;
use std::f64::consts::{E, PI};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points in the dense log-grid scan behind `measured_sup_error`.
pub const SCAN_POINTS: usize = 100_000;
/// The scan always covers at least `[β, β·10⁸]`.
pub const SCAN_MIN_END: f64 = 1e8;

const POLISH_OUTER: usize = 8;
const POLISH_GRID_PER_TERM: usize = 40;
/// Remez outer exchanges.
const REMEZ_OUTER: usize = 60;
const REMEZ_NEWTON: usize = 40;
const REMEZ_GRID_PER_TERM: usize = 400;
/// Relative spread of the alternation levels accepted as converged.
const REMEZ_TOL: f64 = 1e-3;
const REMEZ_ACCEPT: f64 = 2e-2;
/// Exchanges without a better spread before giving up.
const REMEZ_PATIENCE: usize = 3;
/// Newton residual, relative to the level, accepted when the line search stalls
/// on roundoff.
const REMEZ_STALL: f64 = 1e-2;
/// Relative singular-value cutoff in the Newton solve.
const REMEZ_SVD_CUTOFF: f64 = 1e-15;
/// Largest Newton change of any `ln α` or `ln ω`.
const REMEZ_MAX_STEP: f64 = 0.5;
const POLISH_LM_STEPS: usize = 60;

/// `T_r = e^{π√r} / 8`. Beyond `T_r` every admissible sum stays below `1/x`.
pub fn t_r(r: usize) -> f64 {
    (PI * (r as f64).sqrt()).exp() / 8.0
}

/// Best-approximation error bound `(16/β) e^{-π√r}`.
pub fn best_bound(r: usize, beta: f64) -> f64 {
    16.0 / beta * (-PI * (r as f64).sqrt()).exp()
}

/// Additive loss of the clipped sum, `8 r e · e^{-π√r}`.
pub fn clip_degradation(r: usize) -> f64 {
    8.0 * r as f64 * E * (-PI * (r as f64).sqrt()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSum {
    #[serde(rename = "r")]
    pub r_nominal: usize,
    pub beta: f64,
    pub clipped: bool,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub measured_sup_error: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BuildOptions {
    pub polish: bool,
}

/// Plain sinc construction on `[1, ∞)`.
pub fn build_expsum(r: usize) -> Result<ExpSum> {
    build_expsum_with(r, BuildOptions::default())
}

pub fn build_expsum_with(r: usize, opts: BuildOptions) -> Result<ExpSum> {
    if r == 0 {
        return Err(Error::Construction("r must be at least 1".into()));
    }
    let (nodes, weights) = sinc_terms(r);
    let mut sum = ExpSum {
        r_nominal: r,
        beta: 1.0,
        clipped: false,
        nodes,
        weights,
        measured_sup_error: f64::NAN,
    };
    sum.measured_sup_error = sum.scan_sup_error();
    if opts.polish {
        let (nodes, weights) = match best_sum(r) {
            Some(best) => best,
            None => {
                log::warn!("Remez chain stops below r = {r}, falling back to Lawson");
                lawson_polish(&sum.nodes, &sum.weights, t_r(r))?
            }
        };
        let candidate = ExpSum {
            nodes,
            weights,
            measured_sup_error: f64::NAN,
            ..sum.clone()
        };
        let err = candidate.scan_sup_error();
        if err < sum.measured_sup_error && candidate.tail_dominated() {
            sum = ExpSum {
                measured_sup_error: err,
                ..candidate
            };
        } else {
            log::warn!("polish rejected for r = {r}: sup error {err:.3e}, keeping sinc sum");
        }
    }
    Ok(sum)
}

/// Process-wide memo of `build_expsum_with` results.
pub fn cached(r: usize, opts: BuildOptions) -> Result<Arc<ExpSum>> {
    type Slot = Arc<OnceLock<Result<Arc<ExpSum>>>>;
    static CACHE: OnceLock<Mutex<HashMap<(usize, BuildOptions), Slot>>> = OnceLock::new();
    let slot = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry((r, opts)).or_default().clone()
    };
    slot.get_or_init(|| build_expsum_with(r, opts).map(Arc::new))
        .clone()
}

impl ExpSum {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(α_k, ω_k)` pairs with nonzero weight.
    pub fn active_terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&a, &w)| (a, w))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("eval needs x > 0, got {x}")));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (-a * x).exp())
            .sum()
    }

    /// Moves the validity interval from `[β₀, ∞)` to `[β₀·beta, ∞)`.
    pub fn rescale(&self, beta: f64) -> Result<ExpSum> {
        if !(beta > 0.0) {
            return Err(Error::domain(format!("rescale needs beta > 0, got {beta}")));
        }
        Ok(ExpSum {
            r_nominal: self.r_nominal,
            beta: self.beta * beta,
            clipped: self.clipped,
            nodes: self.nodes.iter().map(|a| a / beta).collect(),
            weights: self.weights.iter().map(|w| w / beta).collect(),
            measured_sup_error: self.measured_sup_error / beta,
        })
    }

    /// Clipping threshold in the units of this sum, `1/(β T_r)`.
    pub fn clip_threshold(&self) -> f64 {
        1.0 / (self.beta * t_r(self.r_nominal))
    }

    /// Zeroes every weight whose node lies below the clipping threshold.
    pub fn clip(&self) -> ExpSum {
        let floor = self.clip_threshold();
        let weights: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| if a < floor { 0.0 } else { w })
            .collect();
        let changed = weights != self.weights;
        let mut out = ExpSum {
            weights,
            clipped: true,
            ..self.clone()
        };
        if changed {
            out.measured_sup_error = out.scan_sup_error();
        }
        out
    }

    /// Largest `|S(x) - 1/x|` over `n` log-spaced points of `[lo, hi]`.
    pub fn sup_error_on(&self, lo: f64, hi: f64, n: usize) -> f64 {
        log_grid(lo, hi, n)
            .map(|x| (self.eval_unchecked(x) - 1.0 / x).abs())
            .fold(0.0, f64::max)
    }

    /// Right end of the dense scan, `β · max(10⁸, 10³ T_r)`.
    pub fn scan_end(&self) -> f64 {
        self.beta * SCAN_MIN_END.max(1e3 * t_r(self.r_nominal))
    }

    /// Dense scan on `[β, scan_end]` plus the monotone tail bound beyond it.
    pub fn scan_sup_error(&self) -> f64 {
        let end = self.scan_end();
        let grid = self.sup_error_on(self.beta, end, SCAN_POINTS);
        let tail = self.eval_unchecked(end).max(1.0 / end);
        grid.max(tail)
    }

    /// `S(x) ≤ 1/x` on 10⁴ log-spaced points of `[β T_r, 10⁴ β T_r]`.
    pub fn tail_dominated(&self) -> bool {
        let t = self.beta * t_r(self.r_nominal);
        log_grid(t, 1e4 * t, 10_000).all(|x| x * self.eval_unchecked(x) <= 1.0)
    }
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = if n > 1 { (b - a) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n { hi } else { (a + step * i as f64).exp() })
}

/// Discretization error estimate of the sinc rule with step `h`.
fn sinc_disc(h: f64) -> f64 {
    let d = 2.0 * (2.0 * PI).sqrt() * (2.0 * PI / h).sqrt() * (-PI * PI / h).exp();
    d.min(0.3)
}

/// Nodes `e^{a + kh}` and weights `h e^{a + kh}` with `a = ln D(h)` balancing
/// the left truncation against the discretization error.
fn sinc_terms(r: usize) -> (Vec<f64>, Vec<f64>) {
    let ends = |h: f64| {
        let d = sinc_disc(h);
        (d.ln(), (1.0 / d).ln().ln())
    };
    let h = if r == 1 {
        1.0
    } else {
        let count = |h: f64| {
            let (a, b) = ends(h);
            (b - a) / h + 1.0 - r as f64
        };
        bisect(count, 0.05, 8.0)
    };
    let (a, _) = ends(h);
    let s: Vec<f64> = (0..r).map(|k| a + k as f64 * h).collect();
    (
        s.iter().map(|s| s.exp()).collect(),
        s.iter().map(|s| h * s.exp()).collect(),
    )
}

/// Root of a decreasing function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Lawson iteration: weighted least squares in `(ln α, ln ω)` on a log grid of
/// `[1, end]`, reweighting by the pointwise error after each pass.
fn lawson_polish(nodes: &[f64], weights: &[f64], end: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = nodes.len();
    let m = POLISH_GRID_PER_TERM * r;
    let xs: Vec<f64> = log_grid(1.0, end, m).collect();
    let mut p: Vec<f64> = nodes.iter().chain(weights).map(|v| v.ln()).collect();
    let mut wt = vec![1.0 / m as f64; m];
    for _ in 0..POLISH_OUTER {
        p = levenberg_marquardt(&xs, &wt, p)?;
        let (al, om) = p.split_at(r);
        let mut total = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            wt[i] *= residual(al, om, x).abs();
            total += wt[i];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Construction("polish weights degenerated".into()));
        }
        wt.iter_mut().for_each(|w| *w /= total);
    }
    let (al, om) = p.split_at(r);
    let mut terms: Vec<(f64, f64)> = al.iter().zip(om).map(|(a, w)| (a.exp(), w.exp())).collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(terms.into_iter().unzip())
}

/// Local extrema of `e` on the grid, merged into an alternating sequence and
/// trimmed from the ends to `m` points.
fn alternation_points(
    xs: &[f64],
    es: &[f64],
    m: usize,
    e: &impl Fn(f64) -> f64,
    de: &impl Fn(f64) -> f64,
) -> Option<Vec<(f64, f64)>> {
    let n = xs.len();
    let mut ext: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let left = if i > 0 { es[i - 1].abs() } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { es[i + 1].abs() } else { f64::NEG_INFINITY };
        let here = es[i].abs();
        if here >= left && here >= right && here > 0.0 {
            if i > 0 && i + 1 < n {
                let x = refine_extremum(xs[i - 1], xs[i], xs[i + 1], de);
                ext.push((x, e(x)));
            } else {
                ext.push((xs[i], es[i]));
            }
        }
    }
    let mut alt: Vec<(f64, f64)> = Vec::new();
    for (x, e) in ext {
        match alt.last_mut() {
            Some(last) if last.1.signum() == e.signum() => {
                if e.abs() > last.1.abs() {
                    *last = (x, e);
                }
            }
            _ => alt.push((x, e)),
        }
    }
    while alt.first().is_some_and(|p| p.1 > 0.0) {
        alt.remove(0);
    }
    while alt.last().is_some_and(|p| p.1 > 0.0) {
        alt.pop();
    }
    if alt.len() < m {
        return None;
    }
    while alt.len() > m {
        if alt[0].1.abs() < alt[alt.len() - 1].1.abs() {
            alt.remove(0);
        } else {
            alt.pop();
        }
    }
    Some(alt)
}

/// Root of `de` in `[lo, hi]` by bisection, or `mid` without a sign change.
fn refine_extremum(lo: f64, mid: f64, hi: f64, de: &impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (de(a), de(b));
    if fa.signum() == fb.signum() {
        return mid;
    }
    for _ in 0..60 {
        let c = (a * b).sqrt();
        if de(c).signum() == fa.signum() {
            a = c;
        } else {
            b = c;
        }
    }
    (a * b).sqrt()
}

/// Solves `e(x_j) = s_j E` for `(ln α, ln ω, E)` by damped Newton.
fn levelled_newton(pts: &[(f64, f64)], p: &[f64]) -> Option<(Vec<f64>, f64)> {
    let r = p.len() / 2;
    let m = pts.len();
    // The error is negative at both ends of the interval.
    let signs: Vec<f64> = (0..m).map(|j| if j % 2 == 0 { -1.0 } else { 1.0 }).collect();
    let mut q: Vec<f64> = p.to_vec();
    q.push(pts.iter().map(|(_, e)| e.abs()).sum::<f64>() / m as f64);
    let eval = |q: &[f64]| -> Vec<f64> {
        let (al, om) = q[..2 * r].split_at(r);
        pts.iter()
            .zip(&signs)
            .map(|(&(x, _), s)| residual(al, om, x) - s * q[2 * r])
            .collect()
    };
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let sq = |v: &[f64]| v.iter().map(|b| b * b).sum::<f64>();
    let mut f = eval(&q);
    for _ in 0..REMEZ_NEWTON {
        let level = q[2 * r].abs();
        if norm(&f) <= 1e-12 * level + 1e-15 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(m, 2 * r + 1);
        for (j, &(x, _)) in pts.iter().enumerate() {
            for k in 0..r {
                let alpha = q[k].exp();
                let term = (q[r + k] - alpha * x).exp();
                jac[(j, k)] = -term * alpha * x;
                jac[(j, r + k)] = term;
            }
            jac[(j, 2 * r)] = -signs[j];
        }
        let scale: Vec<f64> = (0..2 * r + 1)
            .map(|c| jac.column(c).amax().max(1e-300))
            .collect();
        for (c, s) in scale.iter().enumerate() {
            jac.column_mut(c).scale_mut(1.0 / s);
        }
        let rhs = DVector::from_iterator(m, f.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let cutoff = REMEZ_SVD_CUTOFF * svd.singular_values.max();
        let step = svd.solve(&rhs, cutoff).ok()?;
        let biggest = (0..2 * r)
            .map(|c| (step[c] / scale[c]).abs())
            .fold(0.0f64, f64::max);
        let mut t = (REMEZ_MAX_STEP / biggest).min(1.0);
        let current = sq(&f);
        loop {
            let trial: Vec<f64> = q
                .iter()
                .zip(step.iter().zip(&scale))
                .map(|(a, (b, s))| a + t * b / s)
                .collect();
            let ft = eval(&trial);
            if sq(&ft) < current && trial.iter().all(|v| v.is_finite()) {
                q = trial;
                f = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                let noise = roundoff(&q[..r], &q[r..2 * r]);
                if norm(&f) <= REMEZ_STALL * level + noise {
                    break;
                }
                return None;
            }
        }
    }
    let level = q.pop()?;
    (level > 0.0).then_some((q, level))
}

/// Remez exchange for the best approximation on `[1, end]`. The first
/// reference is `start` if given, otherwise the extrema of the seed error.
/// Returns the sum and its final reference. A stalled exchange still returns
/// its most level iterate if the spread, net of evaluation roundoff, is within
/// `REMEZ_ACCEPT`. By de la Vallée Poussin that bounds the excess over the best
/// error.
fn remez(
    nodes: &[f64],
    weights: &[f64],
    end: f64,
    start: Option<Vec<f64>>,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let r = nodes.len();
    let m = 2 * r + 1;
    let xs: Vec<f64> = log_grid(1.0, end, (REMEZ_GRID_PER_TERM * r).max(4000)).collect();
    let mut p: Vec<f64> = nodes.iter().chain(weights).map(|v| v.ln()).collect();
    let mut reference = start;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut stale = 0;
    let finish = |p: &[f64], pts: Vec<f64>| {
        let (al, om) = p.split_at(r);
        let mut terms: Vec<(f64, f64)> = al.iter().zip(om).map(|(a, w)| (a.exp(), w.exp())).collect();
        terms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (a, w) = terms.into_iter().unzip();
        (a, w, pts)
    };
    for _ in 0..REMEZ_OUTER {
        let (al, om) = p.split_at(r);
        let pts: Vec<(f64, f64)> = match reference.take() {
            Some(xr) => xr.iter().map(|&x| (x, residual(al, om, x))).collect(),
            None => {
                let es: Vec<f64> = xs.iter().map(|&x| residual(al, om, x)).collect();
                let e = |x: f64| residual(al, om, x);
                let de = |x: f64| residual_slope(al, om, x);
                let Some(pts) = alternation_points(&xs, &es, m, &e, &de) else {
                    break;
                };
                let peak = pts.iter().fold(0.0f64, |a, (_, e)| a.max(e.abs()));
                let low = pts.iter().fold(f64::INFINITY, |a, (_, e)| a.min(e.abs()));
                let sup = es.iter().fold(0.0f64, |a, e| a.max(e.abs())).max(peak);
                let noise = roundoff(al, om);
                let spread = (sup - low - noise).max(0.0) / sup;
                let xr: Vec<f64> = pts.iter().map(|(x, _)| *x).collect();
                if spread <= REMEZ_TOL {
                    return Some(finish(&p, xr));
                }
                if best.as_ref().is_none_or(|b| spread < b.0) {
                    best = Some((spread, p.clone(), xr));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= REMEZ_PATIENCE {
                        break;
                    }
                }
                pts
            }
        };
        match levelled_newton(&pts, &p) {
            Some((next, _)) => p = next,
            None => {
                break;
            }
        }
    }
    let (spread, p, xr) = best?;
    (spread <= REMEZ_ACCEPT).then(|| finish(&p, xr))
}

/// Resamples a reference of `[1, from]` to `m` points of `[1, to]`, keeping
/// its shape in `ln x`.
fn stretch_reference(xr: &[f64], from: f64, to: f64, m: usize) -> Vec<f64> {
    let scale = to.ln() / from.ln();
    let u: Vec<f64> = xr.iter().map(|x| x.ln() * scale).collect();
    let last = (u.len() - 1) as f64;
    (0..m)
        .map(|j| {
            let s = j as f64 / (m - 1) as f64 * last;
            let i = (s.floor() as usize).min(u.len() - 2);
            let f = s - i as f64;
            ((1.0 - f) * u[i] + f * u[i + 1]).exp()
        })
        .collect()
}

/// Best sum on `[1, T_r]`, or `None` past the first rank where the exchange
/// fails. Sums are built for `1, 2, …, r` in turn, each seeded from its
/// predecessors, and memoised for the process.
fn best_sum(r: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    struct Chain {
        sums: Vec<(Vec<f64>, Vec<f64>)>,
        reference: Option<Vec<f64>>,
        broken: bool,
    }
    static CHAIN: Mutex<Chain> = Mutex::new(Chain {
        sums: Vec::new(),
        reference: None,
        broken: false,
    });
    let mut chain = CHAIN.lock().unwrap();
    while chain.sums.len() < r && !chain.broken {
        let k = chain.sums.len() + 1;
        let out = &chain.sums;
        let (a, w) = match out.len() {
            0 => one_term_seed(t_r(1)),
            1 | 2 => {
                let (a, w) = out.last().unwrap();
                extend_seed(a, w)
            }
            n => (
                extrapolate(&out[n - 2].0, &out[n - 1].0),
                extrapolate(&out[n - 2].1, &out[n - 1].1),
            ),
        };
        let start = chain
            .reference
            .as_ref()
            .map(|xr| stretch_reference(xr, t_r(k - 1), t_r(k), 2 * k + 1));
        match remez(&a, &w, t_r(k), start) {
            Some((a, w, xr)) => {
                chain.sums.push((a, w));
                chain.reference = Some(xr);
            }
            None => chain.broken = true,
        }
    }
    chain.sums.get(r - 1).cloned()
}

/// Linear extrapolation in `r` of the `ln` profiles of two consecutive sums,
/// each resampled to one more point.
fn extrapolate(older: &[f64], newer: &[f64]) -> Vec<f64> {
    let n = newer.len() + 1;
    let resample = |v: &[f64]| -> Vec<f64> {
        let u: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let last = (u.len() - 1) as f64;
        (0..n)
            .map(|j| {
                let s = j as f64 / (n - 1) as f64 * last;
                let i = (s.floor() as usize).min(u.len() - 2);
                let f = s - i as f64;
                (1.0 - f) * u[i] + f * u[i + 1]
            })
            .collect()
    };
    let (a, b) = (resample(older), resample(newer));
    a.iter().zip(&b).map(|(a, b)| (2.0 * b - a).exp()).collect()
}

/// Interpolates `1/x` at two interior points of `[1, end]`, which leaves three
/// alternating extrema.
fn one_term_seed(end: f64) -> (Vec<f64>, Vec<f64>) {
    let (x1, x2) = (end.powf(0.15), end.powf(0.85));
    let alpha = (x2 / x1).ln() / (x2 - x1);
    let omega = (alpha * x1).exp() / x1;
    (vec![alpha], vec![omega])
}

fn extend_seed(a: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut w = w.to_vec();
    if a.len() == 1 {
        a.insert(0, a[0] / 10.0);
        w.insert(0, w[0] / 10.0);
    } else {
        a.insert(0, a[0] * a[0] / a[1]);
        w.insert(0, w[0] * w[0] / w[1]);
    }
    (a, w)
}

/// Worst-case rounding of [`residual`] on `[1, ∞)`, `2 r ε (S(1) + 1)`.
fn roundoff(log_a: &[f64], log_w: &[f64]) -> f64 {
    2.0 * log_a.len() as f64 * f64::EPSILON * (residual(log_a, log_w, 1.0) + 2.0)
}

/// `d/dx` of [`residual`].
fn residual_slope(log_a: &[f64], log_w: &[f64], x: f64) -> f64 {
    log_a
        .iter()
        .zip(log_w)
        .map(|(la, lw)| {
            let alpha = la.exp();
            -alpha * (lw - alpha * x).exp()
        })
        .sum::<f64>()
        + 1.0 / (x * x)
}

fn residual(log_a: &[f64], log_w: &[f64], x: f64) -> f64 {
    let s: f64 = log_a
        .iter()
        .zip(log_w)
        .map(|(a, w)| (w - a.exp() * x).exp())
        .sum();
    s - 1.0 / x
}

fn weighted_residuals(xs: &[f64], wt: &[f64], p: &[f64]) -> DVector<f64> {
    let (al, om) = p.split_at(p.len() / 2);
    DVector::from_iterator(
        xs.len(),
        xs.iter().zip(wt).map(|(&x, w)| w.sqrt() * residual(al, om, x)),
    )
}

/// Levenberg damping over the SVD of the Jacobian, so each trial step is cheap.
fn levenberg_marquardt(xs: &[f64], wt: &[f64], mut p: Vec<f64>) -> Result<Vec<f64>> {
    let n = p.len();
    let r = n / 2;
    let mut res = weighted_residuals(xs, wt, &p);
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..POLISH_LM_STEPS {
        let mut jac = DMatrix::<f64>::zeros(xs.len(), n);
        for (i, &x) in xs.iter().enumerate() {
            let sw = wt[i].sqrt();
            for k in 0..r {
                let alpha = p[k].exp();
                let term = (p[r + k] - alpha * x).exp();
                jac[(i, k)] = -sw * term * alpha * x;
                jac[(i, r + k)] = sw * term;
            }
        }
        let svd = jac.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let utr = u.transpose() * &res;
        let smax = svd.singular_values.max();
        let mut improved = false;
        for _ in 0..30 {
            let lam = mu * smax * smax;
            let scaled = DVector::from_iterator(
                utr.len(),
                svd.singular_values
                    .iter()
                    .zip(utr.iter())
                    .map(|(s, c)| -s * c / (s * s + lam)),
            );
            let step = vt.transpose() * scaled;
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_res = weighted_residuals(xs, wt, &trial);
            let trial_cost = trial_res.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let gain = (cost - trial_cost) / cost;
                p = trial;
                res = trial_res;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Construction("polish diverged".into()));
    }
    Ok(p)
}
