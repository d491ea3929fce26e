use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use tsolve_core::contour::ContourRule;
use tsolve_core::expsum::{build_expsum_with, cached, t_r, BuildOptions};
use tsolve_core::fem::{exp_factor, resolvent_residual, solve_resolvent, Mesh1D};
use tsolve_core::model::dirichlet_laplacian_factor;
use tsolve_core::spectral::{approx_inverse_apply, count_parameters};
use tsolve_core::tensor::{sparsity_cost, Factor};
use tsolve_core::{EigenTensor, GridFunction, RankOneTerm, SeparableOperator, SparseVec, TensorSum};

fn laplace(d: usize) -> SeparableOperator {
    SeparableOperator::uniform(d, dirichlet_laplacian_factor(8, 1.0).unwrap()).unwrap()
}

fn factor(max_modes: usize) -> impl Strategy<Value = SparseVec> {
    prop::collection::vec(-1.0f64..1.0, 1..=max_modes).prop_map(SparseVec::dense)
}

fn rank_one(d: usize, max_modes: usize) -> impl Strategy<Value = RankOneTerm<SparseVec>> {
    prop::collection::vec(factor(max_modes), d).prop_map(RankOneTerm::new)
}

fn tensor(d: usize, max_rank: usize, max_modes: usize) -> impl Strategy<Value = EigenTensor> {
    prop::collection::vec(rank_one(d, max_modes), 1..=max_rank)
        .prop_map(move |terms| TensorSum::new(d, terms).unwrap())
}

fn dims_and_tensor() -> impl Strategy<Value = (usize, EigenTensor)> {
    (1usize..=3).prop_flat_map(|d| (Just(d), tensor(d, 2, 4)))
}

fn nonzero(v: &EigenTensor) -> bool {
    v.l2_norm().unwrap() > 1e-6
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn expsum_is_positive(r in 1usize..40, polish: bool, clip: bool, lx in -3.0f64..25.0) {
        let s = cached(r, BuildOptions { polish }).unwrap();
        let s = if clip { s.clip() } else { (*s).clone() };
        prop_assert!(s.eval(lx.exp()).unwrap() >= 0.0);
    }

    #[test]
    fn expsum_tail_is_dominated(r in 1usize..40, polish: bool, clip: bool) {
        let s = cached(r, BuildOptions { polish }).unwrap();
        let s = if clip { s.clip() } else { (*s).clone() };
        prop_assert!(s.tail_dominated());
        let x = 3.7 * t_r(r);
        prop_assert!(x * s.eval(x).unwrap() <= 1.0);
    }

    #[test]
    fn rescale_moves_the_variable(r in 1usize..20, beta in 0.05f64..50.0, lx in -2.0f64..10.0) {
        let s = build_expsum_with(r, BuildOptions::default()).unwrap();
        let t = s.rescale(beta).unwrap();
        let x = lx.exp();
        prop_assert!(rel_close(t.eval(beta * x).unwrap(), s.eval(x).unwrap() / beta, 1e-13));
        prop_assert!(rel_close(t.measured_sup_error, s.measured_sup_error / beta, 1e-12));
    }

    #[test]
    fn clipped_nodes_clear_the_threshold(r in 1usize..40, beta in 0.5f64..50.0) {
        let s = cached(r, BuildOptions { polish: true }).unwrap().rescale(beta).unwrap().clip();
        let floor = 1.0 / (beta * t_r(r));
        for (a, _) in s.active_terms() {
            prop_assert!(a >= floor);
        }
    }

    #[test]
    fn operator_is_an_isometry((d, v) in dims_and_tensor(), t in prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0, 2.0, 3.0])) {
        prop_assume!(nonzero(&v));
        let op = laplace(d);
        let bv = op.apply_forward(&v).unwrap();
        let lhs = op.ht_norm(&bv, t - 2.0).unwrap();
        let rhs = op.ht_norm(&v, t).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn exponential_is_a_semigroup((d, v) in dims_and_tensor(), a in 0.0f64..0.2, b in 0.0f64..0.2) {
        prop_assume!(nonzero(&v));
        let op = laplace(d);
        let two_steps = op.apply_exp(&op.apply_exp(&v, a).unwrap(), b).unwrap();
        let one_step = op.apply_exp(&v, a + b).unwrap();
        prop_assert_eq!(two_steps.rank(), one_step.rank());
        for (x, y) in two_steps.terms.iter().zip(&one_step.terms) {
            for (fx, fy) in x.factors.iter().zip(&y.factors) {
                for (k, value) in fy.iter() {
                    prop_assert!(rel_close(fx.get(k), value, 1e-13) || value == 0.0);
                }
            }
        }
    }

    #[test]
    fn sobolev_norms_increase_with_t((d, v) in dims_and_tensor(), s in -2.0f64..3.0, ds in 0.0f64..1.5) {
        prop_assume!(nonzero(&v));
        let op = laplace(d);
        let lo = op.ht_norm(&v, s).unwrap();
        let hi = op.ht_norm(&v, s + ds).unwrap();
        prop_assert!(lo <= hi * (1.0 + 1e-13));
    }

    #[test]
    fn rank_one_norm_sandwich(d in 1usize..=4, seed in rank_one(4, 5), s in 0.0f64..3.0) {
        let tau = RankOneTerm::new(seed.factors[..d].to_vec()).balanced();
        let v = TensorSum::rank_one(tau.clone());
        prop_assume!(nonzero(&v));
        let op = laplace(d);
        let full = op.ht_norm(&v, s).unwrap();
        let l2: Vec<f64> = tau.factors.iter().map(|f| f.norm()).collect();
        let piece = |j: usize| {
            op.factor_norm(j, &tau.factors[j], s)
                * (0..d).filter(|&i| i != j).map(|i| l2[i]).product::<f64>()
        };
        let lower = (0..d).map(piece).fold(0.0, f64::max);
        let upper = (d as f64).powf((s - 1.0).max(0.0)).sqrt() * (0..d).map(piece).sum::<f64>();
        prop_assert!(lower <= full * (1.0 + 1e-14));
        prop_assert!(full <= upper * (1.0 + 1e-14));
    }

    #[test]
    fn negative_norm_cross_bound(d in 1usize..=4, seed in rank_one(4, 5)) {
        let tau = RankOneTerm::new(seed.factors[..d].to_vec());
        let v = TensorSum::rank_one(tau.clone());
        prop_assume!(nonzero(&v));
        let op = laplace(d);
        let product: f64 = (0..d).map(|j| op.factor_norm(j, &tau.factors[j], -1.0)).product();
        prop_assert!(product <= op.ht_norm(&v, -1.0).unwrap() * (1.0 + 1e-14));
    }

    #[test]
    fn triangle_inequality((d, u) in dims_and_tensor(), w in tensor(3, 2, 4), t in -1.0f64..2.0) {
        let w = TensorSum::new(d, w.terms.into_iter().map(|x| RankOneTerm::new(x.factors[..d].to_vec())).collect()).unwrap();
        let op = laplace(d);
        let sum = op.ht_norm(&u.plus(&w).unwrap(), t).unwrap();
        let parts = op.ht_norm(&u, t).unwrap() + op.ht_norm(&w, t).unwrap();
        prop_assert!(sum <= parts * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn sparsity_cost_is_additive((d, u) in dims_and_tensor(), w in tensor(3, 3, 6)) {
        let w = TensorSum::new(d, w.terms.into_iter().map(|x| RankOneTerm::new(x.factors[..d].to_vec())).collect()).unwrap();
        prop_assert_eq!(sparsity_cost(&u.plus(&w).unwrap()), sparsity_cost(&u) + sparsity_cost(&w));
    }

    #[test]
    fn approximate_inverse_rank((d, g) in dims_and_tensor(), r in 1usize..12, clipped: bool) {
        let op = laplace(d);
        let u = approx_inverse_apply(&op, &g, r, clipped, BuildOptions::default()).unwrap();
        prop_assert!(u.rank() <= r * g.rank());
        if !clipped {
            prop_assert_eq!(u.rank(), r * g.rank());
        }
    }

    #[test]
    fn parameter_count_is_linear_in_d(f in factor(6), r in 1usize..8) {
        let counts: Vec<usize> = (1..=4)
            .map(|d| {
                let g = TensorSum::rank_one(RankOneTerm::new(vec![f.clone(); d]));
                let u = approx_inverse_apply(&laplace(d), &g, r, false, BuildOptions::default()).unwrap();
                count_parameters(&u)
            })
            .collect();
        for (i, c) in counts.iter().enumerate() {
            prop_assert_eq!(*c, (i + 1) * counts[0]);
        }
    }

    #[test]
    fn contour_rule_is_conjugate_symmetric(alpha in 0.01f64..5.0, h in 0.05f64..0.5, frac in 0.0f64..1.0) {
        let rule = ContourRule::new(alpha, h, PI / 12.0, 1.0).unwrap();
        let q = (frac * rule.n as f64).round() as i64;
        prop_assert_eq!(rule.node(-q), rule.node(q).conj());
        prop_assert_eq!(rule.prefactor(-q), rule.prefactor(q).conj());
    }

    #[test]
    fn resolvent_is_backward_stable(
        n in 8usize..300,
        loads in prop::collection::vec(-1.0f64..1.0, 4),
        re in -50.0f64..5.0,
        im in -50.0f64..50.0,
    ) {
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let w = GridFunction::sample(n, 1.0, |x| {
            loads.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x).sin()).sum()
        });
        let z = Complex64::new(re, im);
        if let Ok(sol) = solve_resolvent(z, &w, &mesh, 1.0) {
            prop_assert!(resolvent_residual(z, &w, &sol.u, 1.0) <= 1e-12);
        }
    }

    #[test]
    fn discrete_semigroup_does_not_grow(alpha in 0.05f64..2.0, modes in prop::collection::vec(-1.0f64..1.0, 3)) {
        let n = 127;
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let tau = GridFunction::sample(n, 1.0, |x| {
            modes.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x).sin()).sum()
        });
        prop_assume!(tau.norm() > 1e-3);
        let rule = ContourRule::new(alpha, 0.1, PI / 12.0, 1.0).unwrap();
        let e = exp_factor(&tau, 1.0, &rule, &mesh).unwrap().value;
        prop_assert!(e.norm() <= (1.0 + 1e-3) * tau.norm());
    }
}
