//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use tsolve_core::model::dirichlet_laplacian_factor;
use tsolve_core::suites::bubble_data;
use tsolve_core::{GridFunction, NodalTensor, SeparableOperator};

/// Dirichlet Laplacian on the unit cube with `modes` eigenpairs per factor.
pub fn laplace(d: usize, modes: usize) -> SeparableOperator {
    SeparableOperator::uniform(d, dirichlet_laplacian_factor(modes, 1.0).unwrap()).unwrap()
}

/// Smooth nodal load on `n` interior nodes of `(0, 1)`.
pub fn load(n: usize) -> GridFunction {
    GridFunction::sample(n, 1.0, |x| (PI * x).sin() + 0.3 * (5.0 * PI * x).sin())
}

pub fn bubble(d: usize) -> NodalTensor {
    bubble_data(d)
}
