//! Composite Gauss-Legendre rules on uniform cells of `[0, L]`.

const NODES_4: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const WEIGHTS_4: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Four points per cell; exact for piecewise polynomials of degree ≤ 7
    /// whose breakpoints are cell boundaries.
    pub fn new(cells: usize, length: f64, points_per_cell: usize) -> Self {
        assert_eq!(points_per_cell, 4, "only the 4-point rule is tabulated");
        let h = length / cells as f64;
        let mut points = Vec::with_capacity(4 * cells);
        let mut weights = Vec::with_capacity(4 * cells);
        for c in 0..cells {
            let mid = (c as f64 + 0.5) * h;
            for (x, w) in NODES_4.iter().zip(WEIGHTS_4) {
                points.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
        GaussLegendre { points, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_seven() {
        let rule = GaussLegendre::new(3, 2.0, 4);
        let v = rule.integrate(|x| x.powi(7));
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn sine_integral() {
        let rule = GaussLegendre::new(16, std::f64::consts::PI, 4);
        assert!((rule.integrate(f64::sin) - 2.0).abs() < 1e-12);
    }
}
