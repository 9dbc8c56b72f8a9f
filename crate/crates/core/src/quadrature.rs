//! Gauss-Legendre rules on the reference interval `[0, 1]` and their tensor
//! products on the unit square.

/// A one-dimensional rule on `[0, 1]`: `(points, weights)`, weights sum to 1.
#[derive(Debug, Clone, Copy)]
pub struct GaussRule {
    pub points: &'static [f64],
    pub weights: &'static [f64],
}

const G2_P: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
const G2_W: [f64; 2] = [0.5, 0.5];

const G3_P: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const G3_W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

const G5_P: [f64; 5] = [
    0.046_910_077_030_668_0,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
const G5_W: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_44,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

/// Two points, exact for cubics.
pub const GAUSS2: GaussRule = GaussRule {
    points: &G2_P,
    weights: &G2_W,
};
/// Three points, exact for quintics.
pub const GAUSS3: GaussRule = GaussRule {
    points: &G3_P,
    weights: &G3_W,
};
/// Five points, exact for degree 9.
pub const GAUSS5: GaussRule = GaussRule {
    points: &G5_P,
    weights: &G5_W,
};

impl GaussRule {
    /// Tensor-product points `(xi, eta, weight)` on the unit square.
    pub fn tensor(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.points
            .iter()
            .zip(self.weights)
            .flat_map(move |(&py, &wy)| {
                self.points
                    .iter()
                    .zip(self.weights)
                    .map(move |(&px, &wx)| (px, py, wx * wy))
            })
    }

    /// Integral of `f` over `[0, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact(d: i32) -> f64 {
        1.0 / (d as f64 + 1.0)
    }

    #[test]
    fn rules_integrate_their_design_degree() {
        for (rule, deg) in [(GAUSS2, 3), (GAUSS3, 5), (GAUSS5, 9)] {
            for d in 0..=deg {
                let q = rule.integrate(|x| x.powi(d));
                assert!((q - monomial_exact(d)).abs() < 1e-14, "deg {d}: {q}");
            }
        }
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        let s: f64 = GAUSS5.tensor().map(|(_, _, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert_eq!(GAUSS3.tensor().count(), 9);
    }
}
