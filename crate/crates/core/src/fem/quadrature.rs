//! Quadrature on triangles and edges.

/// Symmetric rule on the reference triangle, stored in barycentric coordinates.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    /// Weights on the reference triangle; they sum to its area, 1/2.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// 12-point Dunavant rule, exact for polynomials of total degree 6.
    ///
    /// Degree 6 covers the bubble-bubble mass integrand `(27 l1 l2 l3)^2`.
    pub fn degree6() -> Self {
        const A: f64 = 0.063_089_014_491_502_228_340_331_602_870_819;
        const WA: f64 = 0.050_844_906_370_206_816_920_936_809_106_869;
        const B: f64 = 0.249_286_745_170_910_421_291_638_553_107_02;
        const WB: f64 = 0.116_786_275_726_379_366_025_289_611_385_58;
        const C1: f64 = 0.053_145_049_844_816_947_353_249_671_631_398;
        const C2: f64 = 0.310_352_451_033_784_405_416_607_733_956_55;
        const WC: f64 = 0.082_851_075_618_373_575_193_553_456_420_442;

        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        for &(a, w) in &[(A, WA), (B, WB)] {
            let c = 1.0 - 2.0 * a;
            for p in [[c, a, a], [a, c, a], [a, a, c]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        let c3 = 1.0 - C1 - C2;
        for p in [
            [C1, C2, c3],
            [C2, C1, c3],
            [C1, c3, C2],
            [c3, C1, C2],
            [C2, c3, C1],
            [c3, C2, C1],
        ] {
            points.push(p);
            weights.push(0.5 * WC);
        }
        Self {
            points,
            weights,
            degree: 6,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Three-point Gauss-Legendre rule on `[0, 1]` as `(parameter, weight)` pairs.
pub fn edge_gauss3() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn weights_sum_to_reference_area() {
        let q = QuadratureRule::degree6();
        assert_eq!(q.len(), 12);
        assert!((q.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_for_all_monomials_up_to_degree_six() {
        // reference triangle (0,0),(1,0),(0,1): x = l2, y = l3
        // oracle: int x^a y^b = a! b! / (a + b + 2)!
        let q = QuadratureRule::degree6();
        for a in 0..=6u32 {
            for b in 0..=(6 - a) {
                let approx: f64 = q.iter().map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32)).sum();
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                assert!((approx - exact).abs() < 1e-15, "x^{a} y^{b}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn edge_rule_integrates_quintics() {
        let g = edge_gauss3();
        for k in 0..=5 {
            let s: f64 = g.iter().map(|&(t, w)| w * t.powi(k)).sum();
            assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }
}
