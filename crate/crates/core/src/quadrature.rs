//! Triangle quadrature rules in barycentric coordinates.
//!
//! Weights are normalized to sum to one; multiply by the triangle area.

use crate::Vec3;

#[derive(Debug, Clone)]
pub struct TriRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn map(&self, corners: &[Vec3; 3]) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        let c = *corners;
        self.points.iter().zip(&self.weights).map(move |(l, &w)| (c[0] * l[0] + c[1] * l[1] + c[2] * l[2], w))
    }

    fn symmetric(groups: &[(f64, f64)], centroid: Option<f64>) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if let Some(w) = centroid {
            points.push([1.0 / 3.0; 3]);
            weights.push(w);
        }
        for &(a, w) in groups {
            let b = 1.0 - 2.0 * a;
            for p in [[b, a, a], [a, b, a], [a, a, b]] {
                points.push(p);
                weights.push(w);
            }
        }
        TriRule { points, weights }
    }

    /// Symmetric rule exact for polynomials of the given degree (1, 2, 4 or 5;
    /// other degrees round up, capped at 5).
    pub fn symmetric_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => TriRule { points: vec![[1.0 / 3.0; 3]], weights: vec![1.0] },
            2 => Self::symmetric(&[(1.0 / 6.0, 1.0 / 3.0)], None),
            3 | 4 => Self::symmetric(
                &[(0.445_948_490_915_965, 0.223_381_589_678_011), (0.091_576_213_509_771, 0.109_951_743_655_322)],
                None,
            ),
            _ => Self::symmetric(
                &[(0.470_142_064_105_115, 0.132_394_152_788_506), (0.101_286_507_323_456, 0.125_939_180_544_827)],
                Some(0.225),
            ),
        }
    }

    /// Tensor Gauss rule on the collapsed square. With `grade = Some((k,
    /// Grading::Edge))` points cluster polynomially towards the edge
    /// opposite vertex 0; with `Grading::Vertex` towards vertex 0.
    pub fn collapsed(n: usize, grade: Option<(u32, Grading)>) -> Self {
        let (x, w) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&xi, &wi) in x.iter().zip(&w) {
            let (u, du) = match grade {
                None => (xi, 1.0),
                Some((k, Grading::Edge)) => {
                    let k = k as i32;
                    (1.0 - (1.0 - xi).powi(k), k as f64 * (1.0 - xi).powi(k - 1))
                }
                Some((k, Grading::Vertex)) => {
                    let k = k as i32;
                    (xi.powi(k), k as f64 * xi.powi(k - 1))
                }
            };
            for (&v, &wv) in x.iter().zip(&w) {
                points.push([1.0 - u, u * (1.0 - v), u * v]);
                weights.push(2.0 * u * du * wi * wv);
            }
        }
        TriRule { points, weights }
    }

    /// Reorders barycentric coordinates so that local vertex 0 of the rule
    /// sits at vertex `apex` of the target triangle.
    pub fn rotated(&self, apex: usize) -> Self {
        let points = self
            .points
            .iter()
            .map(|l| {
                let mut p = [0.0; 3];
                p[apex] = l[0];
                p[(apex + 1) % 3] = l[1];
                p[(apex + 2) % 3] = l[2];
                p
            })
            .collect();
        TriRule { points, weights: self.weights.clone() }
    }

    /// Rule for a triangle with edge-type singularities on all three sides:
    /// three sub-triangles fanned from the centroid, each graded towards its
    /// outer edge.
    pub fn all_edges_graded(n: usize, k: u32) -> Self {
        let base = Self::collapsed(n, Some((k, Grading::Edge)));
        let g = [1.0 / 3.0; 3];
        let mut points = Vec::with_capacity(3 * base.len());
        let mut weights = Vec::with_capacity(3 * base.len());
        for i in 0..3 {
            let (a, b) = (i, (i + 1) % 3);
            for (l, &w) in base.points.iter().zip(&base.weights) {
                let mut p = [l[0] * g[0], l[0] * g[1], l[0] * g[2]];
                p[a] += l[1];
                p[b] += l[2];
                points.push(p);
                weights.push(w / 3.0);
            }
        }
        TriRule { points, weights }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grading {
    Edge,
    Vertex,
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect())
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact(a: u32, b: u32) -> f64 {
        // Integral of l1^a l2^b over the reference triangle, normalized by its area.
        let f = |k: u32| (1..=k).map(|i| i as f64).product::<f64>();
        2.0 * f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for d in 0..(2 * n) as i32 {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d)).sum();
                let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn symmetric_rules_reach_their_degree() {
        for (deg, rule) in [1usize, 2, 4, 5].map(|d| (d as u32, TriRule::symmetric_degree(d))) {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    assert!((q - monomial_exact(a, b)).abs() < 1e-12, "deg {deg} ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn graded_rules_integrate_smooth_functions() {
        let rules = [
            TriRule::collapsed(8, None),
            TriRule::collapsed(8, Some((3, Grading::Edge))).rotated(1),
            TriRule::collapsed(8, Some((2, Grading::Vertex))).rotated(2),
            TriRule::all_edges_graded(8, 3),
        ];
        for rule in &rules {
            let q: f64 = rule.points.iter().zip(&rule.weights).map(|(l, w)| w * l[1] * l[1] * l[2]).sum();
            assert!((q - monomial_exact(2, 1)).abs() < 1e-6);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
