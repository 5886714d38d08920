//! Composite Gauss–Legendre rules on the unit interval.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial of degree `q`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "need at least one Gauss point");
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let qf = q as f64;
    for i in 0..q.div_ceil(2) {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(q, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A composite Gauss–Legendre rule over equal panels of [0, 1].
///
/// Nodes are stored panel by panel, so node `k * points + j` lies in panel `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: usize,
    points: usize,
}

impl QuadratureRule {
    /// Default resolution used when no grid alignment is requested.
    pub const DEFAULT_PANELS: usize = 64;
    pub const DEFAULT_POINTS: usize = 4;

    pub fn gauss(panels: usize, points: usize) -> Result<Self> {
        if panels == 0 || points == 0 {
            return Err(Error::Argument(format!(
                "quadrature needs panels >= 1 and points >= 1 (got {panels} x {points})"
            )));
        }
        let (ref_nodes, ref_weights) = gauss_legendre(points);
        let width = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels * points);
        let mut weights = Vec::with_capacity(panels * points);
        for k in 0..panels {
            let left = k as f64 * width;
            for (x, w) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push((left + 0.5 * width * (x + 1.0)).clamp(0.0, 1.0));
                weights.push(0.5 * width * w);
            }
        }
        Ok(Self { nodes, weights, panels, points })
    }

    /// Panels coincide with the intervals of an equispaced grid of `grid_count` nodes.
    pub fn aligned_to_grid(grid_count: usize, points: usize) -> Result<Self> {
        if grid_count < 2 {
            return Err(Error::Argument(format!("grid needs at least 2 nodes, got {grid_count}")));
        }
        Self::gauss(grid_count - 1, points)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn points_per_panel(&self) -> usize {
        self.points
    }

    /// Highest polynomial degree integrated exactly.
    pub fn order(&self) -> usize {
        2 * self.points - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_k f(t_k) g(t_k)`; fails on the first non-finite product.
    pub fn integrate<F, G>(&self, mut f: F, mut weight_density: G) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
        G: FnMut(f64) -> f64,
    {
        let mut acc = 0.0;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(t) * weight_density(t);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { node: t });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Integral against the uniform density on [0, 1].
    pub fn integrate_uniform<F: FnMut(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.integrate(f, |_| 1.0)
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss(Self::DEFAULT_PANELS, Self::DEFAULT_POINTS).expect("valid default rule")
    }
}

/// Free-function form of [`QuadratureRule::integrate`].
pub fn integrate<F, G>(f: F, weight_density: G, rule: &QuadratureRule) -> Result<f64>
where
    F: FnMut(f64) -> f64,
    G: FnMut(f64) -> f64,
{
    rule.integrate(f, weight_density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_integrates_to_one() {
        let rule = QuadratureRule::default();
        assert_abs_diff_eq!(rule.integrate_uniform(|_| 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rule.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(rule.len(), 64 * 4);
        assert!(rule.nodes().iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn cubic_is_exact_with_two_points() {
        for panels in [1, 3, 16] {
            let rule = QuadratureRule::gauss(panels, 2).unwrap();
            assert_abs_diff_eq!(rule.integrate_uniform(|t| t.powi(3)).unwrap(), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_on_sixteen_panels() {
        let rule = QuadratureRule::gauss(16, 4).unwrap();
        let v = rule.integrate_uniform(f64::exp).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-10);
    }

    #[test]
    fn exactness_degree_matches_points() {
        for q in 1..=8 {
            let rule = QuadratureRule::gauss(3, q).unwrap();
            for deg in 0..=(2 * q - 1) {
                let exact = 1.0 / (deg as f64 + 1.0);
                let got = rule.integrate_uniform(|t| t.powi(deg as i32)).unwrap();
                assert!((got - exact).abs() <= 1e-12 * exact.max(1.0), "q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn non_finite_integrand_reports_node() {
        let rule = QuadratureRule::gauss(2, 2).unwrap();
        let err = rule.integrate_uniform(|t| if t > 0.5 { f64::NAN } else { t }).unwrap_err();
        match err {
            Error::NonFiniteIntegrand { node } => assert!(node > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weighted_integral() {
        let rule = QuadratureRule::gauss(8, 3).unwrap();
        // ∫ t * 2t dt = 2/3
        let v = integrate(|t| t, |t| 2.0 * t, &rule).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-13);
    }
}
