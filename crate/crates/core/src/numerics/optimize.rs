//! Box-constrained local minimization: Nelder–Mead without gradients,
//! projected BFGS with backtracking when a gradient is available.
//!
//! Non-finite objective values are treated as `+inf`, so regions where the
//! objective cannot be evaluated act as a barrier rather than an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Argument("box bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Argument(format!("box requires finite lower < upper: {lower:?} vs {upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Norm of `x - P(x - g)`, zero exactly at box-constrained stationary points.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((xi, gi), (l, u))| {
                let d = xi - (xi - gi).clamp(*l, *u);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Projected-gradient norm (BFGS) or simplex diameter (Nelder–Mead) at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Scale `tol` by `1 + |f|` for the gradient test.
    pub relative: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, relative: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Projected-gradient norm at `argmin`; `NaN` for derivative-free runs.
    pub grad_norm: f64,
}

/// The objective passed to [`minimize_box`].
pub enum Objective<'a> {
    /// Value only: Nelder–Mead.
    Value(&'a mut dyn FnMut(&[f64]) -> f64),
    /// Value with gradient written into the second argument: projected BFGS.
    ValueGrad(&'a mut dyn FnMut(&[f64], &mut [f64]) -> f64),
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimize over `domain` starting from `start` (which must lie in the box).
pub fn minimize_box(
    objective: Objective<'_>,
    start: &[f64],
    domain: &BoxDomain,
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    if !domain.contains(start) {
        return Err(Error::Argument(format!("start {start:?} lies outside the box")));
    }
    match objective {
        Objective::Value(f) => Ok(nelder_mead(f, start, domain, opts)),
        Objective::ValueGrad(fg) => projected_bfgs(fg, start, domain, opts),
    }
}

fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, start: &[f64], domain: &BoxDomain, opts: &MinimizeOptions) -> Minimum {
    let n = start.len();
    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut eval = |x: &[f64]| sanitize(f(x));

    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let width = domain.upper()[i] - domain.lower()[i];
        let step = if start[i] != 0.0 { 0.05 * start[i].abs() } else { 0.00025 * width.max(1.0) };
        let mut v = start.to_vec();
        v[i] += step;
        if v[i] > domain.upper()[i] {
            v[i] = start[i] - step;
        }
        domain.project(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let start_value = values[0];

    let diameter = |s: &[Vec<f64>]| {
        let mut d: f64 = 0.0;
        for a in s.iter().skip(1) {
            let dist = a.iter().zip(&s[0]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            d = d.max(dist);
        }
        d
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        if diameter(&simplex) <= opts.tol && (spread <= opts.tol || !values[n].is_finite()) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect();
            domain.project(&mut p);
            p
        };

        let reflected = along(alpha);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(gamma);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(rho * alpha);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-rho);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, x)| b + shrink * (x - b)).collect();
            domain.project(&mut p);
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    if values[best] <= start_value {
        Minimum { argmin: simplex[best].clone(), value: values[best], converged, iterations, grad_norm: f64::NAN }
    } else {
        Minimum { argmin: start.to_vec(), value: start_value, converged, iterations, grad_norm: f64::NAN }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_bfgs(
    fg: &mut dyn FnMut(&[f64], &mut [f64]) -> f64,
    start: &[f64],
    domain: &BoxDomain,
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    let n = start.len();
    let mut x = start.to_vec();
    let mut g = vec![0.0; n];
    let mut f = sanitize(fg(&x, &mut g));
    if !f.is_finite() {
        return Err(Error::Numerical(format!("objective not finite at start {start:?}")));
    }
    let threshold = |f: f64| if opts.relative { opts.tol * (1.0 + f.abs()) } else { opts.tol };

    // Inverse Hessian approximation, row-major.
    let identity = |scale: f64| {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        h
    };
    let mut h = identity(1.0);
    let mut scaled = false;

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut iterations = 0;
    let mut pg = domain.projected_gradient_norm(&x, &g);
    let mut restarts = 0;

    while pg > threshold(f) && iterations < opts.max_iter {
        iterations += 1;

        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= domain.lower()[i] && g[i] > 0.0;
                let at_upper = x[i] >= domain.upper()[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        for i in 0..n {
            dir[i] = 0.0;
            if !free[i] {
                continue;
            }
            for j in 0..n {
                if free[j] {
                    dir[i] -= h[i * n + j] * g[j];
                }
            }
        }
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            h = identity(1.0);
            scaled = false;
            for i in 0..n {
                dir[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = dot(&dir, &g);
            if !(slope < 0.0) {
                break;
            }
        }

        // Until curvature information exists, cap the first trial step at unit length.
        let mut step = 1.0;
        if !scaled {
            let norm = dot(&dir, &dir).sqrt();
            if norm > 1.0 {
                step = 1.0 / norm;
            }
        }

        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            domain.project(&mut x_new);
            let moved: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let predicted = dot(&g, &moved);
            if moved.iter().all(|m| *m == 0.0) {
                break;
            }
            f_new = sanitize(fg(&x_new, &mut g_new));
            if f_new.is_finite() && f_new <= f + 1e-4 * predicted.min(0.0) && f_new <= f {
                accepted = true;
                break;
            }
            step *= 0.5;
        }

        if !accepted {
            if restarts < 2 && (scaled || h != identity(1.0)) {
                restarts += 1;
                h = identity(1.0);
                scaled = false;
                continue;
            }
            break;
        }
        restarts = 0;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                h = identity(sy / dot(&y, &y));
                scaled = true;
            }
            // H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                hy[i] = (0..n).map(|j| h[i * n + j] * y[j]).sum();
            }
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        pg = domain.projected_gradient_norm(&x, &g);
    }

    Ok(Minimum { argmin: x, value: f, converged: pg <= threshold(f), iterations, grad_norm: pg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> f64 {
        (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)
    }

    fn quad_grad(x: &[f64], g: &mut [f64]) -> f64 {
        g[0] = 2.0 * (x[0] - 1.0);
        g[1] = 2.0 * (x[1] - 2.0);
        quad(x)
    }

    fn rosen(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosen_grad(x: &[f64], g: &mut [f64]) -> f64 {
        g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        g[1] = 200.0 * (x[1] - x[0] * x[0]);
        rosen(x)
    }

    fn square() -> BoxDomain {
        BoxDomain::uniform(2, -5.0, 5.0).unwrap()
    }

    #[test]
    fn quadratic_nelder_mead() {
        let mut f = quad;
        let m = minimize_box(Objective::Value(&mut f), &[0.0, 0.0], &square(), &MinimizeOptions { tol: 1e-9, ..Default::default() }).unwrap();
        assert!(m.converged);
        assert!((m.argmin[0] - 1.0).abs() < 1e-6 && (m.argmin[1] - 2.0).abs() < 1e-6, "{:?}", m.argmin);
    }

    #[test]
    fn quadratic_bfgs() {
        let mut fg = quad_grad;
        let m = minimize_box(Objective::ValueGrad(&mut fg), &[0.0, 0.0], &square(), &MinimizeOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.argmin[0] - 1.0).abs() < 1e-6 && (m.argmin[1] - 2.0).abs() < 1e-6);
        assert!(m.grad_norm <= 1e-8);
    }

    #[test]
    fn start_at_minimum_is_idempotent() {
        let mut fg = quad_grad;
        let m = minimize_box(Objective::ValueGrad(&mut fg), &[1.0, 2.0], &square(), &MinimizeOptions::default()).unwrap();
        assert!(m.converged && m.iterations <= 2);
        assert_eq!(m.argmin, vec![1.0, 2.0]);
    }

    #[test]
    fn rosenbrock_both_methods() {
        let opts = MinimizeOptions { tol: 1e-10, max_iter: 20_000, relative: false };
        let mut fg = rosen_grad;
        let m = minimize_box(Objective::ValueGrad(&mut fg), &[-1.2, 1.0], &square(), &opts).unwrap();
        assert!((m.argmin[0] - 1.0).abs() < 1e-4 && (m.argmin[1] - 1.0).abs() < 1e-4, "bfgs {:?}", m);
        let mut f = rosen;
        let m = minimize_box(Objective::Value(&mut f), &[-1.2, 1.0], &square(), &opts).unwrap();
        assert!((m.argmin[0] - 1.0).abs() < 1e-4 && (m.argmin[1] - 1.0).abs() < 1e-4, "nm {:?}", m);
    }

    #[test]
    fn active_bound_is_respected() {
        // Unconstrained minimum at (1, 2) lies outside [-5, 0.5] x [-5, 5].
        let domain = BoxDomain::new(vec![-5.0, -5.0], vec![0.5, 5.0]).unwrap();
        let mut fg = quad_grad;
        let m = minimize_box(Objective::ValueGrad(&mut fg), &[0.0, 0.0], &domain, &MinimizeOptions::default()).unwrap();
        assert!(m.converged);
        assert_eq!(m.argmin[0], 0.5);
        assert!((m.argmin[1] - 2.0).abs() < 1e-7);
        let mut f = quad;
        let m = minimize_box(Objective::Value(&mut f), &[0.0, 0.0], &domain, &MinimizeOptions { tol: 1e-10, ..Default::default() }).unwrap();
        assert!(domain.contains(&m.argmin));
        assert!((m.argmin[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_region_is_a_barrier() {
        let mut fg = |x: &[f64], g: &mut [f64]| {
            if x[0] > 0.8 {
                return f64::NAN;
            }
            quad_grad(x, g)
        };
        let m = minimize_box(Objective::ValueGrad(&mut fg), &[0.0, 0.0], &square(), &MinimizeOptions::default()).unwrap();
        assert!(m.value.is_finite());
        assert!(m.argmin[0] <= 0.8);
        assert!(m.value <= quad(&[0.0, 0.0]));
    }

    #[test]
    fn start_outside_box_is_rejected() {
        let mut f = quad;
        assert!(minimize_box(Objective::Value(&mut f), &[9.0, 0.0], &square(), &MinimizeOptions::default()).is_err());
    }

    #[test]
    fn max_iter_reports_not_converged() {
        let mut f = rosen;
        let m = minimize_box(Objective::Value(&mut f), &[-1.2, 1.0], &square(), &MinimizeOptions { tol: 1e-12, max_iter: 5, relative: false }).unwrap();
        assert!(!m.converged);
        assert!(m.value <= rosen(&[-1.2, 1.0]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn stays_in_box_and_never_worsens(
                cx in -8.0f64..8.0, cy in -8.0f64..8.0,
                sx in -5.0f64..5.0, sy in -5.0f64..5.0,
                use_grad in any::<bool>(),
            ) {
                let domain = square();
                let target = |x: &[f64]| (x[0] - cx).powi(2) + 3.0 * (x[1] - cy).powi(2) + x[0] * x[1] * 0.5;
                let start = [sx, sy];
                let m = if use_grad {
                    let mut fg = |x: &[f64], g: &mut [f64]| {
                        g[0] = 2.0 * (x[0] - cx) + 0.5 * x[1];
                        g[1] = 6.0 * (x[1] - cy) + 0.5 * x[0];
                        target(x)
                    };
                    minimize_box(Objective::ValueGrad(&mut fg), &start, &domain, &MinimizeOptions::default()).unwrap()
                } else {
                    let mut f = |x: &[f64]| target(x);
                    minimize_box(Objective::Value(&mut f), &start, &domain, &MinimizeOptions::default()).unwrap()
                };
                prop_assert!(domain.contains(&m.argmin));
                prop_assert!(m.value <= target(&start));
            }
        }
    }
}
