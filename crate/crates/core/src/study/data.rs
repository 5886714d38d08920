//! Truth curves and simulated datasets for the Lotka–Volterra study.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, MinimizeOptions, QuadratureRule, RngStream};
use crate::ode::{rk4_solve, OdeSystem, Rk4Path};
use crate::posterior::{Case, Dataset};
use crate::rktb::{ProjectionGeometry, WeightDensity};

/// Grid used for every truth curve.
pub const TRUTH_GRID: usize = 4096;

/// Regression function of a study case: the RK4 path at `τ₀` plus, when
/// misspecified, `(t² + t − c_k)/6` on component `k`.
#[derive(Debug, Clone)]
pub struct TruthCurve {
    system: Arc<dyn OdeSystem>,
    tau: Vec<f64>,
    path: Rk4Path,
    case: Case,
    offsets: Vec<f64>,
}

impl TruthCurve {
    pub fn new(system: Arc<dyn OdeSystem>, tau: &[f64], case: Case) -> Result<Self> {
        let path = rk4_solve(system.as_ref(), tau, TRUTH_GRID)?;
        let offsets = match case {
            Case::WellSpecified => vec![0.0; system.state_dim()],
            Case::Misspecified => misspec_constants_on(&path)?,
        };
        Ok(Self { system, tau: tau.to_vec(), path, case, offsets })
    }

    pub fn case(&self) -> Case {
        self.case
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn system(&self) -> &Arc<dyn OdeSystem> {
        &self.system
    }

    /// `c_k` per component (zeros when well specified).
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `f_{τ₀}(t)` without the misspecification term.
    pub fn ode_part(&self, t: f64) -> Result<Vec<f64>> {
        self.path.dense_eval(t)
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = self.path.dense_eval(t)?;
        if self.case == Case::Misspecified {
            for (vk, c) in v.iter_mut().zip(&self.offsets) {
                *vk += (t * t + t - c) / 6.0;
            }
        }
        Ok(v)
    }

    /// Parameter the intervals are scored against: `τ₀` when well specified,
    /// otherwise the minimizer of `∫ |f₀ − f_η|² dt`.
    pub fn target_theta(&self, domain: &BoxDomain) -> Result<Vec<f64>> {
        match self.case {
            Case::WellSpecified => Ok(self.tau.clone()),
            Case::Misspecified => pseudo_true_theta(self, domain),
        }
    }
}

fn misspec_constants_on(path: &Rk4Path) -> Result<Vec<f64>> {
    let rule = QuadratureRule::default();
    let d = path.state_dim();
    (0..d)
        .map(|k| {
            let num = rule.integrate_uniform(|t| path.dense_eval(t).map(|v| v[k] * (t * t + t)).unwrap_or(f64::NAN))?;
            let den = rule.integrate_uniform(|t| path.dense_eval(t).map(|v| v[k]).unwrap_or(f64::NAN))?;
            if !(den > 0.0) {
                return Err(Error::Config(format!("component {} has non-positive integral {den}", k + 1)));
            }
            Ok(num / den)
        })
        .collect()
}

/// Constants `c_k` with `∫ f_k(t)(t² + t − c_k) dt = 0` for the RK4 path at `tau`.
pub fn misspec_constants(system: &dyn OdeSystem, tau: &[f64]) -> Result<Vec<f64>> {
    misspec_constants_on(&rk4_solve(system, tau, TRUTH_GRID)?)
}

fn pseudo_true_theta(truth: &TruthCurve, domain: &BoxDomain) -> Result<Vec<f64>> {
    let rule = QuadratureRule::aligned_to_grid(TRUTH_GRID, 2)?;
    let geometry = ProjectionGeometry::without_basis(truth.system.clone(), TRUTH_GRID, &rule, WeightDensity::Uniform, domain.clone())?;
    let d = truth.system.state_dim();
    let mut values = DMatrix::zeros(rule.len(), d);
    for (i, &t) in rule.nodes().iter().enumerate() {
        let v = truth.eval(t)?;
        for c in 0..d {
            values[(i, c)] = v[c];
        }
    }
    let problem = geometry.problem_from_values(&values);
    let m = problem.minimize_from(&truth.tau, &MinimizeOptions { tol: 1e-8, max_iter: 500, relative: true })?;
    if !m.converged {
        return Err(Error::Numerical(format!("pseudo-true parameter search did not converge: {m:?}")));
    }
    Ok(m.argmin)
}

/// `n` design points from `Uniform(0, 1)` and responses `f₀(x) + N(0, σ₀²)`.
pub fn generate_dataset(truth: &TruthCurve, n: usize, sigma0: f64, stream: &mut RngStream) -> Result<Dataset> {
    if !(sigma0 >= 0.0) {
        return Err(Error::Config(format!("noise sd must be non-negative, got {sigma0}")));
    }
    let d = truth.system.state_dim();
    let x: Vec<f64> = (0..n).map(|_| stream.uniform()).collect();
    let mut y = DMatrix::zeros(n, d);
    for (i, &t) in x.iter().enumerate() {
        let f = truth.eval(t)?;
        for c in 0..d {
            y[(i, c)] = f[c] + sigma0 * stream.normal();
        }
    }
    let mut data = Dataset::new(x, y)?;
    data.case = Some(truth.case);
    data.sigma0 = Some(sigma0);
    data.seed = Some((stream.seed(), stream.stream_id()));
    Ok(data)
}
