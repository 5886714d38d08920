//! Spline posterior projected onto RK4 solutions.
//!
//! Each curve draw `f = βᵀN` is mapped to
//! `θ = argmin_η Σ_c ∫ (f_c(t) − f_{η,r,c}(t))² g(t) dt` over the box. The
//! integral uses Gauss panels aligned with the RK4 grid and the RK4 dense
//! output; its gradient comes from forward sensitivities, so the first-order
//! condition `∫ ḟ_ηᵀ (f − f_η) g dt = 0` is checked exactly on the
//! discretized objective.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::induced::{multistart, run_induced, InducedSettings};
use crate::numerics::{minimize_box, BoxDomain, MinimizeOptions, Minimum, Objective, QuadratureRule, RngStream};
use crate::ode::{rk4_solve, rk4_solve_with_sensitivities, HermiteStencil, OdeSystem};
use crate::posterior::{Dataset, Method, PosteriorDraws, SigmaPrior};
use crate::spline::{fit_conjugate, CurveDraw, SplineBasis, SplineConfig};
use crate::ts::derivative_matching_start;

/// Weight `g` in the projection distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDensity {
    /// `g ≡ 1`, the density of uniformly drawn design points.
    #[default]
    Uniform,
    /// `w(t) = t(1 − t)`, vanishing at both ends of the interval.
    Parabolic,
}

impl WeightDensity {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            WeightDensity::Uniform => 1.0,
            WeightDensity::Parabolic => t * (1.0 - t),
        }
    }
}

/// Settings shared by the projection-type methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// RK4 grid count `r_n`; defaults to the sample size.
    pub grid_count: Option<usize>,
    /// Quadrature panels; `None` aligns panels with the RK4 grid (RKTB) or uses 64 (two-step).
    pub quad_panels: Option<usize>,
    pub quad_points: usize,
    pub weight: WeightDensity,
    /// Box `Θ`; defaults to `[0.1, 30]^p`.
    pub domain: Option<BoxDomain>,
    /// Start for the posterior-mean projection; defaults to the two-step estimate.
    pub start: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub multistarts: usize,
    pub max_failure_rate: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            grid_count: None,
            quad_panels: None,
            quad_points: QuadratureRule::DEFAULT_POINTS,
            weight: WeightDensity::Uniform,
            domain: None,
            start: None,
            tol: 1e-5,
            max_iter: 200,
            multistarts: 8,
            max_failure_rate: 0.05,
        }
    }
}

pub const DEFAULT_DOMAIN: (f64, f64) = (0.1, 30.0);

impl ProjectionConfig {
    pub fn domain_for(&self, p: usize) -> Result<BoxDomain> {
        match &self.domain {
            Some(d) if d.dim() == p => Ok(d.clone()),
            Some(d) => Err(Error::Config(format!("domain has dimension {} but the system has {p} parameters", d.dim()))),
            None => BoxDomain::uniform(p, DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1),
        }
    }

    pub fn grid_for(&self, n: usize) -> usize {
        self.grid_count.unwrap_or(n).max(2)
    }

    pub fn options(&self) -> MinimizeOptions {
        MinimizeOptions { tol: self.tol, max_iter: self.max_iter, relative: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.quad_points == 0 {
            return Err(Error::Config("projection needs tol > 0, max_iter >= 1 and quad_points >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RktbConfig {
    pub spline: SplineConfig,
    pub projection: ProjectionConfig,
    pub sigma_prior: SigmaPrior,
    pub draws: usize,
}

impl Default for RktbConfig {
    fn default() -> Self {
        Self { spline: SplineConfig::rktb(), projection: ProjectionConfig::default(), sigma_prior: SigmaPrior::default(), draws: 1000 }
    }
}

/// Everything about a projection that does not depend on the curve draw.
#[derive(Debug, Clone)]
pub struct ProjectionGeometry {
    system: Arc<dyn OdeSystem>,
    grid_count: usize,
    nodes: Vec<f64>,
    /// Quadrature weight times `g` at each node.
    weights: Vec<f64>,
    /// `N(t_i)ᵀ` rows, `Nq × J`.
    basis_at_nodes: DMatrix<f64>,
    stencil: HermiteStencil,
    domain: BoxDomain,
}

impl ProjectionGeometry {
    pub fn new(
        system: Arc<dyn OdeSystem>,
        basis: &SplineBasis,
        grid_count: usize,
        rule: &QuadratureRule,
        weight: WeightDensity,
        domain: BoxDomain,
    ) -> Result<Self> {
        if domain.dim() != system.param_dim() {
            return Err(Error::Argument("domain dimension does not match the parameter dimension".into()));
        }
        let nodes = rule.nodes().to_vec();
        let basis_at_nodes = basis.design_matrix(&nodes)?;
        Self::build(system, basis_at_nodes, grid_count, rule, weight, domain)
    }

    /// Geometry for projecting fixed curves given by their values at the
    /// quadrature nodes; see [`ProjectionGeometry::problem_from_values`].
    pub fn without_basis(system: Arc<dyn OdeSystem>, grid_count: usize, rule: &QuadratureRule, weight: WeightDensity, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != system.param_dim() {
            return Err(Error::Argument("domain dimension does not match the parameter dimension".into()));
        }
        Self::build(system, DMatrix::zeros(rule.len(), 0), grid_count, rule, weight, domain)
    }

    fn build(system: Arc<dyn OdeSystem>, basis_at_nodes: DMatrix<f64>, grid_count: usize, rule: &QuadratureRule, weight: WeightDensity, domain: BoxDomain) -> Result<Self> {
        let nodes = rule.nodes().to_vec();
        let weights = nodes.iter().zip(rule.weights()).map(|(t, w)| w * weight.eval(*t)).collect();
        let stencil = HermiteStencil::new(grid_count, &nodes)?;
        Ok(Self { system, grid_count, nodes, weights, basis_at_nodes, stencil, domain })
    }

    pub fn system(&self) -> &dyn OdeSystem {
        self.system.as_ref()
    }

    pub fn grid_count(&self) -> usize {
        self.grid_count
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Projection problem for the curve with coefficients `beta` (`J × d`).
    pub fn problem(&self, beta: &DMatrix<f64>) -> ProjectionProblem<'_> {
        let values = &self.basis_at_nodes * beta;
        self.problem_from_values(&values)
    }

    /// Projection problem for a curve given by its values at the quadrature nodes (`Nq × d`).
    pub fn problem_from_values(&self, values: &DMatrix<f64>) -> ProjectionProblem<'_> {
        let d = values.ncols();
        let mut target = Vec::with_capacity(values.nrows() * d);
        for i in 0..values.nrows() {
            for c in 0..d {
                target.push(values[(i, c)]);
            }
        }
        ProjectionProblem { geometry: self, target }
    }
}

/// Weighted squared L² distance between one curve and the RK4 solution manifold.
#[derive(Debug, Clone)]
pub struct ProjectionProblem<'g> {
    geometry: &'g ProjectionGeometry,
    /// Curve values at the quadrature nodes, row-major `Nq × d`.
    target: Vec<f64>,
}

impl ProjectionProblem<'_> {
    pub fn geometry(&self) -> &ProjectionGeometry {
        self.geometry
    }

    /// Objective value only; `+inf` when the RK4 solution diverges.
    pub fn value(&self, eta: &[f64]) -> f64 {
        let g = self.geometry;
        let path = match rk4_solve(g.system(), eta, g.grid_count) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let d = path.state_dim();
        let mut acc = 0.0;
        let _ = path.for_each_stencil_point(&g.stencil, false, |i, v, _| {
            let w = g.weights[i];
            for c in 0..d {
                let r = self.target[i * d + c] - v[c];
                acc += w * r * r;
            }
        });
        acc
    }

    /// Objective value and gradient `−2 ∫ ḟ_ηᵀ (f − f_η) g dt`.
    pub fn value_and_gradient(&self, eta: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.geometry;
        let path = match rk4_solve_with_sensitivities(g.system(), eta, g.grid_count) {
            Ok(p) => p,
            Err(_) => {
                grad.iter_mut().for_each(|v| *v = 0.0);
                return f64::INFINITY;
            }
        };
        let (d, p) = (path.state_dim(), path.param_dim());
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut acc = 0.0;
        let _ = path.for_each_stencil_point(&g.stencil, true, |i, v, s| {
            let w = g.weights[i];
            for c in 0..d {
                let r = self.target[i * d + c] - v[c];
                acc += w * r * r;
                for k in 0..p {
                    grad[k] -= 2.0 * w * r * s[c * p + k];
                }
            }
        });
        acc
    }

    /// Local minimization from `start` with the analytic gradient.
    pub fn minimize_from(&self, start: &[f64], opts: &MinimizeOptions) -> Result<Minimum> {
        let mut fg = |x: &[f64], g: &mut [f64]| self.value_and_gradient(x, g);
        minimize_box(Objective::ValueGrad(&mut fg), start, self.geometry.domain(), opts)
    }
}

/// `(value, gradient)` of the projection objective at `eta`.
pub fn projection_objective(problem: &ProjectionProblem<'_>, eta: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; eta.len()];
    let v = problem.value_and_gradient(eta, &mut grad);
    (v, grad)
}

/// Minimize from `start`; when that fails to converge, take the best of
/// `config.multistarts` uniform starts in the box.
pub fn project(problem: &ProjectionProblem<'_>, start: &[f64], config: &ProjectionConfig, stream: &mut RngStream) -> Result<Minimum> {
    let opts = config.options();
    if let Ok(m) = problem.minimize_from(start, &opts) {
        if m.converged && m.value.is_finite() {
            return Ok(m);
        }
    }
    // Multistart works on curve draws; wrap the fixed problem.
    let dummy = CurveDraw { beta: DMatrix::zeros(0, 0), sigma2: 0.0 };
    multistart(&dummy, problem.geometry.domain(), config.multistarts, stream, &|_: &CurveDraw, s: &[f64]| problem.minimize_from(s, &opts))
        .ok_or_else(|| Error::Numerical("projection failed from every start".into()))
}

pub(crate) fn spline_warnings(basis: &SplineBasis, n: usize, min_order: usize) -> Vec<String> {
    let mut out = Vec::new();
    let (m, k) = (basis.order(), basis.intervals() as f64);
    if m < min_order {
        out.push(format!("spline order {m} is below the recommended {min_order}"));
    }
    let nf = n as f64;
    let (lo, hi) = (nf.powf(1.0 / (2.0 * m as f64)), nf.sqrt());
    if !(k >= lo && k <= hi) {
        out.push(format!("k_n = {k} outside [n^(1/(2m)), n^(1/2)] = [{lo:.2}, {hi:.2}] for n = {n}"));
    }
    out
}

pub(crate) fn grid_warning(r: usize, n: usize) -> Option<String> {
    let floor = (n as f64).powf(0.125);
    ((r as f64) < 10.0 * floor).then(|| format!("grid count r = {r} is not large relative to n^(1/8) = {floor:.2}"))
}

/// Posterior on `θ` induced by projecting spline-posterior draws.
pub fn rktb_run(system: Arc<dyn OdeSystem>, data: &Dataset, config: &RktbConfig, stream: &mut RngStream) -> Result<PosteriorDraws> {
    data.validate()?;
    config.projection.validate()?;
    config.sigma_prior.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("RKTB needs at least one observation".into()));
    }
    if data.response_dim() != system.state_dim() {
        return Err(Error::Data(format!("data has {} response columns, system has {} states", data.response_dim(), system.state_dim())));
    }
    let p = system.param_dim();
    let basis = config.spline.basis_for(n)?;
    let mut warnings = spline_warnings(&basis, n, 3);
    let r = config.projection.grid_for(n);
    warnings.extend(grid_warning(r, n));

    let posterior = fit_conjugate(&basis, &data.x, &data.y, config.sigma_prior.shape, config.sigma_prior.scale)?;
    let rule = match config.projection.quad_panels {
        Some(panels) => QuadratureRule::gauss(panels, config.projection.quad_points)?,
        None => QuadratureRule::aligned_to_grid(r, config.projection.quad_points)?,
    };
    let domain = config.projection.domain_for(p)?;
    let geometry = ProjectionGeometry::new(system.clone(), &basis, r, &rule, config.projection.weight, domain.clone())?;
    let opts = config.projection.options();

    let initial = match &config.projection.start {
        Some(s) => {
            let mut s = s.clone();
            domain.project(&mut s);
            s
        }
        None => derivative_matching_start(system.clone(), &basis, &posterior.mean_draw().beta, &domain, &opts),
    };

    let settings = InducedSettings {
        method: Method::Rktb,
        draws: config.draws,
        domain: &domain,
        multistarts: config.projection.multistarts,
        max_failure_rate: config.projection.max_failure_rate,
    };
    let mut draws = run_induced(&posterior, &settings, &initial, stream, |curve, start| {
        geometry.problem(&curve.beta).minimize_from(start, &opts)
    });
    warnings.append(&mut draws.warnings);
    draws.warnings = warnings;
    Ok(draws)
}
