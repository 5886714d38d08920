//! Derivative-matching two-step comparator.
//!
//! A curve draw `f = βᵀN` maps to the minimizer of
//! `Σ_c ∫ (f_c'(t) − F_c(t, f(t), η))² w(t) dt`. No ODE is solved.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::induced::{run_induced, InducedSettings};
use crate::numerics::{minimize_box, BoxDomain, MinimizeOptions, Minimum, Objective, QuadratureRule, RngStream};
use crate::ode::OdeSystem;
use crate::posterior::{Dataset, Method, PosteriorDraws, SigmaPrior};
use crate::rktb::{spline_warnings, ProjectionConfig, WeightDensity};
use crate::spline::{fit_conjugate, SplineBasis, SplineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsConfig {
    pub spline: SplineConfig,
    /// `grid_count` is ignored; `quad_panels` defaults to 64 and the weight to `t(1 − t)`.
    pub projection: ProjectionConfig,
    pub sigma_prior: SigmaPrior,
    pub draws: usize,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self {
            spline: SplineConfig::ts(),
            projection: ProjectionConfig { weight: WeightDensity::Parabolic, ..ProjectionConfig::default() },
            sigma_prior: SigmaPrior::default(),
            draws: 1000,
        }
    }
}

/// Quadrature nodes with the basis and its derivative tabulated on them.
#[derive(Debug, Clone)]
pub struct TsGeometry {
    system: Arc<dyn OdeSystem>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    basis_at_nodes: DMatrix<f64>,
    deriv_at_nodes: DMatrix<f64>,
    domain: BoxDomain,
}

impl TsGeometry {
    pub fn new(system: Arc<dyn OdeSystem>, basis: &SplineBasis, rule: &QuadratureRule, weight: WeightDensity, domain: BoxDomain) -> Result<Self> {
        if basis.order() < 2 {
            return Err(Error::Argument(format!("derivative matching needs spline order >= 2, got {}", basis.order())));
        }
        if domain.dim() != system.param_dim() {
            return Err(Error::Argument("domain dimension does not match the parameter dimension".into()));
        }
        let nodes = rule.nodes().to_vec();
        let weights = nodes.iter().zip(rule.weights()).map(|(t, w)| w * weight.eval(*t)).collect();
        Ok(Self {
            basis_at_nodes: basis.design_matrix(&nodes)?,
            deriv_at_nodes: basis.derivative_matrix(&nodes, 1)?,
            system,
            nodes,
            weights,
            domain,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn problem(&self, beta: &DMatrix<f64>) -> TsProblem<'_> {
        TsProblem { geometry: self, values: &self.basis_at_nodes * beta, derivs: &self.deriv_at_nodes * beta }
    }
}

#[derive(Debug, Clone)]
pub struct TsProblem<'g> {
    geometry: &'g TsGeometry,
    /// `f(t_i)`, `Nq × d`.
    values: DMatrix<f64>,
    /// `f'(t_i)`, `Nq × d`.
    derivs: DMatrix<f64>,
}

impl TsProblem<'_> {
    /// Value and gradient `−2 ∫ (∂F/∂η)ᵀ (f' − F) w dt`; `+inf` on a non-finite field.
    pub fn value_and_gradient(&self, eta: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.geometry;
        let sys = g.system.as_ref();
        let (d, p) = (sys.state_dim(), sys.param_dim());
        let mut y = vec![0.0; d];
        let mut field = vec![0.0; d];
        let mut jac = vec![0.0; d * p];
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut acc = 0.0;
        for (i, &t) in g.nodes.iter().enumerate() {
            for c in 0..d {
                y[c] = self.values[(i, c)];
            }
            sys.vector_field(t, &y, eta, &mut field);
            sys.jacobian_param(t, &y, eta, &mut jac);
            let w = g.weights[i];
            for c in 0..d {
                let r = self.derivs[(i, c)] - field[c];
                acc += w * r * r;
                for k in 0..p {
                    grad[k] -= 2.0 * w * r * jac[c * p + k];
                }
            }
        }
        if acc.is_finite() && grad.iter().all(|v| v.is_finite()) {
            acc
        } else {
            grad.iter_mut().for_each(|v| *v = 0.0);
            f64::INFINITY
        }
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        let mut grad = vec![0.0; eta.len()];
        self.value_and_gradient(eta, &mut grad)
    }

    pub fn minimize_from(&self, start: &[f64], opts: &MinimizeOptions) -> Result<Minimum> {
        let mut fg = |x: &[f64], g: &mut [f64]| self.value_and_gradient(x, g);
        minimize_box(Objective::ValueGrad(&mut fg), start, self.geometry.domain(), opts)
    }
}

/// `(value, gradient)` of the derivative-matching distance at `eta`.
pub fn ts_objective(problem: &TsProblem<'_>, eta: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; eta.len()];
    let v = problem.value_and_gradient(eta, &mut grad);
    (v, grad)
}

/// Derivative-matching estimate on the curve `beta`, used as a cheap
/// starting point. Falls back to the box centre.
pub fn derivative_matching_start(system: Arc<dyn OdeSystem>, basis: &SplineBasis, beta: &DMatrix<f64>, domain: &BoxDomain, opts: &MinimizeOptions) -> Vec<f64> {
    let centre = box_centre(domain);
    let geometry = match TsGeometry::new(system, basis, &QuadratureRule::default(), WeightDensity::Parabolic, domain.clone()) {
        Ok(g) => g,
        Err(_) => return centre,
    };
    match geometry.problem(beta).minimize_from(&centre, opts) {
        Ok(m) if m.value.is_finite() => m.argmin,
        _ => centre,
    }
}

/// Derivative-matching estimate on the posterior-mean curve of an order-5
/// spline fit to `data`.
pub fn ts_point_estimate(system: Arc<dyn OdeSystem>, data: &Dataset, domain: &BoxDomain) -> Result<Vec<f64>> {
    let basis = SplineConfig::ts().basis_for(data.len())?;
    let fit = fit_conjugate(&basis, &data.x, &data.y, 1.0, 1.0)?;
    let opts = MinimizeOptions { tol: 1e-6, max_iter: 200, relative: true };
    Ok(derivative_matching_start(system, &basis, fit.mean_coef(), domain, &opts))
}

pub(crate) fn box_centre(domain: &BoxDomain) -> Vec<f64> {
    domain.lower().iter().zip(domain.upper()).map(|(l, u)| 0.5 * (l + u)).collect()
}

/// Induced posterior of the derivative-matching estimate.
pub fn ts_run(system: Arc<dyn OdeSystem>, data: &Dataset, config: &TsConfig, stream: &mut RngStream) -> Result<PosteriorDraws> {
    data.validate()?;
    config.projection.validate()?;
    config.sigma_prior.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("two-step method needs at least one observation".into()));
    }
    if data.response_dim() != system.state_dim() {
        return Err(Error::Data(format!("data has {} response columns, system has {} states", data.response_dim(), system.state_dim())));
    }
    let p = system.param_dim();
    let basis = config.spline.basis_for(n)?;
    let mut warnings = spline_warnings(&basis, n, 2);
    let posterior = fit_conjugate(&basis, &data.x, &data.y, config.sigma_prior.shape, config.sigma_prior.scale)?;
    let rule = QuadratureRule::gauss(config.projection.quad_panels.unwrap_or(QuadratureRule::DEFAULT_PANELS), config.projection.quad_points)?;
    let domain = config.projection.domain_for(p)?;
    let geometry = TsGeometry::new(system, &basis, &rule, config.projection.weight, domain.clone())?;
    let opts = config.projection.options();
    let initial = match &config.projection.start {
        Some(s) => {
            let mut s = s.clone();
            domain.project(&mut s);
            s
        }
        None => box_centre(&domain),
    };
    let settings = InducedSettings {
        method: Method::Ts,
        draws: config.draws,
        domain: &domain,
        multistarts: config.projection.multistarts,
        max_failure_rate: config.projection.max_failure_rate,
    };
    let mut draws = run_induced(&posterior, &settings, &initial, stream, |curve, start| geometry.problem(&curve.beta).minimize_from(start, &opts));
    warnings.append(&mut draws.warnings);
    draws.warnings = warnings;
    Ok(draws)
}
