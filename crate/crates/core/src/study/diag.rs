//! Limits appearing in the Bernstein–von Mises results: `V_{θ₀}`, the
//! limiting covariance `J⁻¹ (∫ ḟᵀḟ g) J⁻¹`, `σ*²` and the Fisher information.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::QuadratureRule;
use crate::ode::{rk4_solve_with_sensitivities, OdeSystem, Rk4Path};
use crate::rktb::WeightDensity;
use crate::study::data::TRUTH_GRID;

#[derive(Debug, Clone)]
pub struct AsymptoticDiagnostics {
    pub theta0: Vec<f64>,
    /// `∫ ḟᵀḟ g dt`.
    pub gram: DMatrix<f64>,
    /// `V_{θ₀} = J_{θ₀}`; equals `gram` when well specified.
    pub v_theta0: DMatrix<f64>,
    /// `J⁻¹ gram J⁻¹`.
    pub sigma_limit: DMatrix<f64>,
    pub sigma0_sq: f64,
    /// `σ₀² + ∫ |f₀ − f_{θ₀}|² g dt`.
    pub sigma_star_sq: f64,
    /// `(p + 1) × (p + 1)` block-diagonal information for `(θ, σ²)`.
    pub fisher_info: DMatrix<f64>,
}

impl AsymptoticDiagnostics {
    /// Limit of `n · Cov(θ | data)` for the projection posterior: `σ₀² · sigma_limit`.
    pub fn scaled_covariance(&self) -> DMatrix<f64> {
        &self.sigma_limit * self.sigma0_sq
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        serde_json::json!({
            "theta0": self.theta0,
            "gram": rows(&self.gram),
            "v_theta0": rows(&self.v_theta0),
            "sigma_limit": rows(&self.sigma_limit),
            "scaled_covariance": rows(&self.scaled_covariance()),
            "sigma0_sq": self.sigma0_sq,
            "sigma_star_sq": self.sigma_star_sq,
            "fisher_info": rows(&self.fisher_info),
            "min_eigenvalue": self.min_eigenvalue(),
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.v_theta0.clone().symmetric_eigen().eigenvalues.min()
    }
}

fn sensitivities_at(path: &Rk4Path, t: f64, d: usize, p: usize) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_row_slice(d, p, &path.dense_sensitivity(t)?))
}

/// Diagnostics at `theta0`. `f0` is the true regression function when it is
/// not `f_{θ₀}`; the second-derivative term of `J_{θ₀}` then uses central
/// differences of the sensitivities.
pub fn asymptotic_diagnostics(
    system: &dyn OdeSystem,
    theta0: &[f64],
    f0: Option<&dyn Fn(f64) -> Result<Vec<f64>>>,
    weight: WeightDensity,
    sigma0_sq: f64,
) -> Result<AsymptoticDiagnostics> {
    let (d, p) = (system.state_dim(), system.param_dim());
    if theta0.len() != p {
        return Err(Error::Argument(format!("theta0 has length {} but the system has {p} parameters", theta0.len())));
    }
    let rule = QuadratureRule::default();
    let path = rk4_solve_with_sensitivities(system, theta0, TRUTH_GRID)?;
    let h = 1e-4;
    let shifted: Vec<(Rk4Path, Rk4Path, f64)> = match f0 {
        None => Vec::new(),
        Some(_) => (0..p)
            .map(|k| {
                let step = h * theta0[k].abs().max(1.0);
                let (mut up, mut dn) = (theta0.to_vec(), theta0.to_vec());
                up[k] += step;
                dn[k] -= step;
                Ok((rk4_solve_with_sensitivities(system, &up, TRUTH_GRID)?, rk4_solve_with_sensitivities(system, &dn, TRUTH_GRID)?, step))
            })
            .collect::<Result<_>>()?,
    };

    let mut gram = DMatrix::zeros(p, p);
    let mut curvature = DMatrix::zeros(p, p);
    let mut gap = 0.0;
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let w = w * weight.eval(t);
        let s = sensitivities_at(&path, t, d, p)?;
        gram += s.transpose() * &s * w;
        if let Some(f0) = f0 {
            let ft = path.dense_eval(t)?;
            let e: Vec<f64> = f0(t)?.iter().zip(&ft).map(|(a, b)| a - b).collect();
            gap += w * e.iter().map(|v| v * v).sum::<f64>();
            // Column k holds ∂/∂θ_k of ḟᵀe with e frozen.
            for (k, (up, dn, step)) in shifted.iter().enumerate() {
                let ds = (sensitivities_at(up, t, d, p)? - sensitivities_at(dn, t, d, p)?) / (2.0 * step);
                for j in 0..p {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += ds[(c, j)] * e[c];
                    }
                    curvature[(j, k)] += w * acc;
                }
            }
        }
    }
    let mut v = &gram - &curvature;
    v = (&v + v.transpose()) * 0.5;
    let j_inv = v.clone().try_inverse().ok_or_else(|| Error::Singular("J at theta0 is singular".into()))?;
    if !v.clone().symmetric_eigen().eigenvalues.iter().all(|e| *e > 0.0) {
        log::warn!("V at theta0 is not positive definite");
    }
    let sigma_limit = &j_inv * &gram * &j_inv;
    let sigma_star_sq = sigma0_sq + gap;
    let mut fisher_info = DMatrix::zeros(p + 1, p + 1);
    fisher_info.view_mut((0, 0), (p, p)).copy_from(&(&v / sigma_star_sq));
    fisher_info[(p, p)] = 0.5 / (sigma_star_sq * sigma_star_sq);
    Ok(AsymptoticDiagnostics { theta0: theta0.to_vec(), gram, v_theta0: v, sigma_limit, sigma0_sq, sigma_star_sq, fisher_info })
}
