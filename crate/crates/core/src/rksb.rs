//! Metropolis-within-Gibbs sampler for `(θ, σ²)` under the likelihood that
//! replaces the ODE solution by its RK4 approximation.
//!
//! Each sweep updates the coordinates of `θ` one at a time with Gaussian
//! random-walk proposals and then draws `σ²` from its inverse-gamma full
//! conditional. Proposal scales adapt during burn-in and are frozen after.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, RngStream};
use crate::ode::{rk4_solve, HermiteStencil, OdeSystem};
use crate::posterior::{Dataset, Method, PosteriorDraws, SigmaPrior};
use crate::rktb::{grid_warning, DEFAULT_DOMAIN};
use crate::ts::ts_point_estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RksbConfig {
    /// Independent normal prior on each `θ_j`.
    pub prior_theta_mean: Vec<f64>,
    pub prior_theta_var: Vec<f64>,
    pub sigma_prior: SigmaPrior,
    /// RK4 grid count; defaults to the sample size.
    pub grid_count: Option<usize>,
    /// Total sweeps including burn-in.
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_scale: Vec<f64>,
    pub adapt_target: f64,
    pub domain: Option<BoxDomain>,
    /// Chain start; defaults to the derivative-matching estimate.
    pub start: Option<Vec<f64>>,
}

impl Default for RksbConfig {
    fn default() -> Self {
        Self {
            prior_theta_mean: vec![6.0; 4],
            prior_theta_var: vec![16.0; 4],
            sigma_prior: SigmaPrior::default(),
            grid_count: None,
            chain_length: 15_000,
            burn_in: 5_000,
            thin: 10,
            proposal_scale: vec![0.5; 4],
            adapt_target: 0.234,
            domain: None,
            start: None,
        }
    }
}

impl RksbConfig {
    /// Kept draws after burn-in and thinning.
    pub fn kept(&self) -> usize {
        (self.chain_length - self.burn_in) / self.thin
    }

    /// Adjust the chain so that `draws` samples are kept.
    pub fn with_draws(mut self, draws: usize) -> Self {
        self.chain_length = self.burn_in + draws * self.thin;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.chain_length <= self.burn_in {
            return err(format!("chain_length {} must exceed burn_in {}", self.chain_length, self.burn_in));
        }
        if self.thin == 0 {
            return err("thin must be at least 1".into());
        }
        for (name, v) in [("prior_theta_mean", &self.prior_theta_mean), ("prior_theta_var", &self.prior_theta_var), ("proposal_scale", &self.proposal_scale)] {
            if v.len() != p {
                return err(format!("{name} has length {} but the system has {p} parameters", v.len()));
            }
        }
        if self.prior_theta_var.iter().any(|v| !(*v > 0.0)) || self.proposal_scale.iter().any(|v| !(*v > 0.0)) {
            return err("prior variances and proposal scales must be positive".into());
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return err("adapt_target must lie in (0, 1)".into());
        }
        if matches!(self.grid_count, Some(r) if r < 2) {
            return err("grid_count must be at least 2".into());
        }
        self.sigma_prior.validate()
    }

    fn domain_for(&self, p: usize) -> Result<BoxDomain> {
        match &self.domain {
            Some(d) if d.dim() == p => Ok(d.clone()),
            Some(d) => Err(Error::Config(format!("domain has dimension {} but the system has {p} parameters", d.dim()))),
            None => BoxDomain::uniform(p, DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1),
        }
    }
}

/// Residual sum of squares `Σ_i ‖Y_i − f_{θ,r}(X_i)‖²` from one RK4 solve.
struct ResidualEvaluator<'a> {
    system: &'a dyn OdeSystem,
    data: &'a Dataset,
    stencil: HermiteStencil,
    r: usize,
}

impl<'a> ResidualEvaluator<'a> {
    fn new(system: &'a dyn OdeSystem, data: &'a Dataset, r: usize) -> Result<Self> {
        Ok(Self { system, data, stencil: HermiteStencil::new(r, &data.x)?, r })
    }

    fn ssr(&self, theta: &[f64]) -> Result<f64> {
        let path = rk4_solve(self.system, theta, self.r)?;
        let d = self.data.response_dim();
        let mut acc = 0.0;
        path.for_each_stencil_point(&self.stencil, false, |i, v, _| {
            for c in 0..d {
                let e = self.data.y[(i, c)] - v[c];
                acc += e * e;
            }
        })?;
        Ok(acc)
    }
}

fn gaussian_loglik(ssr: f64, n: usize, d: usize, sigma2: f64) -> f64 {
    -0.5 * (n * d) as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() - ssr / (2.0 * sigma2)
}

fn check_data(system: &dyn OdeSystem, data: &Dataset) -> Result<()> {
    data.validate()?;
    if !data.is_empty() && data.response_dim() != system.state_dim() {
        return Err(Error::Data(format!("data has {} response columns, system has {} states", data.response_dim(), system.state_dim())));
    }
    Ok(())
}

/// Gaussian log-likelihood with the RK4 solution in place of the ODE
/// solution; `-inf` when RK4 diverges.
pub fn rksb_loglik(system: &dyn OdeSystem, theta: &[f64], sigma2: f64, data: &Dataset, r: usize) -> Result<f64> {
    check_data(system, data)?;
    if data.is_empty() {
        return Err(Error::Data("log-likelihood needs at least one observation".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain { value: sigma2 });
    }
    let eval = ResidualEvaluator::new(system, data, r)?;
    match eval.ssr(theta) {
        Ok(ssr) => Ok(gaussian_loglik(ssr, data.len(), data.response_dim(), sigma2)),
        Err(Error::Divergence { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Shape and scale of the `σ²` full conditional given the residual sum of squares.
pub fn sigma_conditional(ssr: f64, n: usize, d: usize, prior: SigmaPrior) -> (f64, f64) {
    ((n * d) as f64 / 2.0 + prior.shape, ssr / 2.0 + prior.scale)
}

/// Exact draw from `σ² | θ, data ~ IG(nd/2 + a, SSR/2 + b)`.
pub fn rksb_gibbs_sigma(system: &dyn OdeSystem, theta: &[f64], data: &Dataset, r: usize, prior: SigmaPrior, stream: &mut RngStream) -> Result<f64> {
    check_data(system, data)?;
    let ssr = if data.is_empty() { 0.0 } else { ResidualEvaluator::new(system, data, r)?.ssr(theta)? };
    let (shape, scale) = sigma_conditional(ssr, data.len(), data.response_dim(), prior);
    Ok(stream.inverse_gamma(shape, scale))
}

/// Run the chain and return the thinned post-burn-in draws.
pub fn rksb_run(system: Arc<dyn OdeSystem>, data: &Dataset, config: &RksbConfig, stream: &mut RngStream) -> Result<PosteriorDraws> {
    let sys = system.as_ref();
    check_data(sys, data)?;
    let p = sys.param_dim();
    config.validate(p)?;
    let domain = config.domain_for(p)?;
    let (n, d) = (data.len(), if data.is_empty() { sys.state_dim() } else { data.response_dim() });
    let r = config.grid_count.unwrap_or(n).max(2);
    let mut warnings: Vec<String> = grid_warning(r, n.max(1)).into_iter().collect();

    let eval = if data.is_empty() { None } else { Some(ResidualEvaluator::new(sys, data, r)?) };
    let ssr_of = |theta: &[f64]| -> Option<f64> {
        match &eval {
            None => Some(0.0),
            Some(e) => e.ssr(theta).ok().filter(|v| v.is_finite()),
        }
    };
    let log_prior = |theta: &[f64]| -> f64 {
        theta
            .iter()
            .zip(&config.prior_theta_mean)
            .zip(&config.prior_theta_var)
            .map(|((t, m), v)| -0.5 * (t - m) * (t - m) / v)
            .sum()
    };

    let mut theta = match &config.start {
        Some(s) => s.clone(),
        None if !data.is_empty() => ts_point_estimate(system.clone(), data, &domain).unwrap_or_else(|_| config.prior_theta_mean.clone()),
        None => config.prior_theta_mean.clone(),
    };
    domain.project(&mut theta);
    let mut ssr = match ssr_of(&theta) {
        Some(v) => v,
        None => {
            warnings.push("RK4 diverges at the chain start; restarting from the prior mean".into());
            theta = config.prior_theta_mean.clone();
            domain.project(&mut theta);
            ssr_of(&theta).ok_or_else(|| Error::Numerical("RK4 diverges at both candidate chain starts".into()))?
        }
    };
    let (shape, _) = sigma_conditional(0.0, n, d, config.sigma_prior);
    let mut sigma2 = stream.inverse_gamma(shape, ssr / 2.0 + config.sigma_prior.scale);
    let mut log_scale: Vec<f64> = config.proposal_scale.iter().map(|s| s.ln()).collect();

    let kept = config.kept();
    let mut out_theta = Vec::with_capacity(kept * p);
    let mut out_sigma2 = Vec::with_capacity(kept);
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let mut proposal = theta.clone();
    for sweep in 0..config.chain_length {
        let burning = sweep < config.burn_in;
        let gain = ((sweep + 1) as f64).powf(-0.6);
        let mut cur = gaussian_loglik(ssr, n, d, sigma2) + log_prior(&theta);
        for j in 0..p {
            proposal.copy_from_slice(&theta);
            proposal[j] += log_scale[j].exp() * stream.normal();
            let u = stream.uniform();
            let mut accept = false;
            if domain.contains(&proposal) {
                if let Some(s) = ssr_of(&proposal) {
                    let prop = gaussian_loglik(s, n, d, sigma2) + log_prior(&proposal);
                    if u.ln() < prop - cur {
                        accept = true;
                        theta[j] = proposal[j];
                        ssr = s;
                        cur = prop;
                    }
                }
            }
            if burning {
                log_scale[j] += gain * (accept as u8 as f64 - config.adapt_target);
            } else {
                proposed += 1;
                accepted += accept as u64;
            }
        }
        sigma2 = stream.inverse_gamma(shape, ssr / 2.0 + config.sigma_prior.scale);
        if !burning && (sweep - config.burn_in + 1).is_multiple_of(config.thin) && out_sigma2.len() < kept {
            out_theta.extend_from_slice(&theta);
            out_sigma2.push(sigma2);
        }
    }
    let acceptance_rate = if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 };
    if acceptance_rate < 0.05 {
        warnings.push(format!("acceptance rate {acceptance_rate:.3} is very low"));
    }
    Ok(PosteriorDraws {
        method: Method::Rksb,
        theta: DMatrix::from_row_slice(out_sigma2.len(), p, &out_theta),
        sigma2: out_sigma2,
        acceptance_rate,
        seed: stream.seed(),
        stream_id: stream.stream_id(),
        failures: 0,
        attempted: kept,
        flagged: false,
        max_relative_grad_norm: 0.0,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::split_stream;
    use crate::ode::{Exponential, LotkaVolterra};

    fn exp_data(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = x.len();
        Dataset::new(x, DMatrix::from_vec(n, 1, y)).unwrap()
    }

    #[test]
    fn zero_residual_loglik() {
        let x: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let path = rk4_solve(&Exponential, &[0.5], 10).unwrap();
        let y = x.iter().map(|t| path.dense_eval(*t).unwrap()[0]).collect();
        let data = exp_data(x, y);
        let ll = rksb_loglik(&Exponential, &[0.5], 0.3, &data, 10).unwrap();
        let expect = -0.5 * 11.0 * (2.0 * std::f64::consts::PI * 0.3).ln();
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn single_observation_arithmetic() {
        let path = rk4_solve(&Exponential, &[1.0], 8).unwrap();
        let fx = path.dense_eval(0.5).unwrap()[0];
        let data = exp_data(vec![0.5], vec![fx + 0.2]);
        let ll = rksb_loglik(&Exponential, &[1.0], 0.04, &data, 8).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 0.04).ln() - 0.5;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn fine_grid_matches_closed_form() {
        let mut s = split_stream(3, 0);
        let x: Vec<f64> = (0..20).map(|_| s.uniform()).collect();
        let y: Vec<f64> = x.iter().map(|t| (1.3 * t).exp() + 0.1 * s.normal()).collect();
        let data = exp_data(x.clone(), y.clone());
        let theta = 1.1;
        let sigma2 = 0.01;
        let exact_ssr: f64 = x.iter().zip(&y).map(|(t, v)| (v - (theta * t).exp()).powi(2)).sum();
        let exact = gaussian_loglik(exact_ssr, 20, 1, sigma2);
        let approx = rksb_loglik(&Exponential, &[theta], sigma2, &data, 2000).unwrap();
        assert!((approx - exact).abs() <= 1e-6, "{approx} vs {exact}");
    }

    #[test]
    fn divergence_gives_negative_infinity() {
        let data = Dataset::new(vec![0.5], DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let ll = rksb_loglik(&LotkaVolterra { initial: [1.0, 1.0] }, &[1e4, 0.0, 0.0, 0.0], 1.0, &data, 4).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn sigma_conditional_shape() {
        let prior = SigmaPrior { shape: 30.0, scale: 5.0 };
        assert_eq!(sigma_conditional(1.7, 100, 2, prior).0, 130.0);
        assert_eq!(sigma_conditional(0.0, 100, 1, prior), (80.0, 5.0));
    }

    #[test]
    fn zero_residual_gibbs_draws_follow_ig_80_5() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let path = rk4_solve(&Exponential, &[0.5], 100).unwrap();
        let y = x.iter().map(|t| path.dense_eval(*t).unwrap()[0]).collect();
        let data = exp_data(x, y);
        let prior = SigmaPrior { shape: 30.0, scale: 5.0 };
        let mut s = split_stream(11, 0);
        let m = 10_000;
        let draws: Vec<f64> = (0..m).map(|_| rksb_gibbs_sigma(&Exponential, &[0.5], &data, 100, prior, &mut s).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        // IG(80, 5): mean 5/79, variance mean²/78.
        let target = 5.0 / 79.0;
        let se = target / 78f64.sqrt() / (m as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "mean {mean}");
        let again = rksb_gibbs_sigma(&Exponential, &[0.5], &data, 100, prior, &mut split_stream(11, 0)).unwrap();
        assert_eq!(again, draws[0]);
    }

    #[test]
    fn config_validation() {
        let mut c = RksbConfig::default();
        assert!(c.validate(4).is_ok());
        assert_eq!(c.kept(), 1000);
        assert!(c.validate(3).is_err());
        c.burn_in = c.chain_length;
        assert!(c.validate(4).is_err());
        let c = RksbConfig { adapt_target: 1.0, ..RksbConfig::default() };
        assert!(c.validate(4).is_err());
    }

    fn one_dim_config(draws: usize) -> RksbConfig {
        RksbConfig {
            prior_theta_mean: vec![6.0],
            prior_theta_var: vec![16.0],
            proposal_scale: vec![1.0],
            burn_in: 2000,
            thin: 1,
            domain: Some(BoxDomain::uniform(1, -100.0, 100.0).unwrap()),
            ..RksbConfig::default()
        }
        .with_draws(draws)
    }

    #[test]
    fn prior_only_chain_recovers_prior_moments() {
        let empty = Dataset::new(vec![], DMatrix::zeros(0, 1)).unwrap();
        let cfg = one_dim_config(100_000);
        let draws = rksb_run(Arc::new(Exponential), &empty, &cfg, &mut split_stream(4, 0)).unwrap();
        assert_eq!(draws.len(), 100_000);
        let mean = draws.mean()[0];
        let var = draws.sd()[0].powi(2);
        assert!((mean - 6.0).abs() < 0.05 * 6.0, "mean {mean}");
        assert!((var - 16.0).abs() < 0.05 * 16.0, "var {var}");
    }

    #[test]
    fn exponential_posterior_covers_truth() {
        let mut s = split_stream(9, 0);
        let x: Vec<f64> = (0..200).map(|_| s.uniform()).collect();
        let y: Vec<f64> = x.iter().map(|t| (0.8 * t).exp() + 0.1 * s.normal()).collect();
        let data = exp_data(x, y);
        let cfg = RksbConfig { sigma_prior: SigmaPrior { shape: 2.0, scale: 0.01 }, ..one_dim_config(5000) };
        let draws = rksb_run(Arc::new(Exponential), &data, &cfg, &mut split_stream(9, 1)).unwrap();
        let (mean, sd) = (draws.mean()[0], draws.sd()[0]);
        assert!((mean - 0.8).abs() < 3.0 * sd, "mean {mean} sd {sd}");
        assert!(draws.acceptance_rate > 0.1 && draws.acceptance_rate < 0.6);
    }

    #[test]
    fn chain_is_deterministic() {
        let mut s = split_stream(2, 0);
        let x: Vec<f64> = (0..30).map(|_| s.uniform()).collect();
        let y: Vec<f64> = x.iter().map(|t| (0.8 * t).exp() + 0.1 * s.normal()).collect();
        let data = exp_data(x, y);
        let cfg = one_dim_config(200);
        let a = rksb_run(Arc::new(Exponential), &data, &cfg, &mut split_stream(5, 5)).unwrap();
        let b = rksb_run(Arc::new(Exponential), &data, &cfg, &mut split_stream(5, 5)).unwrap();
        assert_eq!(a, b);
    }
}
