//! Shared driver for posteriors induced on `θ` by mapping spline-curve
//! draws through a minimization (RKTB projection, two-step matching).

use nalgebra::DMatrix;

use crate::error::Result;
use crate::numerics::{BoxDomain, Minimum, RngStream};
use crate::posterior::{Method, PosteriorDraws};
use crate::spline::{CurveDraw, CurvePosterior};

pub(crate) struct InducedSettings<'a> {
    pub method: Method,
    pub draws: usize,
    pub domain: &'a BoxDomain,
    pub multistarts: usize,
    pub max_failure_rate: f64,
}

fn usable(m: &Minimum) -> bool {
    m.converged && m.value.is_finite()
}

/// Best converged minimum over uniform random starts in the box.
pub(crate) fn multistart<P>(curve: &CurveDraw, domain: &BoxDomain, starts: usize, stream: &mut RngStream, project: &P) -> Option<Minimum>
where
    P: Fn(&CurveDraw, &[f64]) -> Result<Minimum>,
{
    let mut best: Option<Minimum> = None;
    for _ in 0..starts {
        let start: Vec<f64> = domain.lower().iter().zip(domain.upper()).map(|(l, u)| stream.uniform_in(*l, *u)).collect();
        if let Ok(m) = project(curve, &start) {
            if usable(&m) && best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
    }
    best
}

/// Project the posterior-mean curve from `initial`, falling back to multistart.
pub(crate) fn mean_curve_estimate<P>(posterior: &CurvePosterior, initial: &[f64], settings: &InducedSettings<'_>, stream: &RngStream, project: &P) -> Option<Minimum>
where
    P: Fn(&CurveDraw, &[f64]) -> Result<Minimum>,
{
    let mean = posterior.mean_draw();
    match project(&mean, initial) {
        Ok(m) if usable(&m) => Some(m),
        _ => multistart(&mean, settings.domain, settings.multistarts, &mut stream.child(u64::MAX), project),
    }
}

/// Draw curves sequentially from `stream` and map each to `θ`, warm-starting
/// at the previous accepted value.
pub(crate) fn run_induced<P>(
    posterior: &CurvePosterior,
    settings: &InducedSettings<'_>,
    initial: &[f64],
    stream: &mut RngStream,
    project: P,
) -> PosteriorDraws
where
    P: Fn(&CurveDraw, &[f64]) -> Result<Minimum>,
{
    let p = initial.len();
    let mut warnings = Vec::new();
    let mut warm = match mean_curve_estimate(posterior, initial, settings, stream, &project) {
        Some(m) => m.argmin,
        None => {
            warnings.push("projection of the posterior-mean curve failed; warm start uses the initial point".to_string());
            initial.to_vec()
        }
    };

    let mut theta = Vec::with_capacity(settings.draws * p);
    let mut sigma2 = Vec::with_capacity(settings.draws);
    let mut failures = 0;
    let mut max_rel: f64 = 0.0;
    let root = stream.clone();
    for i in 0..settings.draws {
        let draw = posterior.sample(stream);
        let outcome = match project(&draw, &warm) {
            Ok(m) if usable(&m) => Some(m),
            _ => multistart(&draw, settings.domain, settings.multistarts, &mut root.child(i as u64), &project),
        };
        match outcome {
            Some(m) => {
                max_rel = max_rel.max(m.grad_norm / (1.0 + m.value.abs()));
                theta.extend_from_slice(&m.argmin);
                sigma2.push(draw.sigma2);
                warm = m.argmin;
            }
            None => failures += 1,
        }
    }
    let kept = sigma2.len();
    let failure_rate = if settings.draws == 0 { 0.0 } else { failures as f64 / settings.draws as f64 };
    let flagged = failure_rate > settings.max_failure_rate;
    if flagged {
        warnings.push(format!("projection failure rate {:.1}% exceeds threshold", 100.0 * failure_rate));
    }
    PosteriorDraws {
        method: settings.method,
        theta: DMatrix::from_row_slice(kept, p, &theta),
        sigma2,
        acceptance_rate: 1.0 - failure_rate,
        seed: root.seed(),
        stream_id: root.stream_id(),
        failures,
        attempted: settings.draws,
        flagged,
        max_relative_grad_norm: max_rel,
        warnings,
    }
}
