//! Types shared by the three posterior constructions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rksb,
    Rktb,
    Ts,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rksb => "rksb",
            Method::Rktb => "rktb",
            Method::Ts => "ts",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Rksb => "RKSB",
            Method::Rktb => "RKTB",
            Method::Ts => "TS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rksb" => Ok(Method::Rksb),
            "rktb" => Ok(Method::Rktb),
            "ts" => Ok(Method::Ts),
            other => Err(Error::Config(format!("unknown method '{other}' (expected rksb, rktb or ts)"))),
        }
    }
}

/// Simulation case: the regression function is an ODE solution (well
/// specified) or a perturbation of one (misspecified).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    WellSpecified,
    Misspecified,
}

impl Case {
    pub fn number(self) -> u8 {
        match self {
            Case::WellSpecified => 1,
            Case::Misspecified => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Case::WellSpecified),
            2 => Ok(Case::Misspecified),
            other => Err(Error::Config(format!("case must be 1 or 2, got {other}"))),
        }
    }
}

/// Inverse-gamma prior on the error variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for SigmaPrior {
    fn default() -> Self {
        Self { shape: 30.0, scale: 5.0 }
    }
}

impl SigmaPrior {
    pub fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.scale > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("σ² prior needs positive shape and scale, got {self:?}")))
        }
    }
}

/// Observations `(x_i, y_i)`, `y` is `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: DMatrix<f64>,
    /// Parameter the credible intervals are scored against, when known.
    pub truth_theta: Option<Vec<f64>>,
    pub case: Option<Case>,
    pub sigma0: Option<f64>,
    pub seed: Option<(u64, u64)>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: DMatrix<f64>) -> Result<Self> {
        let ds = Self { x, y, truth_theta: None, case: None, sigma0: None, seed: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.nrows() != self.x.len() {
            return Err(Error::Data(format!("{} design points but {} responses", self.x.len(), self.y.nrows())));
        }
        if self.x.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Data("design points must lie in [0, 1]".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("responses must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn response_dim(&self) -> usize {
        self.y.ncols()
    }
}

/// Posterior sample of `θ` (rows) and `σ²`, with sampler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub method: Method,
    /// `M × p`
    pub theta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// Metropolis acceptance rate (RKSB) or fraction of successful projections.
    pub acceptance_rate: f64,
    pub seed: u64,
    pub stream_id: u64,
    /// Draws discarded because the projection failed.
    pub failures: usize,
    pub attempted: usize,
    /// Failure rate exceeded the configured threshold.
    pub flagged: bool,
    /// Largest projected-gradient norm relative to `1 + |objective|` over converged projections.
    pub max_relative_grad_norm: f64,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.nrows() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.theta.column(j).iter().copied().collect()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempted as f64
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.param_dim()).map(|j| self.theta.column(j).mean()).collect()
    }

    /// Sample standard deviation per parameter.
    pub fn sd(&self) -> Vec<f64> {
        let m = self.len() as f64;
        (0..self.param_dim())
            .map(|j| {
                let col = self.theta.column(j);
                let mu = col.mean();
                (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1.0)).sqrt()
            })
            .collect()
    }

    /// Sample covariance, `p × p`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.len();
        let p = self.param_dim();
        let mean = self.mean();
        let mut cov = DMatrix::zeros(p, p);
        for r in 0..m {
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += (self.theta[(r, a)] - mean[a]) * (self.theta[(r, b)] - mean[b]);
                }
            }
        }
        cov / (m as f64 - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_round_trip() {
        for m in [Method::Rksb, Method::Rktb, Method::Ts] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("mcmc".parse::<Method>().is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![0.1, 0.5], DMatrix::zeros(2, 2)).is_ok());
        assert!(Dataset::new(vec![0.1, 1.5], DMatrix::zeros(2, 1)).is_err());
        assert!(Dataset::new(vec![0.1], DMatrix::zeros(2, 1)).is_err());
        assert!(Dataset::new(vec![0.1], DMatrix::from_element(1, 1, f64::INFINITY)).is_err());
    }

    #[test]
    fn summary_statistics() {
        let theta = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let draws = PosteriorDraws {
            method: Method::Rktb,
            theta,
            sigma2: vec![1.0; 4],
            acceptance_rate: 1.0,
            seed: 0,
            stream_id: 0,
            failures: 1,
            attempted: 5,
            flagged: false,
            max_relative_grad_norm: 0.0,
            warnings: vec![],
        };
        assert_eq!(draws.mean(), vec![2.5, 5.0]);
        let cov = draws.covariance();
        assert!((cov[(0, 0)] - 5.0 / 3.0).abs() < 1e-12);
        assert!((cov[(0, 1)] - 10.0 / 3.0).abs() < 1e-12);
        assert!((draws.sd()[1] - (20.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((draws.failure_rate() - 0.2).abs() < 1e-15);
    }
}
