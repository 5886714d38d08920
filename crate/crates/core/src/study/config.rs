//! Study configuration, read from a single JSON document.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{system_by_name, OdeSystem};
use crate::posterior::{Case, Method};
use crate::rksb::RksbConfig;
use crate::rktb::RktbConfig;
use crate::ts::TsConfig;

/// A scalar or a list in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub system: String,
    /// `θ₀` (well specified) or `τ₀` (misspecified).
    pub theta0: Vec<f64>,
    /// Defaults to every method that applies to `case`.
    pub method: Option<OneOrMany<Method>>,
    /// 1 = well specified, 2 = misspecified.
    pub case: u8,
    pub n: OneOrMany<usize>,
    pub replications: usize,
    pub draws_per_rep: usize,
    pub credible_level: f64,
    pub seed: u64,
    pub sigma0: f64,
    /// Fraction of failed replications above which a study is aborted.
    pub max_failure_rate: f64,
    pub rksb: RksbConfig,
    pub rktb: RktbConfig,
    pub ts: TsConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            system: "lotka_volterra".into(),
            theta0: vec![10.0; 4],
            method: None,
            case: 1,
            n: OneOrMany::Many(vec![100, 500]),
            replications: 100,
            draws_per_rep: 1000,
            credible_level: 0.95,
            seed: 2017,
            sigma0: 0.1,
            max_failure_rate: 0.1,
            rksb: RksbConfig::default(),
            rktb: RktbConfig::default(),
            ts: TsConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn system(&self) -> Result<Arc<dyn OdeSystem>> {
        system_by_name(&self.system)
    }

    pub fn case(&self) -> Result<Case> {
        Case::from_number(self.case)
    }

    /// Methods in canonical order, without duplicates.
    pub fn methods(&self) -> Vec<Method> {
        let mut m = match &self.method {
            Some(m) => m.to_vec(),
            None if self.case == 2 => vec![Method::Rksb, Method::Rktb],
            None => vec![Method::Rksb, Method::Rktb, Method::Ts],
        };
        m.sort();
        m.dedup();
        m
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.n.to_vec()
    }

    /// Method settings with the study-wide draw count applied.
    pub fn rksb_config(&self) -> RksbConfig {
        self.rksb.clone().with_draws(self.draws_per_rep)
    }

    pub fn rktb_config(&self) -> RktbConfig {
        RktbConfig { draws: self.draws_per_rep, ..self.rktb.clone() }
    }

    pub fn ts_config(&self) -> TsConfig {
        TsConfig { draws: self.draws_per_rep, ..self.ts.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let system = self.system()?;
        let case = self.case()?;
        let p = system.param_dim();
        if self.theta0.len() != p {
            return err(format!("theta0 has length {} but {} has {p} parameters", self.theta0.len(), self.system));
        }
        if self.methods().is_empty() || self.sample_sizes().is_empty() {
            return err("method and n must be non-empty".into());
        }
        if case == Case::Misspecified && self.methods().contains(&Method::Ts) {
            return err("the two-step method is only run on the well-specified case".into());
        }
        if self.sample_sizes().contains(&0) {
            return err("sample sizes must be positive".into());
        }
        if self.replications == 0 {
            return err("replications must be at least 1".into());
        }
        if self.draws_per_rep < crate::study::interval::MIN_DRAWS {
            return err(format!("draws_per_rep must be at least {}", crate::study::interval::MIN_DRAWS));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return err("credible_level must lie in (0, 1)".into());
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return err("sigma0 must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return err("max_failure_rate must lie in [0, 1]".into());
        }
        for m in self.methods() {
            match m {
                Method::Rksb => self.rksb_config().validate(p)?,
                Method::Rktb => {
                    let c = self.rktb_config();
                    c.projection.validate()?;
                    c.projection.domain_for(p)?;
                    c.sigma_prior.validate()?;
                }
                Method::Ts => {
                    let c = self.ts_config();
                    c.projection.validate()?;
                    c.projection.domain_for(p)?;
                    c.sigma_prior.validate()?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_and_lists_both_parse() {
        let a = StudyConfig::from_json(r#"{"method": "rktb", "n": 100, "replications": 3}"#).unwrap();
        assert_eq!(a.methods(), vec![Method::Rktb]);
        assert_eq!(a.sample_sizes(), vec![100]);
        let b = StudyConfig::from_json(r#"{"method": ["ts", "rksb"], "n": [100, 500]}"#).unwrap();
        assert_eq!(b.methods(), vec![Method::Rksb, Method::Ts]);
        assert_eq!(b.sample_sizes(), vec![100, 500]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(StudyConfig::from_json(r#"{"replicates": 3}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"rktb": {"projection": {"tolerance": 1e-3}}}"#).is_err());
    }

    #[test]
    fn nested_overrides_apply() {
        let c = StudyConfig::from_json(r#"{"draws_per_rep": 200, "rksb": {"burn_in": 100, "thin": 2}, "rktb": {"spline": {"knots": 9}}}"#).unwrap();
        assert_eq!(c.rksb_config().kept(), 200);
        assert_eq!(c.rktb_config().draws, 200);
        assert_eq!(c.rktb_config().spline.knots, Some(9));
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        assert!(StudyConfig::from_json(r#"{"case": 2, "method": "ts"}"#).is_err());
        assert_eq!(StudyConfig::from_json(r#"{"case": 2}"#).unwrap().methods(), vec![Method::Rksb, Method::Rktb]);
        assert!(StudyConfig::from_json(r#"{"case": 3}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"theta0": [1, 2]}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"credible_level": 1.5}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"replications": 0}"#).is_err());
    }
}
