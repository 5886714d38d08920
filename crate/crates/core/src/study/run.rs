//! Replication engine: simulate, fit, score intervals, aggregate.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{split_stream, RngStream};
use crate::ode::OdeSystem;
use crate::par::{map_indexed, Execution};
use crate::posterior::{Case, Dataset, Method, PosteriorDraws};
use crate::rksb::rksb_run;
use crate::rktb::rktb_run;
use crate::study::config::StudyConfig;
use crate::study::data::{generate_dataset, TruthCurve};
use crate::study::interval::equal_tailed_interval;
use crate::ts::ts_run;

/// Run `method` with the settings in `config`.
pub fn fit_method(method: Method, system: Arc<dyn OdeSystem>, data: &Dataset, config: &StudyConfig, stream: &mut RngStream) -> Result<PosteriorDraws> {
    match method {
        Method::Rksb => rksb_run(system, data, &config.rksb_config(), stream),
        Method::Rktb => rktb_run(system, data, &config.rktb_config(), stream),
        Method::Ts => ts_run(system, data, &config.ts_config(), stream),
    }
}

fn method_index(method: Method) -> u64 {
    match method {
        Method::Rksb => 0,
        Method::Rktb => 1,
        Method::Ts => 2,
    }
}

/// Streams for replication `rep` at sample size `n`: the dataset stream is
/// shared by all methods so that they see the same data.
pub fn replication_streams(seed: u64, rep: usize, n: usize, method: Method) -> (RngStream, RngStream) {
    let base = split_stream(seed, rep as u64).child(n as u64);
    (base.child(0), base.child(1 + method_index(method)))
}

/// Outcome of one replication for one method and sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub method: Method,
    pub n: usize,
    /// One-based replication index.
    pub rep: usize,
    /// `None` when the replication succeeded.
    pub error: Option<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub covered: Vec<bool>,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub acceptance_rate: f64,
    pub projection_failures: usize,
    pub max_relative_grad_norm: f64,
    pub elapsed_secs: f64,
}

impl ReplicationRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn length(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }
}

/// Coverage and interval length of one parameter for one method and sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub case: Case,
    pub n: usize,
    /// One-based parameter index.
    pub param: usize,
    pub coverage: f64,
    pub coverage_se: f64,
    pub avg_length: f64,
    pub length_se: f64,
    /// Replications excluded because the method failed.
    pub failures: usize,
    pub replications: usize,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub case: Case,
    /// Parameter the intervals were scored against.
    pub truth: Vec<f64>,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicationRecord>,
    /// Groups whose failure rate exceeded the threshold.
    pub aborted: Vec<String>,
    pub wall_secs: f64,
}

impl StudyResult {
    pub fn rows_for(&self, method: Method, n: usize) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.method == method && r.n == n).collect()
    }

    pub fn records_for(&self, method: Method, n: usize) -> Vec<&ReplicationRecord> {
        self.records.iter().filter(|r| r.method == method && r.n == n).collect()
    }

    pub fn failure_rate(&self, method: Method, n: usize) -> f64 {
        let recs = self.records_for(method, n);
        recs.iter().filter(|r| !r.succeeded()).count() as f64 / recs.len().max(1) as f64
    }
}

fn run_replication(config: &StudyConfig, system: &Arc<dyn OdeSystem>, truth: &TruthCurve, target: &[f64], method: Method, n: usize, rep: usize) -> ReplicationRecord {
    let start = Instant::now();
    let p = target.len();
    let mut record = ReplicationRecord {
        method,
        n,
        rep,
        error: None,
        lower: vec![f64::NAN; p],
        upper: vec![f64::NAN; p],
        covered: vec![false; p],
        posterior_mean: vec![f64::NAN; p],
        posterior_sd: vec![f64::NAN; p],
        acceptance_rate: 0.0,
        projection_failures: 0,
        max_relative_grad_norm: 0.0,
        elapsed_secs: 0.0,
    };
    let (mut data_stream, mut method_stream) = replication_streams(config.seed, rep, n, method);
    let outcome = generate_dataset(truth, n, config.sigma0, &mut data_stream).and_then(|data| fit_method(method, system.clone(), &data, config, &mut method_stream));
    match outcome {
        Ok(draws) if draws.flagged => record.error = Some(format!("projection failure rate {:.3} over threshold", draws.failure_rate())),
        Ok(draws) if draws.len() < crate::study::interval::MIN_DRAWS => record.error = Some(format!("only {} usable draws", draws.len())),
        Ok(draws) => {
            record.acceptance_rate = draws.acceptance_rate;
            record.projection_failures = draws.failures;
            record.max_relative_grad_norm = draws.max_relative_grad_norm;
            record.posterior_mean = draws.mean();
            record.posterior_sd = draws.sd();
            for j in 0..p {
                match equal_tailed_interval(&draws.column(j), config.credible_level) {
                    Ok((lo, hi)) => {
                        record.lower[j] = lo;
                        record.upper[j] = hi;
                        record.covered[j] = lo <= target[j] && target[j] <= hi;
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.elapsed_secs = start.elapsed().as_secs_f64();
    record
}

fn summarize(case: Case, method: Method, n: usize, records: &[&ReplicationRecord], p: usize) -> Vec<SummaryRow> {
    let ok: Vec<&&ReplicationRecord> = records.iter().filter(|r| r.succeeded()).collect();
    let r = ok.len() as f64;
    (0..p)
        .map(|j| {
            let (coverage, coverage_se, avg_length, length_se) = if ok.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let cov = ok.iter().filter(|x| x.covered[j]).count() as f64 / r;
                let lengths: Vec<f64> = ok.iter().map(|x| x.length(j)).collect();
                let mean = lengths.iter().sum::<f64>() / r;
                let sd = if ok.len() > 1 { (lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() } else { 0.0 };
                (cov, (cov * (1.0 - cov) / r).sqrt(), mean, sd / r.sqrt())
            };
            SummaryRow {
                method,
                case,
                n,
                param: j + 1,
                coverage,
                coverage_se,
                avg_length,
                length_se,
                failures: records.len() - ok.len(),
                replications: records.len(),
            }
        })
        .collect()
}

/// Run every (sample size, method, replication) combination in `config`.
/// Replications run in parallel; results are ordered by sample size, method
/// and replication index regardless of scheduling.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    run_study_with(config, Execution::default())
}

/// [`run_study`] with an explicit schedule. Results do not depend on it.
pub fn run_study_with(config: &StudyConfig, exec: Execution) -> Result<StudyResult> {
    config.validate()?;
    let start = Instant::now();
    let system = config.system()?;
    let case = config.case()?;
    let truth = TruthCurve::new(system.clone(), &config.theta0, case)?;
    let domain = config.rktb_config().projection.domain_for(system.param_dim())?;
    let target = truth.target_theta(&domain)?;
    let p = target.len();

    let mut jobs = Vec::new();
    for &n in &config.sample_sizes() {
        for &m in &config.methods() {
            for rep in 1..=config.replications {
                jobs.push((n, m, rep));
            }
        }
    }
    let records = map_indexed(jobs.len(), exec, |i| {
        let (n, m, rep) = jobs[i];
        let rec = run_replication(config, &system, &truth, &target, m, n, rep);
        log::info!("{} n={} rep={} done in {:.2}s{}", m, n, rep, rec.elapsed_secs, rec.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default());
        rec
    });

    let mut rows = Vec::new();
    let mut aborted = Vec::new();
    for &n in &config.sample_sizes() {
        for &m in &config.methods() {
            let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m && r.n == n).collect();
            let failed = group.iter().filter(|r| !r.succeeded()).count();
            if failed as f64 > config.max_failure_rate * group.len() as f64 {
                aborted.push(format!("{} n={}: {failed} of {} replications failed", m.label(), n, group.len()));
            }
            rows.extend(summarize(case, m, n, &group, p));
        }
    }
    Ok(StudyResult { case, truth: target, rows, records, aborted, wall_secs: start.elapsed().as_secs_f64() })
}

/// Error describing aborted groups, if any.
pub fn check_aborted(result: &StudyResult) -> Result<()> {
    if result.aborted.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("replication failures over threshold: {}", result.aborted.join("; "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(covered: bool, lo: f64, hi: f64, error: Option<&str>) -> ReplicationRecord {
        ReplicationRecord {
            method: Method::Rktb,
            n: 10,
            rep: 1,
            error: error.map(str::to_string),
            lower: vec![lo],
            upper: vec![hi],
            covered: vec![covered],
            posterior_mean: vec![0.0],
            posterior_sd: vec![0.0],
            acceptance_rate: 1.0,
            projection_failures: 0,
            max_relative_grad_norm: 0.0,
            elapsed_secs: 0.0,
        }
    }

    #[test]
    fn summary_uses_successful_replications_only() {
        let recs = [record(true, 0.0, 1.0, None), record(false, 0.0, 3.0, None), record(true, 0.0, 2.0, None), record(true, 0.0, 100.0, Some("boom"))];
        let refs: Vec<&ReplicationRecord> = recs.iter().collect();
        let row = &summarize(Case::WellSpecified, Method::Rktb, 10, &refs, 1)[0];
        assert!((row.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert!((row.coverage_se - ((2.0 / 3.0) * (1.0 / 3.0) / 3.0f64).sqrt()).abs() < 1e-15);
        assert!((row.avg_length - 2.0).abs() < 1e-15);
        assert!((row.length_se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!((row.failures, row.replications), (1, 4));
    }

    #[test]
    fn streams_are_shared_across_methods_for_data() {
        let (a, _) = replication_streams(1, 2, 100, Method::Rksb);
        let (b, _) = replication_streams(1, 2, 100, Method::Ts);
        assert_eq!(a, b);
        let (_, c) = replication_streams(1, 2, 100, Method::Rktb);
        let (_, d) = replication_streams(1, 2, 100, Method::Ts);
        assert_ne!(c, d);
    }
}
