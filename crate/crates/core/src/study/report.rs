//! CSV and Markdown output for study results.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::study::run::{StudyResult, SummaryRow};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const TIMING_CSV: &str = "timing.csv";

/// One line of `results.csv`, already formatted: coverage in percent with one
/// decimal, lengths with two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub method: String,
    pub case: u8,
    pub n: usize,
    pub param: String,
    pub coverage: String,
    pub coverage_se: String,
    pub avg_length: String,
    pub length_se: String,
    pub failures: usize,
}

impl From<&SummaryRow> for ResultLine {
    fn from(r: &SummaryRow) -> Self {
        Self {
            method: r.method.label().to_string(),
            case: r.case.number(),
            n: r.n,
            param: format!("theta{}", r.param),
            coverage: format!("{:.1}", 100.0 * r.coverage),
            coverage_se: format!("{:.1}", 100.0 * r.coverage_se),
            avg_length: format!("{:.2}", r.avg_length),
            length_se: format!("{:.2}", r.length_se),
            failures: r.failures,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv: {other:?}")),
    }
}

pub fn result_lines(result: &StudyResult) -> Vec<ResultLine> {
    result.rows.iter().map(ResultLine::from).collect()
}

pub fn results_csv(lines: &[ResultLine]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in lines {
        w.serialize(l).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultLine>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|l| l.map_err(csv_err)).collect()
}

/// Tables with one row per method and sample size and, per parameter,
/// `coverage (se)` and `length (se)` columns.
pub fn results_markdown(lines: &[ResultLine]) -> String {
    let mut out = String::new();
    let mut cases: Vec<u8> = lines.iter().map(|l| l.case).collect();
    cases.dedup();
    for case in cases {
        let title = if case == 1 { "well-specified" } else { "misspecified" };
        let _ = writeln!(out, "### Case {case} ({title})\n");
        let case_lines: Vec<&ResultLine> = lines.iter().filter(|l| l.case == case).collect();
        let mut params: Vec<&str> = Vec::new();
        for l in &case_lines {
            if !params.contains(&l.param.as_str()) {
                params.push(&l.param);
            }
        }
        let _ = write!(out, "| n | Method |");
        for p in &params {
            let _ = write!(out, " {p} coverage | {p} length |");
        }
        let _ = write!(out, " failures |\n|---|---|");
        for _ in &params {
            let _ = write!(out, "---|---|");
        }
        let _ = writeln!(out, "---|");
        let mut groups: Vec<(usize, &str)> = Vec::new();
        for l in &case_lines {
            if !groups.contains(&(l.n, l.method.as_str())) {
                groups.push((l.n, &l.method));
            }
        }
        for (n, method) in groups {
            let _ = write!(out, "| {n} | {method} |");
            let mut failures = 0;
            for p in &params {
                match case_lines.iter().find(|l| l.n == n && l.method == method && l.param == *p) {
                    Some(l) => {
                        failures = l.failures;
                        let _ = write!(out, " {} ({}) | {} ({}) |", l.coverage, l.coverage_se, l.avg_length, l.length_se);
                    }
                    None => {
                        let _ = write!(out, " | |");
                    }
                }
            }
            let _ = writeln!(out, " {failures} |");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct ReplicationLine {
    method: &'static str,
    n: usize,
    rep: usize,
    param: usize,
    lower: f64,
    upper: f64,
    covered: bool,
    posterior_mean: f64,
    posterior_sd: f64,
    acceptance_rate: f64,
    projection_failures: usize,
    max_relative_grad_norm: f64,
    error: String,
}

pub fn replications_csv(result: &StudyResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &result.records {
        for j in 0..r.lower.len() {
            w.serialize(ReplicationLine {
                method: r.method.label(),
                n: r.n,
                rep: r.rep,
                param: j + 1,
                lower: r.lower[j],
                upper: r.upper[j],
                covered: r.covered[j],
                posterior_mean: r.posterior_mean[j],
                posterior_sd: r.posterior_sd[j],
                acceptance_rate: r.acceptance_rate,
                projection_failures: r.projection_failures,
                max_relative_grad_norm: r.max_relative_grad_norm,
                error: r.error.clone().unwrap_or_default(),
            })
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

fn timing_csv(result: &StudyResult) -> String {
    let mut out = String::from("method,n,rep,elapsed_secs\n");
    for r in &result.records {
        let _ = writeln!(out, "{},{},{},{:.4}", r.method.label(), r.n, r.rep, r.elapsed_secs);
    }
    let _ = writeln!(out, "total,,,{:.4}", result.wall_secs);
    out
}

/// Write results, Markdown tables, per-replication records and timings to `dir`.
/// Everything except the timing file is a deterministic function of the config.
pub fn write_study_outputs(result: &StudyResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let lines = result_lines(result);
    std::fs::write(dir.join(RESULTS_CSV), results_csv(&lines)?)?;
    std::fs::write(dir.join(RESULTS_MD), results_markdown(&lines))?;
    std::fs::write(dir.join(REPLICATIONS_CSV), replications_csv(result)?)?;
    std::fs::write(dir.join(TIMING_CSV), timing_csv(result))?;
    Ok(())
}
