use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use odebayes::numerics::split_stream;
use odebayes::study::report::{read_results_csv, results_csv, results_markdown, RESULTS_CSV};
use odebayes::study::{asymptotic_diagnostics, check_aborted, fit_method, generate_dataset, run_study, write_study_outputs, StudyConfig, TruthCurve};
use odebayes::{Case, Dataset, Error, Method, PosteriorDraws, Result};

#[derive(Parser)]
#[command(name = "odebayes", version, about = "Bayesian parameter estimation for ODE regression models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset from the study model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replication whose data stream is used.
        #[arg(long, default_value_t = 1)]
        rep: usize,
    },
    /// Fit one method to a data file and write the posterior draws.
    Fit {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the replication study.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary table of a finished study.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
    /// Print the asymptotic covariance diagnostics as JSON.
    Diag {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig> {
    match path {
        Some(p) => StudyConfig::load(p),
        None => Ok(StudyConfig::default()),
    }
}

fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let d = data.response_dim();
    let mut out = String::from("x");
    for c in 1..=d {
        let _ = write!(out, ",y{c}");
    }
    out.push('\n');
    for i in 0..data.len() {
        let _ = write!(out, "{:?}", data.x[i]);
        for c in 0..d {
            let _ = write!(out, ",{:?}", data.y[(i, c)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    let d = headers.len().saturating_sub(1);
    if headers.get(0) != Some("x") || d == 0 || (1..=d).any(|c| headers.get(c) != Some(format!("y{c}").as_str())) {
        return Err(Error::Data(format!("expected header x,y1,...,yd in {}", path.display())));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Data(format!("line {}: cannot parse '{s}'", line + 2)));
        x.push(parse(&rec[0])?);
        for c in 1..=d {
            y.push(parse(&rec[c])?);
        }
    }
    Dataset::new(x.clone(), DMatrix::from_row_slice(x.len(), d, &y))
}

fn write_draws(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    let p = draws.param_dim();
    let mut out = String::from("draw");
    for j in 1..=p {
        let _ = write!(out, ",theta{j}");
    }
    out.push_str(",sigma2\n");
    for i in 0..draws.len() {
        let _ = write!(out, "{}", i + 1);
        for j in 0..p {
            let _ = write!(out, ",{:?}", draws.theta[(i, j)]);
        }
        let _ = writeln!(out, ",{:?}", draws.sigma2[i]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, rep } => {
            let cfg = StudyConfig::load(&config)?;
            let n = cfg.sample_sizes()[0];
            let truth = TruthCurve::new(cfg.system()?, &cfg.theta0, cfg.case()?)?;
            let (mut stream, _) = odebayes::study::run::replication_streams(cfg.seed, rep, n, Method::Rksb);
            let data = generate_dataset(&truth, n, cfg.sigma0, &mut stream)?;
            write_dataset(&data, &out)
        }
        Command::Fit { method, data, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = read_dataset(&data)?;
            let draws = fit_method(method, cfg.system()?, &data, &cfg, &mut split_stream(cfg.seed, 0))?;
            for w in &draws.warnings {
                log::warn!("{w}");
            }
            write_draws(&draws, &out)?;
            if draws.flagged {
                return Err(Error::Numerical(format!("projection failure rate {:.3} over threshold", draws.failure_rate())));
            }
            Ok(())
        }
        Command::Study { config, out } => {
            let cfg = StudyConfig::load(&config)?;
            let result = run_study(&cfg)?;
            write_study_outputs(&result, &out)?;
            log::info!("study finished in {:.1}s", result.wall_secs);
            check_aborted(&result)
        }
        Command::Report { input, format } => {
            let lines = read_results_csv(&input.join(RESULTS_CSV))?;
            match format {
                Format::Csv => print!("{}", results_csv(&lines)?),
                Format::Md => print!("{}", results_markdown(&lines)),
            }
            Ok(())
        }
        Command::Diag { config } => {
            let cfg = StudyConfig::load(&config)?;
            let system = cfg.system()?;
            let truth = TruthCurve::new(system.clone(), &cfg.theta0, cfg.case()?)?;
            let domain = cfg.rktb_config().projection.domain_for(system.param_dim())?;
            let theta0 = truth.target_theta(&domain)?;
            let f0 = |t: f64| truth.eval(t);
            let misspecified: Option<&dyn Fn(f64) -> Result<Vec<f64>>> = if truth.case() == Case::Misspecified { Some(&f0) } else { None };
            let diag = asymptotic_diagnostics(system.as_ref(), &theta0, misspecified, cfg.rktb.projection.weight, cfg.sigma0 * cfg.sigma0)?;
            println!("{}", serde_json::to_string_pretty(&diag.to_json())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                Error::Numerical(_) | Error::Divergence { .. } | Error::Singular(_) | Error::NonFiniteIntegrand { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
