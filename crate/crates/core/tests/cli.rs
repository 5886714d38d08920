use std::path::Path;
use std::process::{Command, Output};

fn odebayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odebayes")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n": 40, "draws_per_rep": 60, "seed": 9}"#);
    let data = dir.path().join("data.csv");
    let out = odebayes(&["simulate", "--config", path(&cfg), "--out", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next(), Some("x,y1,y2"));
    assert_eq!(text.lines().count(), 41);

    for method in ["rksb", "rktb", "ts"] {
        let draws = dir.path().join(format!("{method}.csv"));
        let out = odebayes(&["fit", "--method", method, "--data", path(&data), "--config", path(&cfg), "--out", path(&draws)]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(&draws).unwrap();
        assert_eq!(text.lines().next(), Some("draw,theta1,theta2,theta3,theta4,sigma2"));
        assert_eq!(text.lines().count(), 61, "{method}");
    }
}

#[test]
fn simulate_is_reproducible_and_rep_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n": 20}"#);
    let read = |name: &str, rep: &str| {
        let p = dir.path().join(name);
        assert!(odebayes(&["simulate", "--config", path(&cfg), "--out", path(&p), "--rep", rep]).status.success());
        std::fs::read(p).unwrap()
    };
    assert_eq!(read("a.csv", "1"), read("b.csv", "1"));
    assert_ne!(read("a.csv", "1"), read("c.csv", "2"));
}

#[test]
fn study_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"method": ["rktb", "ts"], "n": 50, "replications": 2, "draws_per_rep": 50}"#);
    let out_dir = dir.path().join("out");
    let out = odebayes(&["study", "--config", path(&cfg), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.csv", "results.md", "replications.csv", "timing.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 4);

    let csv = odebayes(&["report", "--in", path(&out_dir), "--format", "csv"]);
    assert_eq!(String::from_utf8(csv.stdout).unwrap(), results);
    let md = String::from_utf8(odebayes(&["report", "--in", path(&out_dir)]).stdout).unwrap();
    assert!(md.contains("| 50 | RKTB |") && md.contains("| 50 | TS |"), "{md}");
}

#[test]
fn diag_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"case": 2}"#);
    let out = odebayes(&["diag", "--config", path(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scaled_covariance"].as_array().unwrap().len(), 4);
    assert!(v["min_eigenvalue"].as_f64().unwrap() > 0.0);
    assert!(v["sigma_star_sq"].as_f64().unwrap() > v["sigma0_sq"].as_f64().unwrap());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    for json in [r#"{"replicates": 5}"#, r#"{"method": "ts", "case": 2}"#, r#"{"credible_level": 1.5}"#, "not json"] {
        let cfg = write_config(dir.path(), json);
        let out = odebayes(&["study", "--config", path(&cfg), "--out", path(&out_dir)]);
        assert_eq!(out.status.code(), Some(2), "{json}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn malformed_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "t,value\n0.5,1.0\n").unwrap();
    let out = odebayes(&["fit", "--method", "rktb", "--data", path(&data), "--out", path(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}
