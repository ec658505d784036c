//! End-to-end runs of the `ubsr` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use ubsr::experiments::portfolio::PortfolioReport;
use ubsr::experiments::{SweepReport, VarCvarReport};
use ubsr::optimization::SGTrace;

fn ubsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubsr")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn estimate_entropic_from_distribution() {
    let out = ubsr(&[
        "estimate", "--risk", "entropic-ubsr", "--beta", "0.5", "--dist", "gaussian:-1,4", "--m", "10000", "--seed", "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out)["value"].as_f64().unwrap();
    assert!((v - 2.0).abs() < 0.1, "{v}");
}

#[test]
fn estimate_cvar_and_var_from_sample_files() {
    let dir = tempfile::tempdir().unwrap();
    let hundred: String = (1..=100).map(|i| format!("{i}\n")).collect();
    let f = write(dir.path(), "h.csv", &format!("outcome\n{hundred}"));
    let out = ubsr(&["estimate", "--risk", "cvar", "--alpha", "0.95", "--samples", &f]);
    assert_eq!(out.status.code(), Some(0));
    // mean of the five smallest outcomes, negated; δ = 0.1
    let v = json_of(&out)["value"].as_f64().unwrap();
    assert!((v + 3.0).abs() <= 0.2, "{v}");

    let f = write(dir.path(), "four.csv", "1\n2\n3\n4\n");
    let out = ubsr(&["estimate", "--risk", "var", "--alpha", "0.5", "--samples", &f, "--delta", "0.001"]);
    let v = json_of(&out)["value"].as_f64().unwrap();
    assert!((v + 3.0).abs() <= 0.002, "{v}");

    let out = ubsr(&[
        "estimate",
        "--risk",
        r#"{"measure":"ubsr","spec":{"kind":"heaviside","lambda":0.5}}"#,
        "--samples",
        &f,
        "--delta",
        "0.001",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json_of(&out)["value"].as_f64().unwrap() + 3.0).abs() <= 0.002);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let four = write(dir.path(), "four.csv", "1\n2\n3\n4\n");
    // usage and I/O
    assert_eq!(ubsr(&["estimate", "--risk", "bogus", "--samples", &four]).status.code(), Some(1));
    assert_eq!(ubsr(&["estimate", "--risk", "var"]).status.code(), Some(1));
    assert_eq!(ubsr(&["estimate", "--risk", "var", "--samples", "/no/such/file"]).status.code(), Some(1));
    let bad = write(dir.path(), "bad.csv", "1\n2\nthree\n");
    let out = ubsr(&["estimate", "--risk", "var", "--samples", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    // an unattainable residual is a warning
    let out = ubsr(&["estimate", "--risk", "cvar:alpha=0.6", "--epsilon", "0.1", "--delta", "0.001", "--samples", &four]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_of(&out)["estimate"]["converged"], Value::Bool(false));
    // overflowing losses abort numerically
    let huge = write(dir.path(), "huge.csv", "1e300\n-1e300\n");
    assert_eq!(ubsr(&["estimate", "--risk", "entropic-ubsr:beta=5", "--samples", &huge]).status.code(), Some(3));
    assert_eq!(ubsr(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_estimation_artifacts_round_trip_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "sweep-estimation", "--risk", "entropic-oce", "--dist", "gaussian:-1,4", "--m-list", "10,100,1000", "--fast", "--raw",
        "--no-timestamp", "-o", d,
    ];
    let first = ubsr(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let summary = json_of(&first);
    assert_eq!(summary["truth"].as_f64().unwrap(), 2.0);
    assert_eq!(summary["truth_source"], "closed_form");
    let slope = summary["mae_fit"]["slope"].as_f64().unwrap();
    assert!((-0.8..=-0.2).contains(&slope), "{slope}");

    let csv = fs::read(dir.path().join("sweep_estimation.csv")).unwrap();
    let rows = SweepReport::read_rows(csv.as_slice()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.reps == 100));
    assert_eq!(serde_json::to_value(&rows).unwrap(), summary["rows"]);
    let raw = fs::read(dir.path().join("sweep_estimation_raw.csv")).unwrap();
    assert_eq!(ubsr::experiments::sweeps::read_raw(raw.as_slice()).unwrap().len(), 300);

    let second = ubsr(&args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(csv, fs::read(dir.path().join("sweep_estimation.csv")).unwrap());

    assert_eq!(ubsr(&["sweep-estimation", "--risk", "var", "--dist", "point:1", "--reps", "5", "-o", d]).status.code(), Some(1));
    assert_eq!(
        ubsr(&["sweep-estimation", "--risk", "var", "--dist", "point:1", "--m-list", "100,10", "--fast", "-o", d])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn timestamp_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let base = ["sweep-estimation", "--risk", "var", "--dist", "point:1", "--m-list", "10,100", "--fast", "-o", d];
    let with = json_of(&ubsr(&base));
    assert!(with.get("timestamp_unix").is_some() && with.get("wall_clock_seconds").is_some());
    let mut args = base.to_vec();
    args.push("--no-timestamp");
    let without = json_of(&ubsr(&args));
    assert!(without.get("timestamp_unix").is_none());
}

#[test]
fn var_cvar_sweep_on_point_mass() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ubsr(&[
        "var-cvar-sweep", "--dist", "point:0.5", "--n-alphas", "5", "--m-list", "10,100", "--fast", "--no-timestamp", "-o", d,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = VarCvarReport::read_rows(fs::read(dir.path().join("var_cvar_sweep.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(rows.len(), 10);
    for r in rows {
        let delta = 1.0 / (r.m as f64).sqrt();
        assert!(r.max_abs_var_error <= 2.0 * delta && r.max_abs_cvar_error <= 2.0 * delta, "{r:?}");
    }
}

#[test]
fn optimize_reaches_reference_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ubsr(&["optimize", "--risk", "entropic-oce", "--horizon", "200", "--no-timestamp", "-o", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json_of(&out);
    let initial = s["initial_err_sq"].as_f64().unwrap();
    let last = s["final_err_sq"].as_f64().unwrap();
    assert!(last < initial / 10.0, "{last} vs {initial}");
    let trace = SGTrace::read_csv(fs::File::open(dir.path().join("optimize_trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.records.len(), 200);
    assert!(trace.records.iter().all(|r| r.err_sq.is_some()));

    // a saved configuration reproduces the run
    let cfg = write(dir.path(), "cfg.json", &s["config"].to_string());
    let again = ubsr(&["optimize", "--config", &cfg, "--no-timestamp", "-o", d]);
    assert_eq!(out.stdout, again.stdout);

    let study = ubsr(&["optimize", "--horizon", "80", "--rate-study", "--fast", "--no-timestamp", "-o", d]);
    let s = json_of(&study);
    assert_eq!(s["rate_study"]["seeds"], 10);
    assert_eq!(s["rate_study"]["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn portfolio_dominance_single_asset_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // asset A beats asset B by 0.01 every period
    let mut body = String::from("date,A,B\n");
    for i in 0..40 {
        let b = [-0.02, 0.01, 0.03, -0.01, 0.0][i % 5];
        body.push_str(&format!("2024-01-{:02},{},{}\n", (i % 28) + 1, b + 0.01, b));
    }
    let f = write(dir.path(), "ret.csv", &body);
    let out = ubsr(&[
        "portfolio", "--returns", &f, "--risk", "entropic-ubsr", "--risk", "cvar:alpha=0.9", "--risk", "mmv", "--horizon", "100",
        "--no-timestamp", "-o", d,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json_of(&out);
    for e in s["entries"].as_array().unwrap() {
        let w: Vec<f64> = serde_json::from_value(e["weights"].clone()).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if e["name"] == "equal_weight" {
            assert_eq!(w, vec![0.5, 0.5]);
        } else {
            assert!(w[0] >= 0.5, "{}: {w:?}", e["name"]);
        }
    }
    let report = PortfolioReport::read_csv(
        fs::File::open(dir.path().join("portfolio_weights.csv")).unwrap(),
        fs::File::open(dir.path().join("portfolio_cumulative.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(report.tickers, vec!["A", "B"]);
    assert_eq!(report.entries.len(), 5);

    let single = write(dir.path(), "one.csv", "date,X\n2024-01-01,0.01\n2024-01-02,-0.02\n2024-01-03,0.03\n");
    let out = ubsr(&["portfolio", "--returns", &single, "--risk", "entropic-oce", "--horizon", "20", "-o", d]);
    for e in json_of(&out)["entries"].as_array().unwrap() {
        assert_eq!(e["weights"], serde_json::json!([1.0]));
    }

    let broken = write(dir.path(), "broken.csv", "date,A\n2024-01-01,0.1\n2024-13-01,0.2\n");
    let out = ubsr(&["portfolio", "--returns", &broken, "--risk", "var", "-o", d]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
