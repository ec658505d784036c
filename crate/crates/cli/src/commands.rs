use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use ubsr::estimation::{oce_saa, ubsr_sb, BisectionConfig, SampleBatch};
use ubsr::experiments::optimize::OptimizeConfig;
use ubsr::experiments::portfolio::NamedRisk;
use ubsr::experiments::sweeps::{alpha_grid, reference_value};
use ubsr::experiments::{
    read_returns, read_samples, run_optimize, run_portfolio, sg_rate_study, sweep_estimation, var_cvar_sweep,
    PortfolioConfig, ReturnKind, ScenarioSpec, SweepConfig,
};
use ubsr::optimization::{ProjectionSpec, RiskKind, SGConfig};
use ubsr::scenarios::{noise_rng, SYNTHETIC_MATRIX_SEED, SYNTHETIC_RIDGE};

use crate::risk_arg::parse_risk;
use crate::{
    EstimateArgs, Failure, OptimizeArgs, OutputArgs, PortfolioArgs, PriceKind, Status, SweepArgs, VarCvarArgs,
};

const MIN_REPS: usize = 30;
const DEFAULT_REPS: usize = 1000;
const FAST_REPS: usize = 100;
const DEFAULT_SEEDS: usize = 50;
const FAST_SEEDS: usize = 10;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| io_failure(path, e))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_failure(&path, e))
}

/// Write the summary next to the artifacts and echo it on stdout.
fn finish(mut summary: Value, out: &OutputArgs, name: &str, start: Instant) -> Result<(), Failure> {
    if !out.no_timestamp {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        summary["timestamp_unix"] = json!(now);
        summary["wall_clock_seconds"] = json!(start.elapsed().as_secs_f64());
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::create_dir_all(&out.out_dir).map_err(|e| io_failure(&out.out_dir, e))?;
    let path = out.out_dir.join(name);
    fs::write(&path, format!("{text}\n")).map_err(|e| io_failure(&path, e))?;
    emit(&text);
    Ok(())
}

/// Print to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn status(warnings: Vec<String>) -> Status {
    if warnings.is_empty() {
        Status::Clean
    } else {
        Status::Warnings(warnings.join("; "))
    }
}

fn repetitions(reps: Option<usize>, fast: bool) -> Result<usize, Failure> {
    let reps = reps.unwrap_or(if fast { FAST_REPS } else { DEFAULT_REPS });
    if reps < MIN_REPS {
        return Err(Failure::usage(format!("--reps must be at least {MIN_REPS}, got {reps}")));
    }
    Ok(reps)
}

pub fn estimate(a: EstimateArgs) -> Result<Status, Failure> {
    let risk = parse_risk(&a.risk, &a.params).map_err(Failure::usage)?;
    let (samples, source) = match (&a.samples, &a.dist) {
        (Some(path), _) => (read_samples(open(path)?)?, json!({ "samples": path })),
        (None, Some(dist)) => {
            if a.m == 0 {
                return Err(Failure::usage("--m must be positive"));
            }
            let v = dist.sample(&mut noise_rng(a.seed, 0), a.m);
            (v, json!({ "dist": dist.to_string(), "seed": a.seed }))
        }
        (None, None) => return Err(Failure::usage("give --samples or --dist")),
    };
    let m = samples.len();
    let delta = a.delta.unwrap_or(1.0 / (m as f64).sqrt());
    let cfg = BisectionConfig::new(delta).with_epsilon(a.epsilon);
    let batch = SampleBatch::new(samples)?;
    let est = match &risk {
        RiskKind::Ubsr(loss) => ubsr_sb(loss, &batch, &cfg)?,
        RiskKind::Oce(u) => oce_saa(u, &batch, &cfg)?,
    };
    let report = json!({
        "risk": risk.name(),
        "spec": risk,
        "source": source,
        "m": m,
        "delta": delta,
        "epsilon": a.epsilon,
        "value": est.value,
        "estimate": est,
    });
    emit(&serde_json::to_string_pretty(&report).expect("report serializes"));
    let mut warnings = Vec::new();
    if !est.converged {
        warnings.push(format!("root search did not converge ({:?})", est.warning));
    } else if let Some(w) = est.warning {
        warnings.push(format!("{w:?}"));
    }
    Ok(status(warnings))
}

pub fn sweep(a: SweepArgs) -> Result<Status, Failure> {
    let start = Instant::now();
    let risk = parse_risk(&a.risk, &a.params).map_err(Failure::usage)?;
    let reps = repetitions(a.reps, a.fast)?;
    let (truth, truth_source) = match (a.truth, a.dist.risk_value(&risk)) {
        (Some(t), _) => (t, "user"),
        (None, Some(t)) => (t, "closed_form"),
        (None, None) => (reference_value(&risk, &a.dist, a.seed)?, "empirical"),
    };
    let cfg = SweepConfig {
        d1: a.d1,
        keep_raw: a.raw,
        ..SweepConfig::new(a.m_list.clone(), reps, a.seed)
    };
    let report = sweep_estimation(&risk, &a.dist, truth, &cfg)?;
    report.write_csv(create(&a.output.out_dir, "sweep_estimation.csv")?)?;
    if a.raw {
        report.write_raw_csv(create(&a.output.out_dir, "sweep_estimation_raw.csv")?)?;
    }
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    let violations: usize = report.rows.iter().map(|r| r.bound_violations).sum();
    let summary = json!({
        "command": "sweep-estimation",
        "config": { "risk": risk, "dist": a.dist.to_string(), "m_list": a.m_list, "reps": reps, "seed": a.seed, "d1": a.d1 },
        "truth": truth,
        "truth_source": truth_source,
        "mae_fit": report.mae_fit,
        "mse_fit": report.mse_fit,
        "failures": failures,
        "complexity_bound_violations": violations,
        "rows": report.rows,
    });
    finish(summary, &a.output, "sweep_estimation.json", start)?;
    let mut warnings = Vec::new();
    if failures > 0 {
        warnings.push(format!("{failures} repetitions failed"));
    }
    if violations > 0 {
        warnings.push(format!("{violations} root searches exceeded the iteration bound"));
    }
    Ok(status(warnings))
}

pub fn var_cvar(a: VarCvarArgs) -> Result<Status, Failure> {
    let start = Instant::now();
    let reps = repetitions(a.reps, a.fast)?;
    let alphas = a.alphas.clone().unwrap_or_else(|| alpha_grid(a.n_alphas));
    let cfg = SweepConfig::new(a.m_list.clone(), reps, a.seed);
    let report = var_cvar_sweep(&alphas, &a.dist, &cfg)?;
    report.write_csv(create(&a.output.out_dir, "var_cvar_sweep.csv")?)?;
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    let summary = json!({
        "command": "var-cvar-sweep",
        "config": { "dist": a.dist.to_string(), "alphas": alphas, "m_list": a.m_list, "reps": reps, "seed": a.seed },
        "failures": failures,
        "rows": report.rows,
    });
    finish(summary, &a.output, "var_cvar_sweep.json", start)?;
    Ok(status(if failures > 0 {
        vec![format!("{failures} repetitions failed")]
    } else {
        vec![]
    }))
}

/// Checkpoints at 1/8, 1/4, 1/2 and all of the horizon.
fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut c: Vec<usize> = [8, 4, 2, 1].iter().map(|q| (horizon / q).max(1)).collect();
    c.dedup();
    c
}

pub fn optimize(a: OptimizeArgs) -> Result<Status, Failure> {
    let start = Instant::now();
    let cfg: OptimizeConfig = match &a.config {
        Some(path) => serde_json::from_reader(open(path)?).map_err(|e| io_failure(path, e))?,
        None => {
            let risk = parse_risk(&a.risk, &a.params).map_err(Failure::usage)?;
            let first_c = *a.c_grid.first().ok_or_else(|| Failure::usage("--c-grid is empty"))?;
            OptimizeConfig {
                risk,
                scenario: ScenarioSpec::Synthetic {
                    d: a.d,
                    ridge: SYNTHETIC_RIDGE,
                    matrix_seed: SYNTHETIC_MATRIX_SEED,
                    noise_seed: a.noise_seed,
                },
                sg: SGConfig {
                    c: first_c,
                    a: a.step_exponent,
                    m0: a.m0,
                    ..SGConfig::new(a.horizon, ProjectionSpec::Simplex { dim: a.d }, a.seed)
                },
                theta0: None,
                c_grid: Some(a.c_grid.clone()),
                theta_star: None,
            }
        }
    };
    let out = run_optimize(&cfg)?;
    out.trace.write_csv(create(&a.output.out_dir, "optimize_trace.csv")?)?;
    let meta = &out.trace.metadata;
    let mut summary = json!({
        "command": "optimize",
        "config": cfg,
        "chosen_c": out.chosen_c,
        "grid": out.grid,
        "theta0": out.theta0,
        "theta_star": out.theta_star,
        "final_theta": out.trace.final_theta,
        "initial_err_sq": out.initial_err_sq,
        "final_err_sq": out.trace.final_err_sq(),
        "metadata": meta,
    });
    if a.rate_study {
        let seeds = a.seeds.unwrap_or(if a.fast { FAST_SEEDS } else { DEFAULT_SEEDS });
        if out.theta_star.is_none() {
            return Err(Failure::usage("a rate study needs a reference optimum (entropic risk on a Gaussian scenario, or theta_star in the config)"));
        }
        let study = sg_rate_study(&cfg, seeds, &checkpoints(cfg.sg.horizon))?;
        summary["rate_study"] = json!(study);
    }
    finish(summary, &a.output, "optimize.json", start)?;

    let mut warnings = Vec::new();
    if meta.residual_warnings > 0 {
        warnings.push(format!("{} iterations stopped above the residual tolerance", meta.residual_warnings));
    }
    if meta.step_exponent_boundary {
        warnings.push("step exponent at the boundary of the convergence theory".into());
    }
    if meta.unbounded_feasible_set {
        warnings.push("feasible set is not compact".into());
    }
    if meta.complexity_bound_violations > 0 {
        warnings.push(format!("{} root searches exceeded the iteration bound", meta.complexity_bound_violations));
    }
    Ok(status(warnings))
}

pub fn portfolio(a: PortfolioArgs) -> Result<Status, Failure> {
    let start = Instant::now();
    let prices = a.prices.map(|p| match p {
        PriceKind::Simple => ReturnKind::Simple,
        PriceKind::Log => ReturnKind::Log,
    });
    let data = read_returns(open(&a.returns)?, prices)?;
    let mut risks: Vec<NamedRisk> = Vec::new();
    for text in &a.risk {
        let risk = parse_risk(text, &a.params).map_err(Failure::usage)?;
        let base = if text.trim_start().starts_with(['{', '@']) {
            risk.name()
        } else {
            text.trim().to_string()
        };
        let mut name = base.clone();
        let mut k = 2;
        while risks.iter().any(|r| r.name == name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        risks.push(NamedRisk { name, risk });
    }
    let sg = match &a.sg_config {
        Some(path) => serde_json::from_reader(open(path)?).map_err(|e| io_failure(path, e))?,
        None => SGConfig {
            c: a.c,
            ..SGConfig::new(a.horizon, ProjectionSpec::Simplex { dim: data.dim() }, a.seed)
        },
    };
    let cfg = PortfolioConfig {
        noise_scale: a.noise_scale,
        benchmark_alpha: a.benchmark_alpha,
        ..PortfolioConfig::new(risks, sg)
    };
    let report = run_portfolio(&data, &cfg)?;
    report.write_weights_csv(create(&a.output.out_dir, "portfolio_weights.csv")?)?;
    report.write_cumulative_csv(create(&a.output.out_dir, "portfolio_cumulative.csv")?)?;
    let entries: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "kind": e.kind,
                "weights": e.weights,
                "final_cumulative_return": e.cumulative.last(),
                "residual_warnings": e.residual_warnings,
            })
        })
        .collect();
    let summary = json!({
        "command": "portfolio",
        "config": cfg,
        "returns": a.returns,
        "tickers": report.tickers,
        "periods": report.dates.len(),
        "dropped_rows": report.dropped_rows,
        "entries": entries,
    });
    finish(summary, &a.output, "portfolio.json", start)?;
    let residual: usize = report.entries.iter().map(|e| e.residual_warnings).sum();
    Ok(status(if residual > 0 {
        vec![format!("{residual} SG iterations stopped above the residual tolerance")]
    } else {
        vec![]
    }))
}
