//! Repeated-estimation error sweeps over the sample size.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distributions::DistSpec;
use super::stats::{log_log_fit, mean_stderr, SlopeFit};
use crate::error::{invalid, Result, RiskError};
use crate::estimation::{self, BisectionConfig, RiskEstimate};
use crate::optimization::RiskKind;
use crate::risk_functions::UtilitySpec;
use crate::scenarios::{noise_rng, NoiseRng};

/// Runs whose estimator fails are tolerated up to this fraction.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Sample size used for the empirical reference when no closed form exists.
pub const EMPIRICAL_ORACLE_SIZE: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub m_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// `δ = d1 / √m`
    pub d1: f64,
    pub keep_raw: bool,
}

impl SweepConfig {
    pub fn new(m_list: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            m_list,
            reps,
            seed,
            d1: 1.0,
            keep_raw: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(invalid("sample sizes must be positive"));
        }
        if self.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sample sizes must be strictly ascending"));
        }
        if self.reps == 0 {
            return Err(invalid("need at least one repetition"));
        }
        if !(self.d1 > 0.0) {
            return Err(invalid("d1 must be positive"));
        }
        Ok(())
    }

    pub fn delta(&self, m: usize) -> f64 {
        self.d1 / (m as f64).sqrt()
    }
}

/// Independent stream for repetition `rep` of grid cell `cell`.
pub fn rep_rng(seed: u64, cell: usize, rep: usize) -> NoiseRng {
    noise_rng(seed, ((cell as u64) << 32) | rep as u64)
}

/// Run `f` for every (cell, rep) pair in parallel, results ordered by index.
pub(crate) fn run_grid<T, F>(cells: usize, reps: usize, f: F) -> Vec<Vec<Result<T>>>
where
    T: Send,
    F: Fn(usize, usize) -> Result<T> + Sync,
{
    (0..cells)
        .map(|c| (0..reps).into_par_iter().map(|r| f(c, r)).collect())
        .collect()
}

fn check_failures<T>(grid: &[Vec<Result<T>>]) -> Result<usize> {
    let total: usize = grid.iter().map(Vec::len).sum();
    let failed: Vec<&RiskError> = grid.iter().flatten().filter_map(|r| r.as_ref().err()).collect();
    if failed.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(RiskError::Data(format!(
            "{} of {total} runs failed; first error: {}",
            failed.len(),
            failed[0]
        )));
    }
    Ok(failed.len())
}

/// One estimate of `risk` from `samples` at tolerance `delta` (`ε = 1`).
pub fn estimate_risk(risk: &RiskKind, samples: &[f64], delta: f64) -> Result<RiskEstimate> {
    let cfg = BisectionConfig::new(delta).with_epsilon(1.0);
    match risk {
        RiskKind::Ubsr(loss) => estimation::ubsr_sb_generic(loss, samples, &cfg),
        RiskKind::Oce(u) => estimation::oce_saa_slice(u, samples, &cfg),
    }
}

/// Closed-form value of `risk` under `dist`, or a single large-sample
/// estimate on an independent stream.
pub fn reference_value(risk: &RiskKind, dist: &DistSpec, seed: u64) -> Result<f64> {
    if let Some(v) = dist.risk_value(risk) {
        return Ok(v);
    }
    let samples = dist.sample(&mut noise_rng(seed, u64::MAX), EMPIRICAL_ORACLE_SIZE);
    Ok(estimate_risk(risk, &samples, 1e-9)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub reps: usize,
    pub failures: usize,
    pub mean_error: f64,
    pub error_stderr: f64,
    pub mae: f64,
    pub mae_stderr: f64,
    pub mse: f64,
    pub mse_stderr: f64,
    /// Shortfall runs whose iteration count exceeded the complexity bound.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawError {
    pub m: usize,
    pub rep: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub risk: String,
    pub distribution: String,
    pub truth: f64,
    pub rows: Vec<SweepRow>,
    /// `None` when an error metric is zero somewhere (e.g. a point mass).
    pub mae_fit: Option<SlopeFit>,
    pub mse_fit: Option<SlopeFit>,
    #[serde(skip)]
    pub raw: Vec<RawError>,
}

const SWEEP_HEADER: [&str; 10] = [
    "m",
    "reps",
    "failures",
    "mean_error",
    "error_stderr",
    "mae",
    "mae_stderr",
    "mse",
    "mse_stderr",
    "bound_violations",
];

/// `N` independent estimates per sample size, scored against `truth`.
pub fn sweep_estimation(risk: &RiskKind, dist: &DistSpec, truth: f64, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    dist.validate()?;
    let grid = run_grid(cfg.m_list.len(), cfg.reps, |cell, rep| {
        let m = cfg.m_list[cell];
        let samples = dist.sample(&mut rep_rng(cfg.seed, cell, rep), m);
        estimate_risk(risk, &samples, cfg.delta(m))
    });
    check_failures(&grid)?;

    let mut rows = Vec::with_capacity(grid.len());
    let mut raw = Vec::new();
    for (cell, results) in grid.iter().enumerate() {
        let m = cfg.m_list[cell];
        let delta = cfg.delta(m);
        let mut errors = Vec::with_capacity(results.len());
        let mut violations = 0;
        for (rep, r) in results.iter().enumerate() {
            if let Ok(est) = r {
                let e = est.value - truth;
                errors.push(e);
                if cfg.keep_raw {
                    raw.push(RawError { m, rep, error: e });
                }
                if matches!(risk, RiskKind::Ubsr(_)) && !est.within_complexity_bound(delta) {
                    violations += 1;
                }
            }
        }
        let (mean_error, error_stderr) = mean_stderr(&errors);
        let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
        let (mae, mae_stderr) = mean_stderr(&abs);
        let (mse, mse_stderr) = mean_stderr(&sq);
        rows.push(SweepRow {
            m,
            reps: results.len(),
            failures: results.len() - errors.len(),
            mean_error,
            error_stderr,
            mae,
            mae_stderr,
            mse,
            mse_stderr,
            bound_violations: violations,
        });
    }
    let ms: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let fit = |metric: fn(&SweepRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(metric).collect();
        if ms.len() >= 2 {
            log_log_fit(&ms, &ys).ok()
        } else {
            None
        }
    };
    Ok(SweepReport {
        risk: risk.name(),
        distribution: dist.to_string(),
        truth,
        mae_fit: fit(|r| r.mae),
        mse_fit: fit(|r| r.mse),
        rows,
        raw,
    })
}

fn csv_err(e: csv::Error) -> RiskError {
    RiskError::Data(e.to_string())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let s = rec.get(i).ok_or_else(|| RiskError::Data(format!("missing column {i}")))?;
    s.parse::<T>().map_err(|e| RiskError::Data(format!("bad value {s:?} in column {i}: {e}")))
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(csv_err)?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(RiskError::Data(format!("unexpected header {h:?}, expected {expected:?}")));
    }
    Ok(())
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
                r.mean_error.to_string(),
                r.error_stderr.to_string(),
                r.mae.to_string(),
                r.mae_stderr.to_string(),
                r.mse.to_string(),
                r.mse_stderr.to_string(),
                r.bound_violations.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| RiskError::Data(e.to_string()))
    }

    pub fn read_rows<R: Read>(input: R) -> Result<Vec<SweepRow>> {
        let mut rdr = csv::Reader::from_reader(input);
        expect_header(&mut rdr, &SWEEP_HEADER)?;
        rdr.records()
            .map(|rec| {
                let rec = rec.map_err(csv_err)?;
                Ok(SweepRow {
                    m: field(&rec, 0)?,
                    reps: field(&rec, 1)?,
                    failures: field(&rec, 2)?,
                    mean_error: field(&rec, 3)?,
                    error_stderr: field(&rec, 4)?,
                    mae: field(&rec, 5)?,
                    mae_stderr: field(&rec, 6)?,
                    mse: field(&rec, 7)?,
                    mse_stderr: field(&rec, 8)?,
                    bound_violations: field(&rec, 9)?,
                })
            })
            .collect()
    }

    /// Per-repetition errors, `m,rep,error`.
    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<()> {
        write_raw(&self.raw, out)
    }
}

pub fn write_raw<W: Write>(raw: &[RawError], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "rep", "error"]).map_err(csv_err)?;
    for e in raw {
        w.write_record([e.m.to_string(), e.rep.to_string(), e.error.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| RiskError::Data(e.to_string()))
}

pub fn read_raw<R: Read>(input: R) -> Result<Vec<RawError>> {
    let mut rdr = csv::Reader::from_reader(input);
    expect_header(&mut rdr, &["m", "rep", "error"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(RawError {
                m: field(&rec, 0)?,
                rep: field(&rec, 1)?,
                error: field(&rec, 2)?,
            })
        })
        .collect()
}

/// One `(α, m)` cell of the quantile / tail-mean sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCvarRow {
    pub alpha: f64,
    pub m: usize,
    pub reps: usize,
    pub failures: usize,
    /// Heaviside shortfall estimate minus `VaR_α`.
    pub var_mean_error: f64,
    pub var_error_stderr: f64,
    /// Hinge certainty equivalent minus its closed form.
    pub cvar_mean_error: f64,
    pub cvar_error_stderr: f64,
    /// Hinge root minus `VaR_{1-α}`, the quantile it targets.
    pub root_mean_error: f64,
    pub root_error_stderr: f64,
    pub max_abs_var_error: f64,
    pub max_abs_cvar_error: f64,
}

const VAR_CVAR_HEADER: [&str; 12] = [
    "alpha",
    "m",
    "reps",
    "failures",
    "var_mean_error",
    "var_error_stderr",
    "cvar_mean_error",
    "cvar_error_stderr",
    "root_mean_error",
    "root_error_stderr",
    "max_abs_var_error",
    "max_abs_cvar_error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCvarReport {
    pub distribution: String,
    pub rows: Vec<VarCvarRow>,
}

/// `α` levels spread uniformly inside `(0, 1)`: `i/(n+1)` for `i = 1..=n`.
pub fn alpha_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

pub fn var_cvar_sweep(alphas: &[f64], dist: &DistSpec, cfg: &SweepConfig) -> Result<VarCvarReport> {
    cfg.validate()?;
    dist.validate()?;
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(invalid("every alpha must lie in (0, 1)"));
    }
    let cells: Vec<(f64, usize)> = alphas
        .iter()
        .flat_map(|&a| cfg.m_list.iter().map(move |&m| (a, m)))
        .collect();
    let grid = run_grid(cells.len(), cfg.reps, |cell, rep| {
        let (alpha, m) = cells[cell];
        let delta = cfg.delta(m);
        let samples = dist.sample(&mut rep_rng(cfg.seed, cell, rep), m);
        let var = estimation::ubsr_sb_generic(
            &crate::risk_functions::LossSpec::value_at_risk(alpha)?,
            &samples,
            &BisectionConfig::new(delta),
        )?;
        let cvar = estimation::oce_saa_slice(
            &UtilitySpec::CvarHinge { alpha },
            &samples,
            &BisectionConfig::new(delta).with_epsilon(1.0),
        )?;
        Ok((var.value, cvar.value, cvar.root))
    });
    check_failures(&grid)?;

    let rows = cells
        .iter()
        .zip(&grid)
        .map(|(&(alpha, m), results)| {
            let ok: Vec<&(f64, f64, f64)> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let var_err: Vec<f64> = ok.iter().map(|r| r.0 - dist.value_at_risk(alpha)).collect();
            let cvar_err: Vec<f64> = ok.iter().map(|r| r.1 - dist.hinge_cvar(alpha)).collect();
            let root_err: Vec<f64> = ok.iter().map(|r| r.2 - dist.value_at_risk(1.0 - alpha)).collect();
            let (var_mean_error, var_error_stderr) = mean_stderr(&var_err);
            let (cvar_mean_error, cvar_error_stderr) = mean_stderr(&cvar_err);
            let (root_mean_error, root_error_stderr) = mean_stderr(&root_err);
            let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            VarCvarRow {
                alpha,
                m,
                reps: results.len(),
                failures: results.len() - ok.len(),
                var_mean_error,
                var_error_stderr,
                cvar_mean_error,
                cvar_error_stderr,
                root_mean_error,
                root_error_stderr,
                max_abs_var_error: max_abs(&var_err),
                max_abs_cvar_error: max_abs(&cvar_err),
            }
        })
        .collect();
    Ok(VarCvarReport {
        distribution: dist.to_string(),
        rows,
    })
}

impl VarCvarReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(VAR_CVAR_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.alpha.to_string(),
                r.m.to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
                r.var_mean_error.to_string(),
                r.var_error_stderr.to_string(),
                r.cvar_mean_error.to_string(),
                r.cvar_error_stderr.to_string(),
                r.root_mean_error.to_string(),
                r.root_error_stderr.to_string(),
                r.max_abs_var_error.to_string(),
                r.max_abs_cvar_error.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| RiskError::Data(e.to_string()))
    }

    pub fn read_rows<R: Read>(input: R) -> Result<Vec<VarCvarRow>> {
        let mut rdr = csv::Reader::from_reader(input);
        expect_header(&mut rdr, &VAR_CVAR_HEADER)?;
        rdr.records()
            .map(|rec| {
                let rec = rec.map_err(csv_err)?;
                Ok(VarCvarRow {
                    alpha: field(&rec, 0)?,
                    m: field(&rec, 1)?,
                    reps: field(&rec, 2)?,
                    failures: field(&rec, 3)?,
                    var_mean_error: field(&rec, 4)?,
                    var_error_stderr: field(&rec, 5)?,
                    cvar_mean_error: field(&rec, 6)?,
                    cvar_error_stderr: field(&rec, 7)?,
                    root_mean_error: field(&rec, 8)?,
                    root_error_stderr: field(&rec, 9)?,
                    max_abs_var_error: field(&rec, 10)?,
                    max_abs_cvar_error: field(&rec, 11)?,
                })
            })
            .collect()
    }
}
