//! SG experiment runner: scenario construction, automatic reference optimum,
//! step-constant grid search and multi-seed rate studies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{log_log_fit, SlopeFit};
use super::sweeps::estimate_risk;
use crate::error::{invalid, Result, RiskError};
use crate::optimization::{mv_optimum, sg_run, OptimumOracle, ProjectionSpec, RiskKind, SGConfig, SGTrace};
use crate::risk_functions::{LossKind, UtilitySpec};
use crate::scenarios::{
    linear_portfolio, synthetic_gaussian, EmpiricalNoiseSpec, GaussianNoiseSpec, LinearPortfolio,
    MeanVarianceObjective, NoiseSpec, ScenarioModel, SYNTHETIC_MATRIX_SEED, SYNTHETIC_RIDGE,
};

/// Default step-constant grid.
pub const DEFAULT_C_GRID: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

/// Sample size of the independent estimate used to rank step constants when
/// no reference optimum is known.
const SCORE_SAMPLES: usize = 10_000;

fn default_ridge() -> f64 {
    SYNTHETIC_RIDGE
}

fn default_matrix_seed() -> u64 {
    SYNTHETIC_MATRIX_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// Seeded synthetic Gaussian market of dimension `d`.
    Synthetic {
        d: usize,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_matrix_seed")]
        matrix_seed: u64,
        #[serde(default)]
        noise_seed: u64,
    },
    Gaussian(GaussianNoiseSpec),
    Empirical(EmpiricalNoiseSpec),
}

impl ScenarioSpec {
    /// Gaussian noise law, when the scenario has one.
    pub fn gaussian(&self) -> Option<GaussianNoiseSpec> {
        match self {
            ScenarioSpec::Synthetic {
                d,
                ridge,
                matrix_seed,
                noise_seed,
            } => Some(synthetic_gaussian(*d, *ridge, *matrix_seed, *noise_seed)),
            ScenarioSpec::Gaussian(g) => Some(g.clone()),
            ScenarioSpec::Empirical(_) => None,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        match self {
            ScenarioSpec::Empirical(e) => NoiseSpec::Empirical(e.clone()),
            _ => NoiseSpec::Gaussian(self.gaussian().expect("gaussian scenario")),
        }
    }

    pub fn build(&self) -> Result<LinearPortfolio> {
        if let ScenarioSpec::Synthetic { d, ridge, .. } = self {
            if *d == 0 || !(*ridge >= 0.0) {
                return Err(invalid("synthetic scenario needs d >= 1 and ridge >= 0"));
            }
        }
        linear_portfolio(&self.noise())
    }
}

/// Risk aversion of an entropic risk, if `risk` is one.
pub fn entropic_beta(risk: &RiskKind) -> Option<f64> {
    match risk {
        RiskKind::Ubsr(l) => match l.kind() {
            LossKind::Entropic { beta } => Some(beta),
            _ => None,
        },
        RiskKind::Oce(UtilitySpec::Entropic { beta }) => Some(*beta),
        RiskKind::Oce(_) => None,
    }
}

/// Exact reference optimum for entropic risk on a Gaussian scenario: both
/// reduce to the mean-variance objective (a threshold `λ ≠ 1` only adds a
/// constant).
pub fn automatic_oracle(risk: &RiskKind, scenario: &ScenarioSpec, projection: &ProjectionSpec) -> Result<Option<OptimumOracle>> {
    let (Some(beta), Some(g)) = (entropic_beta(risk), scenario.gaussian()) else {
        return Ok(None);
    };
    let objective = MeanVarianceObjective::from_gaussian(&g, beta)?;
    let theta = mv_optimum(&objective, projection)?;
    Ok(Some(OptimumOracle {
        theta,
        objective: Some(objective),
    }))
}

/// Feasible default start: the simplex barycenter, else the projection of 0.
pub fn default_start(projection: &ProjectionSpec, d: usize) -> Result<Vec<f64>> {
    match projection {
        ProjectionSpec::Simplex { dim } => Ok(vec![1.0 / *dim as f64; *dim]),
        _ => projection.project(&vec![0.0; d]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub risk: RiskKind,
    pub scenario: ScenarioSpec,
    pub sg: SGConfig,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Step constants to try; `None` runs `sg.c` only.
    #[serde(default)]
    pub c_grid: Option<Vec<f64>>,
    /// Externally supplied optimum; overrides the automatic one.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    /// Final squared distance to `θ*`, or an independent risk estimate at
    /// the final iterate when `θ*` is unknown.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub trace: SGTrace,
    pub chosen_c: f64,
    pub grid: Vec<GridPoint>,
    pub theta_star: Option<Vec<f64>>,
    pub theta0: Vec<f64>,
    pub initial_err_sq: Option<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn prepare(cfg: &OptimizeConfig) -> Result<(LinearPortfolio, Option<OptimumOracle>, Vec<f64>)> {
    let model = cfg.scenario.build()?;
    let d = model.dim();
    if let Some(pd) = cfg.sg.projection.dim() {
        if pd != d {
            return Err(RiskError::DimensionMismatch { expected: d, got: pd });
        }
    }
    let oracle = match &cfg.theta_star {
        Some(t) => Some(OptimumOracle {
            theta: t.clone(),
            objective: automatic_oracle(&cfg.risk, &cfg.scenario, &cfg.sg.projection)?.and_then(|o| o.objective),
        }),
        None => automatic_oracle(&cfg.risk, &cfg.scenario, &cfg.sg.projection)?,
    };
    let theta0 = match &cfg.theta0 {
        Some(t) => t.clone(),
        None => default_start(&cfg.sg.projection, d)?,
    };
    Ok((model, oracle, theta0))
}

/// Run SG for every step constant in the grid and keep the best trace.
pub fn run_optimize(cfg: &OptimizeConfig) -> Result<OptimizeOutcome> {
    let (model, oracle, theta0) = prepare(cfg)?;
    let grid_values = cfg.c_grid.clone().unwrap_or_else(|| vec![cfg.sg.c]);
    if grid_values.is_empty() {
        return Err(invalid("step-constant grid is empty"));
    }
    let mut best: Option<(f64, f64, SGTrace)> = None;
    let mut grid = Vec::with_capacity(grid_values.len());
    for &c in &grid_values {
        let sg = SGConfig { c, ..cfg.sg.clone() };
        let trace = sg_run(&model, &cfg.risk, &sg, &theta0, oracle.as_ref())?;
        let score = match &oracle {
            Some(o) => squared_distance(&trace.final_theta, &o.theta),
            None => {
                let mut rng = model.stream(cfg.sg.seed ^ 0x005e_ed0f_5c0e);
                let batch = model.draw_batch(&mut rng, SCORE_SAMPLES);
                let values: Vec<f64> = batch.rows().map(|z| model.value(&trace.final_theta, z)).collect();
                estimate_risk(&cfg.risk, &values, 1.0 / (SCORE_SAMPLES as f64).sqrt())?.value
            }
        };
        grid.push(GridPoint { c, score });
        if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            best = Some((c, score, trace));
        }
    }
    let (chosen_c, _, trace) = best.expect("non-empty grid");
    let initial_err_sq = oracle.as_ref().map(|o| squared_distance(&theta0, &o.theta));
    Ok(OptimizeOutcome {
        trace,
        chosen_c,
        grid,
        theta_star: oracle.map(|o| o.theta),
        theta0,
        initial_err_sq,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub mean_err_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub risk: String,
    pub c: f64,
    pub seeds: usize,
    pub rows: Vec<RateRow>,
    pub fit: SlopeFit,
    /// Mean squared error at the last checkpoint over that at the first.
    pub ratio_last_first: f64,
    /// Mean final squared error for every step constant tried.
    pub grid: Vec<GridPoint>,
    /// Shortfall root searches over all runs, and how many exceeded the
    /// iteration-complexity bound.
    pub root_searches: usize,
    pub complexity_bound_violations: usize,
}

/// Mean `‖θ_n - θ*‖²` over `seeds` independent runs, read off at the given
/// checkpoints of a single horizon, for the step constant that minimizes the
/// mean error at the last checkpoint.
pub fn sg_rate_study(cfg: &OptimizeConfig, seeds: usize, checkpoints: &[usize]) -> Result<RateStudy> {
    let (model, oracle, theta0) = prepare(cfg)?;
    let oracle = oracle.ok_or_else(|| invalid("a rate study needs a reference optimum"))?;
    if seeds == 0 || checkpoints.len() < 2 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("need seeds >= 1 and at least two ascending checkpoints"));
    }
    let horizon = *checkpoints.last().expect("non-empty");
    if checkpoints[0] == 0 {
        return Err(invalid("checkpoints start at 1"));
    }
    let grid_values = cfg.c_grid.clone().unwrap_or_else(|| vec![cfg.sg.c]);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut grid = Vec::new();
    let mut violations = 0;
    for &c in &grid_values {
        let runs: Vec<Result<(Vec<f64>, usize)>> = (0..seeds as u64)
            .into_par_iter()
            .map(|s| {
                let sg = SGConfig {
                    c,
                    horizon,
                    seed: cfg.sg.seed.wrapping_add(s),
                    ..cfg.sg.clone()
                };
                let trace = sg_run(&model, &cfg.risk, &sg, &theta0, Some(&oracle))?;
                let errs = checkpoints
                    .iter()
                    .map(|&n| trace.records[n - 1].err_sq.expect("oracle present"))
                    .collect();
                Ok((errs, trace.metadata.complexity_bound_violations))
            })
            .collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        violations += runs.iter().map(|r| r.1).sum::<usize>();
        let runs: Vec<Vec<f64>> = runs.into_iter().map(|r| r.0).collect();
        let means: Vec<f64> = (0..checkpoints.len())
            .map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / seeds as f64)
            .collect();
        let last = *means.last().expect("non-empty");
        grid.push(GridPoint { c, score: last });
        if best.as_ref().is_none_or(|(_, m)| last < *m.last().expect("non-empty")) {
            best = Some((c, means));
        }
    }
    let (c, means) = best.ok_or_else(|| invalid("step-constant grid is empty"))?;
    let ns: Vec<f64> = checkpoints.iter().map(|&n| n as f64).collect();
    let fit = log_log_fit(&ns, &means)?;
    Ok(RateStudy {
        risk: cfg.risk.name(),
        c,
        seeds,
        ratio_last_first: means.last().expect("non-empty") / means[0],
        rows: checkpoints
            .iter()
            .zip(&means)
            .map(|(&n, &mean_err_sq)| RateRow { n, mean_err_sq })
            .collect(),
        fit,
        root_searches: if matches!(cfg.risk, RiskKind::Ubsr(_)) {
            grid_values.len() * seeds * horizon
        } else {
            0
        },
        complexity_bound_violations: violations,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_functions::LossSpec;

    fn synthetic(d: usize) -> ScenarioSpec {
        ScenarioSpec::Synthetic {
            d,
            ridge: SYNTHETIC_RIDGE,
            matrix_seed: SYNTHETIC_MATRIX_SEED,
            noise_seed: 4,
        }
    }

    #[test]
    fn scenario_json_defaults() {
        let s: ScenarioSpec = serde_json::from_str(r#"{"type":"synthetic","d":3}"#).unwrap();
        assert_eq!(
            s,
            ScenarioSpec::Synthetic {
                d: 3,
                ridge: SYNTHETIC_RIDGE,
                matrix_seed: SYNTHETIC_MATRIX_SEED,
                noise_seed: 0
            }
        );
        assert!(ScenarioSpec::Synthetic { d: 0, ridge: 0.01, matrix_seed: 0, noise_seed: 0 }.build().is_err());
    }

    #[test]
    fn oracle_only_for_entropic_gaussian() {
        let p = ProjectionSpec::Simplex { dim: 3 };
        let ent = RiskKind::Ubsr(LossSpec::entropic(0.5).unwrap());
        assert!(automatic_oracle(&ent, &synthetic(3), &p).unwrap().is_some());
        let cvar = RiskKind::Oce(UtilitySpec::CvarHinge { alpha: 0.9 });
        assert!(automatic_oracle(&cvar, &synthetic(3), &p).unwrap().is_none());
        let emp = ScenarioSpec::Empirical(EmpiricalNoiseSpec {
            returns: vec![vec![0.0; 3], vec![1.0; 3]],
            noise_scale: 0.1,
            seed: 0,
        });
        assert!(automatic_oracle(&ent, &emp, &p).unwrap().is_none());
    }

    #[test]
    fn grid_search_keeps_best_and_improves_on_start() {
        let cfg = OptimizeConfig {
            risk: RiskKind::Ubsr(LossSpec::entropic(0.5).unwrap()),
            scenario: synthetic(3),
            sg: SGConfig::new(100, ProjectionSpec::Simplex { dim: 3 }, 2),
            theta0: None,
            c_grid: Some(vec![0.5, 2.0]),
            theta_star: None,
        };
        let out = run_optimize(&cfg).unwrap();
        assert_eq!(out.grid.len(), 2);
        let best = out.grid.iter().map(|g| g.score).fold(f64::INFINITY, f64::min);
        assert_eq!(out.trace.final_err_sq(), Some(best));
        assert_eq!(out.grid.iter().find(|g| g.score == best).unwrap().c, out.chosen_c);
        assert!(best < out.initial_err_sq.unwrap());
        assert_eq!(out.theta0, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn scoring_without_reference() {
        let cfg = OptimizeConfig {
            risk: RiskKind::Oce(UtilitySpec::CvarHinge { alpha: 0.9 }),
            scenario: synthetic(2),
            sg: SGConfig::new(20, ProjectionSpec::Simplex { dim: 2 }, 2),
            theta0: Some(vec![1.0, 0.0]),
            c_grid: None,
            theta_star: None,
        };
        let out = run_optimize(&cfg).unwrap();
        assert!(out.theta_star.is_none() && out.initial_err_sq.is_none());
        assert!(out.grid[0].score.is_finite());
    }
}
