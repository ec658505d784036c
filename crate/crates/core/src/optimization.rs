//! Projected stochastic gradient descent on shortfall and certainty-equivalent
//! risk objectives, plus the exact mean-variance optimum used as a reference.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RiskError};
use crate::estimation::EstimateWarning;
use crate::gradients::{oce_grad, ubsr_grad, DoubleBatch, GradientEstimate};
use crate::risk_functions::{LossSpec, UtilitySpec};
use crate::scenarios::{matrix_from_rows, MeanVarianceObjective, ScenarioModel};

/// Feasible set `Θ` and its Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProjectionSpec {
    /// Probability simplex `{x >= 0, Σx = 1}` in `dim` coordinates.
    Simplex { dim: usize },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// No constraint. Not compact.
    Identity,
}

const SIMPLEX_SUM_TOL: f64 = 1e-9;
const SIMPLEX_NEG_TOL: f64 = 1e-12;

impl ProjectionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProjectionSpec::Simplex { dim } if *dim == 0 => Err(invalid("simplex needs dim >= 1")),
            ProjectionSpec::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(RiskError::DimensionMismatch {
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.is_empty() || lo.iter().zip(hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
                    return Err(invalid("box needs finite bounds with lo <= hi"));
                }
                Ok(())
            }
            ProjectionSpec::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) || !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(invalid("ball needs a finite center and a nonnegative radius"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Dimension of the set, if fixed.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ProjectionSpec::Simplex { dim } => Some(*dim),
            ProjectionSpec::Box { lo, .. } => Some(lo.len()),
            ProjectionSpec::Ball { center, .. } => Some(center.len()),
            ProjectionSpec::Identity => None,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, ProjectionSpec::Identity)
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        match self.dim() {
            Some(d) if d != v.len() => Err(RiskError::DimensionMismatch {
                expected: d,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `argmin_{x ∈ Θ} ‖x - v‖₂`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RiskError::NonFinite {
                context: "projection input".into(),
            });
        }
        Ok(match self {
            ProjectionSpec::Simplex { .. } => project_simplex(v),
            ProjectionSpec::Box { lo, hi } => v.iter().zip(lo.iter().zip(hi)).map(|(x, (l, h))| x.clamp(*l, *h)).collect(),
            ProjectionSpec::Ball { center, radius } => {
                let dist = v.iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum::<f64>().sqrt();
                if dist <= *radius {
                    v.to_vec()
                } else {
                    let s = radius / dist;
                    v.iter().zip(center).map(|(x, c)| c + s * (x - c)).collect()
                }
            }
            ProjectionSpec::Identity => v.to_vec(),
        })
    }

    /// Membership test with the tolerances used for traced iterates.
    pub fn contains(&self, v: &[f64]) -> bool {
        if self.check_dim(v).is_err() {
            return false;
        }
        match self {
            ProjectionSpec::Simplex { .. } => {
                v.iter().all(|x| *x >= -SIMPLEX_NEG_TOL) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_SUM_TOL
            }
            ProjectionSpec::Box { lo, hi } => v.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| l <= x && x <= h),
            ProjectionSpec::Ball { center, radius } => {
                v.iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12) + 1e-15
            }
            ProjectionSpec::Identity => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// Sort-and-threshold Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|vi| (vi - tau).max(0.0)).collect();
    let s: f64 = x.iter().sum();
    for xi in &mut x {
        *xi /= s;
    }
    x
}

/// Per-iteration batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BatchSchedule {
    /// `m_k = m₀·k`
    Increasing,
    Constant { m: usize },
    /// `m_k = ⌈k^p⌉`
    Power { p: f64 },
}

impl BatchSchedule {
    pub fn batch_size(&self, k: usize, m0: usize) -> usize {
        match *self {
            BatchSchedule::Increasing => m0 * k,
            BatchSchedule::Constant { m } => m,
            BatchSchedule::Power { p } => ((k as f64).powf(p).ceil() as usize).max(1),
        }
    }
}

/// Which risk measure the driver minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "measure", content = "spec", rename_all = "lowercase")]
pub enum RiskKind {
    Ubsr(LossSpec),
    Oce(UtilitySpec),
}

impl RiskKind {
    pub fn name(&self) -> String {
        match self {
            RiskKind::Ubsr(l) => format!("ubsr-{}", l.name()),
            RiskKind::Oce(u) => format!("oce-{}", u.name()),
        }
    }

    /// Gradient estimate at `theta` with the tolerances tied to the batch size.
    pub fn gradient(
        &self,
        scenario: &dyn ScenarioModel,
        theta: &[f64],
        batches: &DoubleBatch,
        delta: f64,
        epsilon: f64,
    ) -> Result<GradientEstimate> {
        match self {
            RiskKind::Ubsr(loss) => ubsr_grad(scenario, loss, theta, batches, delta),
            RiskKind::Oce(u) => oce_grad(scenario, u, theta, batches, delta, epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGConfig {
    /// Step constant in `α_k = c / k^a`.
    pub c: f64,
    /// Step exponent; `1/2` is accepted and flagged.
    pub a: f64,
    pub schedule: BatchSchedule,
    pub m0: usize,
    pub horizon: usize,
    /// `δ_k = d1 / √m_k`
    pub d1: f64,
    pub epsilon: f64,
    pub projection: ProjectionSpec,
    pub seed: u64,
}

impl SGConfig {
    pub fn new(horizon: usize, projection: ProjectionSpec, seed: u64) -> Self {
        Self {
            c: 1.0,
            a: 1.0,
            schedule: BatchSchedule::Increasing,
            m0: 1,
            horizon,
            d1: 1.0,
            epsilon: 1.0,
            projection,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid(format!("step constant c must be positive, got {}", self.c)));
        }
        if !(0.5..=1.0).contains(&self.a) {
            return Err(invalid(format!("step exponent a must lie in [1/2, 1], got {}", self.a)));
        }
        if self.horizon == 0 || self.m0 == 0 {
            return Err(invalid("horizon and m0 must be at least 1"));
        }
        if !(self.d1 > 0.0) || !(self.epsilon > 0.0) {
            return Err(invalid("d1 and epsilon must be positive"));
        }
        match self.schedule {
            BatchSchedule::Constant { m: 0 } => return Err(invalid("constant batch size must be >= 1")),
            BatchSchedule::Power { p } if !(p > 0.0) || !p.is_finite() => {
                return Err(invalid("power schedule needs p > 0"))
            }
            _ => {}
        }
        self.projection.validate()
    }

    pub fn step(&self, k: usize) -> f64 {
        self.c / (k as f64).powf(self.a)
    }

    pub fn batch_size(&self, k: usize) -> usize {
        self.schedule.batch_size(k, self.m0)
    }
}

/// Reference optimum used to score iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumOracle {
    pub theta: Vec<f64>,
    /// Exact objective; enables the `h_gap` column.
    pub objective: Option<MeanVarianceObjective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGRecord {
    pub k: usize,
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub m_k: usize,
    pub grad_norm: f64,
    pub err_sq: Option<f64>,
    pub h_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SGMetadata {
    pub risk: String,
    pub seed: u64,
    /// `a <= 1/2`: outside the range covered by the convergence theory.
    pub step_exponent_boundary: bool,
    /// The feasible set is not compact.
    pub unbounded_feasible_set: bool,
    /// Iterations whose root finder stopped with a residual above `ε`.
    pub residual_warnings: usize,
    /// Shortfall root searches that exceeded the iteration-complexity bound.
    pub complexity_bound_violations: usize,
    pub total_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGTrace {
    pub records: Vec<SGRecord>,
    pub final_theta: Vec<f64>,
    pub metadata: SGMetadata,
}

/// Run `n` projected SG steps `θ_k = Π(θ_{k-1} - α_k ĝ_k)` where `ĝ_k` comes
/// from `2m_k` fresh draws (auxiliary first, primary second).
pub fn sg_run(
    scenario: &dyn ScenarioModel,
    risk: &RiskKind,
    cfg: &SGConfig,
    theta0: &[f64],
    oracle: Option<&OptimumOracle>,
) -> Result<SGTrace> {
    cfg.validate()?;
    if theta0.len() != scenario.dim() {
        return Err(RiskError::DimensionMismatch {
            expected: scenario.dim(),
            got: theta0.len(),
        });
    }
    if let Some(o) = oracle {
        if o.theta.len() != scenario.dim() {
            return Err(RiskError::DimensionMismatch {
                expected: scenario.dim(),
                got: o.theta.len(),
            });
        }
    }
    let reference_value = match oracle.and_then(|o| o.objective.as_ref().map(|f| (f, &o.theta))) {
        Some((f, t)) => Some(f.value(t)?),
        None => None,
    };

    let mut theta = if cfg.projection.contains(theta0) {
        theta0.to_vec()
    } else {
        cfg.projection.project(theta0)?
    };
    let mut rng = scenario.stream(cfg.seed);
    let mut metadata = SGMetadata {
        risk: risk.name(),
        seed: cfg.seed,
        step_exponent_boundary: cfg.a <= 0.5,
        unbounded_feasible_set: !cfg.projection.is_compact(),
        ..SGMetadata::default()
    };
    let mut records = Vec::with_capacity(cfg.horizon);

    for k in 1..=cfg.horizon {
        let at = |source: RiskError| RiskError::Iteration {
            iteration: k,
            source: Box::new(source),
        };
        let m_k = cfg.batch_size(k);
        let delta = cfg.d1 / (m_k as f64).sqrt();
        let batches = DoubleBatch::draw(scenario, &mut rng, m_k).map_err(at)?;
        metadata.total_samples += 2 * m_k;
        let grad = risk
            .gradient(scenario, &theta, &batches, delta, cfg.epsilon)
            .map_err(at)?;
        if grad.estimate.warning == Some(EstimateWarning::ResidualUnattainable) {
            metadata.residual_warnings += 1;
        }
        if matches!(risk, RiskKind::Ubsr(_)) && !grad.estimate.within_complexity_bound(delta) {
            metadata.complexity_bound_violations += 1;
        }
        let alpha = cfg.step(k);
        let stepped: Vec<f64> = theta.iter().zip(&grad.vector).map(|(t, g)| t - alpha * g).collect();
        theta = cfg.projection.project(&stepped).map_err(at)?;

        let grad_norm = grad.vector.iter().map(|g| g * g).sum::<f64>().sqrt();
        let err_sq = oracle.map(|o| theta.iter().zip(&o.theta).map(|(a, b)| (a - b).powi(2)).sum());
        let h_gap = match (oracle.and_then(|o| o.objective.as_ref()), reference_value) {
            (Some(f), Some(v)) => Some(f.value(&theta)? - v),
            _ => None,
        };
        records.push(SGRecord {
            k,
            theta: theta.clone(),
            alpha,
            m_k,
            grad_norm,
            err_sq,
            h_gap,
        });
    }

    Ok(SGTrace {
        records,
        final_theta: theta,
        metadata,
    })
}

impl SGTrace {
    pub fn dim(&self) -> usize {
        self.final_theta.len()
    }

    pub fn final_err_sq(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.err_sq)
    }

    /// CSV with columns `k, theta_0.., alpha_k, m_k, grad_norm` and, when
    /// present, `err_sq`, `h_gap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.dim();
        let with_err = self.records.iter().any(|r| r.err_sq.is_some());
        let with_gap = self.records.iter().any(|r| r.h_gap.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((0..d).map(|i| format!("theta_{i}")));
        header.extend(["alpha_k", "m_k", "grad_norm"].map(String::from));
        if with_err {
            header.push("err_sq".into());
        }
        if with_gap {
            header.push("h_gap".into());
        }
        w.write_record(&header).map_err(io_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.theta.iter().map(f64::to_string));
            row.extend([r.alpha.to_string(), r.m_k.to_string(), r.grad_norm.to_string()]);
            if with_err {
                row.push(opt(r.err_sq));
            }
            if with_gap {
                row.push(opt(r.h_gap));
            }
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| RiskError::Data(e.to_string()))
    }

    /// Parse records written by [`SGTrace::write_csv`]. Metadata is not part
    /// of the CSV and comes back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(io_err)?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let d = header.iter().filter(|h| h.starts_with("theta_")).count();
        let theta_at: Vec<usize> = (0..d)
            .map(|i| col(&format!("theta_{i}")).ok_or_else(|| RiskError::Data(format!("missing theta_{i}"))))
            .collect::<Result<_>>()?;
        let need = |name: &str| col(name).ok_or_else(|| RiskError::Data(format!("missing column {name}")));
        let (k_at, alpha_at, m_at, g_at) = (need("k")?, need("alpha_k")?, need("m_k")?, need("grad_norm")?);
        let (err_at, gap_at) = (col("err_sq"), col("h_gap"));

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(io_err)?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|e| RiskError::Data(format!("bad number in column {i}: {e}")))
            };
            let optional = |i: Option<usize>| -> Result<Option<f64>> {
                match i.and_then(|i| row.get(i)) {
                    None | Some("") => Ok(None),
                    Some(s) => s.parse().map(Some).map_err(|e| RiskError::Data(format!("bad number: {e}"))),
                }
            };
            let int = |i: usize| -> Result<usize> {
                row.get(i)
                    .unwrap_or("")
                    .parse::<usize>()
                    .map_err(|e| RiskError::Data(format!("bad integer in column {i}: {e}")))
            };
            records.push(SGRecord {
                k: int(k_at)?,
                theta: theta_at.iter().map(|&i| num(i)).collect::<Result<_>>()?,
                alpha: num(alpha_at)?,
                m_k: int(m_at)?,
                grad_norm: num(g_at)?,
                err_sq: optional(err_at)?,
                h_gap: optional(gap_at)?,
            });
        }
        let final_theta = records.last().map(|r| r.theta.clone()).unwrap_or_default();
        Ok(SGTrace {
            records,
            final_theta,
            metadata: SGMetadata::default(),
        })
    }
}

fn io_err(e: csv::Error) -> RiskError {
    RiskError::Data(e.to_string())
}

const MV_GRADIENT_MAP_TOL: f64 = 1e-10;
const MV_MAX_ITERATIONS: usize = 1_000_000;

/// Exact minimizer of `-θᵀμ + (β/2) θᵀΣθ` over the feasible set, by projected
/// gradient descent with step `1/L`, `L = β λ_max(Σ)`.
pub fn deterministic_mv_optimum(
    mu: &[f64],
    sigma: &[Vec<f64>],
    beta: f64,
    projection: &ProjectionSpec,
) -> Result<Vec<f64>> {
    let d = mu.len();
    let sigma = matrix_from_rows(sigma, d)?;
    let objective = MeanVarianceObjective::new(nalgebra::DVector::from_column_slice(mu), sigma, beta)?;
    mv_optimum(&objective, projection)
}

/// [`deterministic_mv_optimum`] on a prepared objective.
pub fn mv_optimum(objective: &MeanVarianceObjective, projection: &ProjectionSpec) -> Result<Vec<f64>> {
    projection.validate()?;
    let d = objective.dim();
    check_spd(&objective.sigma)?;
    let lipschitz = objective.beta * objective.sigma.clone().symmetric_eigen().eigenvalues.max();
    let start = match projection {
        ProjectionSpec::Simplex { .. } => vec![1.0 / d as f64; d],
        _ => vec![0.0; d],
    };
    let mut theta = projection.project(&start)?;
    for _ in 0..MV_MAX_ITERATIONS {
        let g = objective.gradient(&theta)?;
        let stepped: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - gi / lipschitz).collect();
        let next = projection.project(&stepped)?;
        let map_norm = lipschitz * next.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        theta = next;
        if map_norm <= MV_GRADIENT_MAP_TOL {
            break;
        }
    }
    Ok(theta)
}

fn check_spd(sigma: &DMatrix<f64>) -> Result<()> {
    let symmetric = (sigma - sigma.transpose()).amax() <= 1e-12 * sigma.amax().max(1.0);
    if !symmetric || sigma.clone().cholesky().is_none() {
        return Err(RiskError::NotPositiveDefinite);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{linear_portfolio, synthetic_gaussian, EmpiricalNoiseSpec, NoiseSpec};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn simplex_projection_examples() {
        let s3 = ProjectionSpec::Simplex { dim: 3 };
        assert!(close(&s3.project(&[0.5, 0.5, 0.5]).unwrap(), &[1.0 / 3.0; 3], 1e-15));
        assert!(close(&s3.project(&[0.2, 0.3, 0.5]).unwrap(), &[0.2, 0.3, 0.5], 1e-15));
        // grid brute force on the 1-simplex
        let v = [2.0, -1.0];
        let best = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .min_by(|x, y| {
                let f = |t: f64| (t - v[0]).powi(2) + (1.0 - t - v[1]).powi(2);
                f(*x).total_cmp(&f(*y))
            })
            .unwrap();
        let p = ProjectionSpec::Simplex { dim: 2 }.project(&v).unwrap();
        assert!(close(&p, &[best, 1.0 - best], 1e-12));
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn other_projections() {
        let b = ProjectionSpec::Box {
            lo: vec![0.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        assert_eq!(b.project(&[2.0, -3.0]).unwrap(), vec![1.0, -1.0]);
        let ball = ProjectionSpec::Ball {
            center: vec![1.0, 1.0],
            radius: 1.0,
        };
        assert!(close(&ball.project(&[4.0, 5.0]).unwrap(), &[1.6, 1.8], 1e-15));
        assert_eq!(ball.project(&[1.5, 1.0]).unwrap(), vec![1.5, 1.0]);
        assert_eq!(ProjectionSpec::Identity.project(&[7.0]).unwrap(), vec![7.0]);
        assert!(matches!(
            ProjectionSpec::Simplex { dim: 3 }.project(&[1.0]),
            Err(RiskError::DimensionMismatch { .. })
        ));
        assert!(ProjectionSpec::Box { lo: vec![1.0], hi: vec![0.0] }.validate().is_err());
    }

    fn projections() -> impl Strategy<Value = ProjectionSpec> {
        prop_oneof![
            Just(ProjectionSpec::Simplex { dim: 4 }),
            Just(ProjectionSpec::Box {
                lo: vec![-1.0, 0.0, 0.5, -2.0],
                hi: vec![1.0, 0.0, 3.0, 2.0]
            }),
            Just(ProjectionSpec::Ball {
                center: vec![0.5, -0.5, 1.0, 0.0],
                radius: 1.5
            }),
            Just(ProjectionSpec::Identity),
        ]
    }

    proptest! {
        #[test]
        fn projections_are_non_expansive(
            p in projections(),
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let pu = p.project(&u).unwrap();
            let pv = p.project(&v).unwrap();
            let dp = pu.iter().zip(&pv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let d = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dp <= d + 1e-12);
            prop_assert!(p.contains(&pu));
            // idempotent
            prop_assert!(close(&p.project(&pu).unwrap(), &pu, 1e-12));
        }

        #[test]
        fn simplex_projection_is_nearest(v in prop::collection::vec(-3.0f64..3.0, 3), w in prop::collection::vec(0.0f64..1.0, 3)) {
            let s = ProjectionSpec::Simplex { dim: 3 };
            let p = s.project(&v).unwrap();
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-6);
            let q: Vec<f64> = w.iter().map(|x| x / total).collect();
            let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            prop_assert!(dist(&p) <= dist(&q) + 1e-12);
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(BatchSchedule::Increasing.batch_size(7, 3), 21);
        assert_eq!(BatchSchedule::Constant { m: 5 }.batch_size(7, 3), 5);
        assert_eq!(BatchSchedule::Power { p: 0.5 }.batch_size(10, 1), 4);
        assert_eq!(BatchSchedule::Power { p: 1.5 }.batch_size(4, 1), 8);
        let mut cfg = SGConfig::new(5, ProjectionSpec::Identity, 0);
        cfg.c = 2.0;
        cfg.a = 0.5;
        assert!((cfg.step(4) - 1.0).abs() < 1e-15);
        cfg.validate().unwrap();
        cfg.a = 0.4;
        assert!(cfg.validate().is_err());
        cfg.a = 1.0;
        cfg.c = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mv_optimum_examples() {
        let simplex = |d| ProjectionSpec::Simplex { dim: d };
        let eye = |d: usize| (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect::<Vec<Vec<f64>>>();
        let t = deterministic_mv_optimum(&[0.0; 4], &eye(4), 1.0, &simplex(4)).unwrap();
        assert!(close(&t, &[0.25; 4], 1e-12));
        let t = deterministic_mv_optimum(&[1.0], &[vec![2.0]], 0.5, &ProjectionSpec::Identity).unwrap();
        assert!(close(&t, &[1.0], 1e-10));

        // brute force over the 1-simplex at resolution 1e-4
        let f = |t: f64| -t + 0.5 * (t * t + (1.0 - t).powi(2));
        let grid = (0..=10_000).map(|i| i as f64 / 1e4).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        let t = deterministic_mv_optimum(&[1.0, 0.0], &eye(2), 1.0, &simplex(2)).unwrap();
        assert!(close(&t, &[grid, 1.0 - grid], 1e-4));
        assert!(close(&t, &[1.0, 0.0], 1e-12));

        // an interior case: μ = (0.3, 0), Σ = I, β = 1 → KKT gives (0.65, 0.35)
        let f = |t: f64| -0.3 * t + 0.5 * (t * t + (1.0 - t).powi(2));
        let grid = (0..=10_000).map(|i| i as f64 / 1e4).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        let t = deterministic_mv_optimum(&[0.3, 0.0], &eye(2), 1.0, &simplex(2)).unwrap();
        assert!(close(&t, &[grid, 1.0 - grid], 1e-4));

        assert_eq!(
            deterministic_mv_optimum(&[0.0, 0.0], &[vec![1.0, 2.0], vec![2.0, 1.0]], 1.0, &simplex(2)),
            Err(RiskError::NotPositiveDefinite)
        );
    }

    fn synthetic_setup(d: usize) -> (crate::scenarios::LinearPortfolio, OptimumOracle) {
        let spec = synthetic_gaussian(d, crate::scenarios::SYNTHETIC_RIDGE, crate::scenarios::SYNTHETIC_MATRIX_SEED, 11);
        let objective = MeanVarianceObjective::from_gaussian(&spec, 0.5).unwrap();
        let theta = mv_optimum(&objective, &ProjectionSpec::Simplex { dim: d }).unwrap();
        (
            linear_portfolio(&NoiseSpec::Gaussian(spec)).unwrap(),
            OptimumOracle {
                theta,
                objective: Some(objective),
            },
        )
    }

    #[test]
    fn sample_count_and_feasibility() {
        let (model, oracle) = synthetic_setup(3);
        let cfg = SGConfig::new(30, ProjectionSpec::Simplex { dim: 3 }, 5);
        let risk = RiskKind::Ubsr(LossSpec::entropic(0.5).unwrap());
        let trace = sg_run(&model, &risk, &cfg, &[1.0, 0.0, 0.0], Some(&oracle)).unwrap();
        assert_eq!(trace.records.len(), 30);
        assert_eq!(trace.metadata.total_samples, 30 * 31);
        assert_eq!(trace.records.iter().map(|r| 2 * r.m_k).sum::<usize>(), 30 * 31);
        assert!(trace.records.iter().all(|r| cfg.projection.contains(&r.theta)));
        assert!(trace.records.iter().all(|r| r.err_sq.is_some() && r.h_gap.unwrap() >= -1e-12));
        assert!(!trace.metadata.step_exponent_boundary);
        assert_eq!(trace.metadata.complexity_bound_violations, 0);
    }

    #[test]
    fn identical_config_gives_identical_trace() {
        let (model, oracle) = synthetic_setup(4);
        let cfg = SGConfig::new(25, ProjectionSpec::Simplex { dim: 4 }, 99);
        for risk in [
            RiskKind::Ubsr(LossSpec::entropic(0.5).unwrap()),
            RiskKind::Oce(UtilitySpec::Entropic { beta: 0.5 }),
        ] {
            let a = sg_run(&model, &risk, &cfg, &[0.25; 4], Some(&oracle)).unwrap();
            let b = sg_run(&model, &risk, &cfg, &[0.25; 4], Some(&oracle)).unwrap();
            assert_eq!(a, b);
            let mut other = cfg.clone();
            other.seed = 100;
            assert_ne!(a, sg_run(&model, &risk, &other, &[0.25; 4], Some(&oracle)).unwrap());
        }
    }

    #[test]
    fn zero_noise_reaches_best_vertex() {
        let z0 = vec![0.1, 0.5, -0.2, 0.3];
        let model = linear_portfolio(&NoiseSpec::Empirical(EmpiricalNoiseSpec {
            returns: vec![z0],
            noise_scale: 0.0,
            seed: 1,
        }))
        .unwrap();
        let mut cfg = SGConfig::new(200, ProjectionSpec::Simplex { dim: 4 }, 3);
        cfg.c = 5.0;
        for risk in [
            RiskKind::Ubsr(LossSpec::entropic(1.0).unwrap()),
            RiskKind::Oce(UtilitySpec::Entropic { beta: 1.0 }),
        ] {
            let trace = sg_run(&model, &risk, &cfg, &[0.25; 4], None).unwrap();
            let alpha_n = cfg.step(cfg.horizon);
            let dist = trace
                .final_theta
                .iter()
                .zip([0.0, 1.0, 0.0, 0.0])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dist <= alpha_n, "{risk:?}: {dist}");
            assert!(trace.records.iter().all(|r| r.err_sq.is_none() && r.h_gap.is_none()));
        }
    }

    #[test]
    fn csv_round_trip() {
        let (model, oracle) = synthetic_setup(3);
        let mut cfg = SGConfig::new(12, ProjectionSpec::Simplex { dim: 3 }, 8);
        cfg.a = 0.5;
        let trace = sg_run(
            &model,
            &RiskKind::Oce(UtilitySpec::Entropic { beta: 0.5 }),
            &cfg,
            &[0.2, 0.3, 0.5],
            Some(&oracle),
        )
        .unwrap();
        assert!(trace.metadata.step_exponent_boundary);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,theta_0,theta_1,theta_2,alpha_k,m_k,grad_norm,err_sq,h_gap\n"));
        let back = SGTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records, trace.records);
        assert_eq!(back.final_theta, trace.final_theta);

        let plain = SGTrace {
            records: trace.records.iter().map(|r| SGRecord { err_sq: None, h_gap: None, ..r.clone() }).collect(),
            ..trace.clone()
        };
        let mut buf = Vec::new();
        plain.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("k,theta_0,theta_1,theta_2,alpha_k,m_k,grad_norm\n"));
        assert_eq!(SGTrace::read_csv(buf.as_slice()).unwrap().records, plain.records);
    }

    #[test]
    fn estimator_failure_reports_iteration() {
        let model = linear_portfolio(&NoiseSpec::Empirical(EmpiricalNoiseSpec {
            returns: vec![vec![0.0, 0.0]],
            noise_scale: 0.0,
            seed: 1,
        }))
        .unwrap();
        let cfg = SGConfig::new(3, ProjectionSpec::Simplex { dim: 2 }, 0);
        let risk = RiskKind::Ubsr(LossSpec::value_at_risk(0.1).unwrap());
        match sg_run(&model, &risk, &cfg, &[0.5, 0.5], None) {
            Err(RiskError::Iteration { iteration: 1, source }) => {
                assert!(matches!(*source, RiskError::UnsupportedDerivative(_)))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn risk_kind_json() {
        let r: RiskKind = serde_json::from_str(r#"{"measure":"ubsr","spec":{"kind":"entropic","beta":0.5}}"#).unwrap();
        assert_eq!(r, RiskKind::Ubsr(LossSpec::entropic(0.5).unwrap()));
        let r: RiskKind = serde_json::from_str(r#"{"measure":"oce","spec":{"kind":"cvar_hinge","alpha":0.9}}"#).unwrap();
        assert_eq!(r, RiskKind::Oce(UtilitySpec::CvarHinge { alpha: 0.9 }));
        let back: RiskKind = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
