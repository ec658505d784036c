//! Sample-average estimators of shortfall risk and certainty equivalents.
//!
//! Every estimator reduces to locating the smallest root of the empirical
//! map `ĝ(t) = (1/m) Σ l(-z_i - t) - λ`, which is non-increasing in `t`.
//! The search runs in two phases: a geometric bracket search anchored at
//! the origin, then bisection down to half-width `δ`. The certainty
//! equivalent solver additionally keeps bisecting until the residual
//! `|ĝ|` falls below `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RiskError};
use crate::risk_functions::{Evaluation, LossSpec, ShortfallLoss, UtilitySpec};

/// Where a batch of samples came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

/// Non-empty ordered collection of finite i.i.d. samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    values: Vec<f64>,
    provenance: Provenance,
}

impl SampleBatch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_provenance(values, Provenance::default())
    }

    pub fn with_provenance(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(RiskError::EmptyBatch);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RiskError::NonFinite {
                context: format!("sample {i}"),
            });
        }
        Ok(Self { values, provenance })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The batch translated by a constant cash amount.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::with_provenance(
            self.values.iter().map(|v| v + c).collect(),
            self.provenance.clone(),
        )
    }
}

/// Tolerances and iteration guards for search-and-bisect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Half-width tolerance on the root.
    pub delta: f64,
    /// Residual tolerance; only the certainty-equivalent solver reads it.
    pub epsilon: Option<f64>,
    pub max_bracket_doublings: u32,
    pub max_bisections: u32,
}

impl BisectionConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            epsilon: None,
            max_bracket_doublings: 128,
            max_bisections: 200,
        }
    }

    /// `δ = 1/√m`, `ε = 1`.
    pub fn for_sample_size(m: usize) -> Self {
        Self::new(1.0 / (m.max(1) as f64).sqrt()).with_epsilon(1.0)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(invalid(format!("epsilon must be positive, got {eps}")));
            }
        }
        if self.max_bracket_doublings == 0 || self.max_bisections == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// Non-fatal conditions attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateWarning {
    /// The bracket is `δ`-tight but `|ĝ|` never entered `[-ε, ε]`.
    ResidualUnattainable,
    /// The residual at the returned root overflowed and was clamped.
    SaturatedResidual,
}

/// A risk estimate with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// The risk value: the root for shortfall risk, `ŝ_m` for the OCE.
    pub value: f64,
    /// The bisection output.
    pub root: f64,
    /// Final bracket `(low, high)`.
    pub bracket: (f64, f64),
    /// Bracket produced by the search phase, before bisection.
    pub search_bracket: (f64, f64),
    pub doublings: u32,
    pub bisections: u32,
    /// `ĝ(root)`.
    pub residual: f64,
    pub converged: bool,
    pub warning: Option<EstimateWarning>,
}

impl RiskEstimate {
    /// Whether the iteration count respects
    /// `2·(1 + log2(max(|high|, |low|) / δ)) + 4` for the search bracket.
    pub fn within_complexity_bound(&self, delta: f64) -> bool {
        let (lo, hi) = self.search_bracket;
        let reach = lo.abs().max(hi.abs());
        let bound = 2.0 * (1.0 + (reach / delta).log2()) + 4.0;
        ((self.doublings + self.bisections) as f64) <= bound
    }

    /// Final bracket width.
    pub fn width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

/// Result of the bracket search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub low: f64,
    pub high: f64,
    pub doublings: u32,
}

/// `ĝ(t) = (1/m) Σ l(-z_i - t) - λ`, flagged when any term saturated.
pub fn saa_g<L: ShortfallLoss + ?Sized>(loss: &L, samples: &[f64], t: f64) -> Evaluation {
    let mut sum = 0.0;
    let mut saturated = false;
    for &z in samples {
        let e = loss.loss(-z - t);
        sum += e.value;
        saturated |= e.saturated;
    }
    Evaluation {
        value: sum / samples.len() as f64 - loss.level(),
        saturated,
    }
}

/// Bracket the smallest root of a non-increasing map.
///
/// Starts from `(0, 1)` when `g(0) > 0` and doubles `high`, otherwise from
/// `(-1, 0)` doubling `low`. On success `g(low) > 0 >= g(high)`, so at most
/// one of the two endpoints ever moves.
pub fn bracket_root<G>(mut g: G, cfg: &BisectionConfig) -> Result<Bracket>
where
    G: FnMut(f64) -> f64,
{
    let g0 = g(0.0);
    if g0.is_nan() {
        return Err(RiskError::NonFinite {
            context: "empirical root map at t = 0".into(),
        });
    }
    let (mut low, mut high) = if g0 > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut doublings = 0u32;
    let fail = |doublings, g_lo: f64, g_hi: f64| RiskError::BracketNotFound {
        doublings,
        level: 0.0,
        range_lo: g_hi.min(g_lo),
        range_hi: g_hi.max(g_lo),
    };
    if g0 > 0.0 {
        loop {
            let gh = g(high);
            if gh.is_nan() {
                return Err(RiskError::NonFinite {
                    context: format!("empirical root map at t = {high}"),
                });
            }
            if gh <= 0.0 {
                break;
            }
            if doublings >= cfg.max_bracket_doublings {
                return Err(fail(doublings, g0, gh));
            }
            high *= 2.0;
            doublings += 1;
        }
    } else {
        loop {
            let gl = g(low);
            if gl.is_nan() {
                return Err(RiskError::NonFinite {
                    context: format!("empirical root map at t = {low}"),
                });
            }
            if gl > 0.0 {
                break;
            }
            if doublings >= cfg.max_bracket_doublings {
                return Err(fail(doublings, gl, g0));
            }
            low *= 2.0;
            doublings += 1;
        }
    }
    Ok(Bracket {
        low,
        high,
        doublings,
    })
}

struct Bisected {
    low: f64,
    high: f64,
    root: f64,
    residual: Evaluation,
    bisections: u32,
    residual_ok: bool,
}

/// Bisection on the sign of `g`. Without `epsilon` this runs while the
/// bracket is wider than `2δ`; with `epsilon` it also runs while the
/// residual at the midpoint exceeds `ε`.
fn bisect<G>(mut g: G, bracket: &Bracket, cfg: &BisectionConfig, epsilon: Option<f64>) -> Result<Bisected>
where
    G: FnMut(f64) -> Evaluation,
{
    let (mut low, mut high) = (bracket.low, bracket.high);
    let mut mid = 0.5 * (low + high);
    let mut g_mid = g(mid);
    let mut bisections = 0u32;
    let residual_bad = |r: &Evaluation| match epsilon {
        Some(eps) => r.value.abs() > eps || r.saturated,
        None => false,
    };
    while high - low > 2.0 * cfg.delta || residual_bad(&g_mid) {
        if bisections >= cfg.max_bisections {
            break;
        }
        if g_mid.value > 0.0 {
            low = mid;
        } else {
            high = mid;
        }
        bisections += 1;
        let next = 0.5 * (low + high);
        if next == low || next == high {
            // floating-point resolution exhausted
            mid = next;
            g_mid = g(mid);
            break;
        }
        mid = next;
        g_mid = g(mid);
    }
    if high - low > 2.0 * cfg.delta && !(mid == low || mid == high) {
        return Err(RiskError::MaxIterations {
            iterations: bisections,
            delta: cfg.delta,
        });
    }
    Ok(Bisected {
        low,
        high,
        root: mid,
        residual: g_mid,
        bisections,
        residual_ok: !residual_bad(&g_mid),
    })
}

fn search_and_bisect<L: ShortfallLoss + ?Sized>(
    loss: &L,
    samples: &[f64],
    cfg: &BisectionConfig,
    epsilon: Option<f64>,
) -> Result<RiskEstimate> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(RiskError::EmptyBatch);
    }
    let bracket = bracket_root(|t| saa_g(loss, samples, t).value, cfg).map_err(|e| match e {
        RiskError::BracketNotFound {
            doublings,
            range_lo,
            range_hi,
            ..
        } => RiskError::BracketNotFound {
            doublings,
            level: loss.level(),
            range_lo: range_lo + loss.level(),
            range_hi: range_hi + loss.level(),
        },
        other => other,
    })?;
    let b = bisect(|t| saa_g(loss, samples, t), &bracket, cfg, epsilon)?;
    let warning = if b.residual.saturated {
        Some(EstimateWarning::SaturatedResidual)
    } else if !b.residual_ok {
        Some(EstimateWarning::ResidualUnattainable)
    } else {
        None
    };
    Ok(RiskEstimate {
        value: b.root,
        root: b.root,
        bracket: (b.low, b.high),
        search_bracket: (bracket.low, bracket.high),
        doublings: bracket.doublings,
        bisections: b.bisections,
        residual: b.residual.value,
        converged: warning.is_none(),
        warning,
    })
}

/// Shortfall risk estimate `t_m` within `δ` of the smallest root of `ĝ`.
pub fn ubsr_sb(loss: &LossSpec, batch: &SampleBatch, cfg: &BisectionConfig) -> Result<RiskEstimate> {
    ubsr_sb_generic(loss, batch.values(), cfg)
}

/// [`ubsr_sb`] for any [`ShortfallLoss`] over a raw sample slice.
pub fn ubsr_sb_generic<L: ShortfallLoss + ?Sized>(
    loss: &L,
    samples: &[f64],
    cfg: &BisectionConfig,
) -> Result<RiskEstimate> {
    search_and_bisect(loss, samples, cfg, None)
}

/// Root of the certainty-equivalent first-order condition,
/// `(1/m) Σ u'(-z_j - t) = 1`, to within `δ` and residual `ε`.
///
/// When `u'` jumps the residual may never fall below `ε`; the estimate is
/// then returned with `converged = false` and a
/// [`EstimateWarning::ResidualUnattainable`] warning.
pub fn oce_sb(utility: &UtilitySpec, batch: &SampleBatch, cfg: &BisectionConfig) -> Result<RiskEstimate> {
    oce_sb_slice(utility, batch.values(), cfg)
}

pub(crate) fn oce_sb_slice(
    utility: &UtilitySpec,
    samples: &[f64],
    cfg: &BisectionConfig,
) -> Result<RiskEstimate> {
    utility.validate()?;
    let epsilon = cfg.epsilon.unwrap_or(1.0);
    search_and_bisect(&utility.marginal(), samples, cfg, Some(epsilon))
}

/// Certainty-equivalent estimate `ŝ_m = t̂ + (1/m) Σ u(-z_j - t̂)`.
pub fn oce_saa(utility: &UtilitySpec, batch: &SampleBatch, cfg: &BisectionConfig) -> Result<RiskEstimate> {
    oce_saa_slice(utility, batch.values(), cfg)
}

pub(crate) fn oce_saa_slice(
    utility: &UtilitySpec,
    samples: &[f64],
    cfg: &BisectionConfig,
) -> Result<RiskEstimate> {
    let mut est = oce_sb_slice(utility, samples, cfg)?;
    let t = est.root;
    let mean_u = samples.iter().map(|z| utility.eval(-z - t)).sum::<f64>() / samples.len() as f64;
    est.value = t + mean_u;
    Ok(est)
}

/// Value-at-risk at level `alpha` as the Heaviside shortfall risk.
pub fn var_estimate(alpha: f64, batch: &SampleBatch, delta: f64) -> Result<RiskEstimate> {
    ubsr_sb(&LossSpec::value_at_risk(alpha)?, batch, &BisectionConfig::new(delta))
}

/// CVaR with tail mass `1 - alpha` as the hinge-utility certainty equivalent.
pub fn cvar_estimate(alpha: f64, batch: &SampleBatch, cfg: &BisectionConfig) -> Result<RiskEstimate> {
    let utility = UtilitySpec::CvarHinge { alpha };
    utility.validate()?;
    oce_saa(&utility, batch, cfg)
}

/// Window of loss arguments `-z - t` visited when `t` ranges over
/// `bracket`, padded by 10 on each side.
pub fn evaluation_window(samples: &[f64], bracket: (f64, f64)) -> (f64, f64) {
    let (zmin, zmax) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| (a.min(z), b.max(z)));
    (-zmax - bracket.1 - 10.0, -zmin - bracket.0 + 10.0)
}
