//! Double-sampling gradient estimators for `h(θ) = ρ(F(θ, ξ))`.
//!
//! Each estimator takes two independent noise batches. The auxiliary batch
//! only feeds the root finder that estimates the risk level at `θ`; the
//! primary batch only feeds the weighted average of `∇F` built around that
//! root.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::estimation::{self, BisectionConfig, RiskEstimate};
use crate::risk_functions::{LossSpec, UtilitySpec};
use crate::scenarios::{NoiseBatch, NoiseRng, ScenarioModel};

/// Auxiliary (root) and primary (gradient) noise draws of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleBatch {
    pub auxiliary: NoiseBatch,
    pub primary: NoiseBatch,
}

impl DoubleBatch {
    pub fn new(auxiliary: NoiseBatch, primary: NoiseBatch) -> Result<Self> {
        if auxiliary.len() != primary.len() || auxiliary.dim() != primary.dim() {
            return Err(RiskError::DimensionMismatch {
                expected: auxiliary.len(),
                got: primary.len(),
            });
        }
        if auxiliary.is_empty() {
            return Err(RiskError::EmptyBatch);
        }
        Ok(Self { auxiliary, primary })
    }

    /// Draws `2m` samples from one stream: the first `m` become the
    /// auxiliary batch, the next `m` the primary batch.
    pub fn draw(model: &dyn ScenarioModel, rng: &mut NoiseRng, m: usize) -> Result<Self> {
        let auxiliary = model.draw_batch(rng, m);
        let primary = model.draw_batch(rng, m);
        Self::new(auxiliary, primary)
    }

    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub batch_size: usize,
    /// Root estimated from the auxiliary batch.
    pub root_used: f64,
    /// `Σ l'(-F(θ, z_j) - t)` over the primary batch; shortfall risk only.
    pub denominator: Option<f64>,
    pub estimate: RiskEstimate,
}

fn check_inputs(scenario: &dyn ScenarioModel, theta: &[f64], batches: &DoubleBatch) -> Result<()> {
    if theta.len() != scenario.dim() {
        return Err(RiskError::DimensionMismatch {
            expected: scenario.dim(),
            got: theta.len(),
        });
    }
    if batches.primary.dim() != scenario.noise_dim() {
        return Err(RiskError::DimensionMismatch {
            expected: scenario.noise_dim(),
            got: batches.primary.dim(),
        });
    }
    if batches.is_empty() {
        return Err(RiskError::EmptyBatch);
    }
    Ok(())
}

fn objective_values(scenario: &dyn ScenarioModel, theta: &[f64], batch: &NoiseBatch) -> Vec<f64> {
    batch.rows().map(|z| scenario.value(theta, z)).collect()
}

/// Sum `w(F(θ, z_j)) ∇F(θ, z_j)` over the primary batch, plus `Σ w`.
fn weighted_gradient_sum<W>(
    scenario: &dyn ScenarioModel,
    theta: &[f64],
    batch: &NoiseBatch,
    mut weight: W,
) -> Result<(Vec<f64>, f64)>
where
    W: FnMut(f64) -> Result<f64>,
{
    let d = scenario.dim();
    let mut grad = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    for z in batch.rows() {
        let f = scenario.evaluate(theta, z, &mut grad);
        let w = weight(f)?;
        total += w;
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += w * g;
        }
    }
    Ok((acc, total))
}

fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(RiskError::NonFinite {
            context: what.to_string(),
        })
    }
}

/// Shortfall-risk gradient estimate
/// `Ĵ = -Σ l'(-F_j - t_m) ∇F_j / Σ l'(-F_j - t_m)`, with `t_m` from the
/// auxiliary batch at tolerance `delta`.
pub fn ubsr_grad(
    scenario: &dyn ScenarioModel,
    loss: &LossSpec,
    theta: &[f64],
    batches: &DoubleBatch,
    delta: f64,
) -> Result<GradientEstimate> {
    check_inputs(scenario, theta, batches)?;
    let aux = objective_values(scenario, theta, &batches.auxiliary);
    let estimate = estimation::ubsr_sb_generic(loss, &aux, &BisectionConfig::new(delta))?;
    let t = estimate.root;
    let (num, den) = weighted_gradient_sum(scenario, theta, &batches.primary, |f| loss.deriv(-f - t))?;
    if !(den > 0.0) || !den.is_finite() {
        return Err(RiskError::ZeroDenominator(den));
    }
    let vector: Vec<f64> = num.iter().map(|n| -n / den).collect();
    ensure_finite(&vector, "shortfall gradient estimate")?;
    Ok(GradientEstimate {
        vector,
        batch_size: batches.len(),
        root_used: t,
        denominator: Some(den),
        estimate,
    })
}

/// Certainty-equivalent gradient estimate
/// `Q̂ = -(1/m) Σ u'(-F_j - t̂_m) ∇F_j`, with `t̂_m` from the auxiliary batch
/// at tolerances `(delta, epsilon)`. An unattainable residual is carried in
/// `estimate.warning` rather than failing.
pub fn oce_grad(
    scenario: &dyn ScenarioModel,
    utility: &UtilitySpec,
    theta: &[f64],
    batches: &DoubleBatch,
    delta: f64,
    epsilon: f64,
) -> Result<GradientEstimate> {
    check_inputs(scenario, theta, batches)?;
    let aux = objective_values(scenario, theta, &batches.auxiliary);
    let cfg = BisectionConfig::new(delta).with_epsilon(epsilon);
    let estimate = estimation::oce_sb_slice(utility, &aux, &cfg)?;
    let t = estimate.root;
    let (num, _) = weighted_gradient_sum(scenario, theta, &batches.primary, |f| Ok(utility.deriv(-f - t)))?;
    let m = batches.len() as f64;
    let vector: Vec<f64> = num.iter().map(|n| -n / m).collect();
    ensure_finite(&vector, "certainty-equivalent gradient estimate")?;
    Ok(GradientEstimate {
        vector,
        batch_size: batches.len(),
        root_used: t,
        denominator: None,
        estimate,
    })
}
