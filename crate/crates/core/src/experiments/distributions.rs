//! Sampling distributions for the estimation sweeps and their closed-form
//! risk values.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalLaw};

use crate::error::{invalid, Result, RiskError};
use crate::risk_functions::{LossKind, UtilitySpec};
use crate::optimization::RiskKind;
use crate::scenarios::NoiseRng;

/// Law of the scalar return `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistSpec {
    Gaussian { mean: f64, variance: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate.
    Exponential { rate: f64 },
    Point { value: f64 },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistSpec::Gaussian { mean, variance } => mean.is_finite() && variance >= 0.0 && variance.is_finite(),
            DistSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            DistSpec::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            DistSpec::Point { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid distribution parameters: {self}")))
        }
    }

    pub fn sample(&self, rng: &mut NoiseRng, m: usize) -> Vec<f64> {
        match *self {
            DistSpec::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                (0..m)
                    .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            DistSpec::Uniform { lo, hi } => {
                let u = Uniform::new(lo, hi).expect("validated bounds");
                (0..m).map(|_| rng.sample(u)).collect()
            }
            DistSpec::Exponential { rate } => {
                let e = Exp::new(rate).expect("validated rate");
                (0..m).map(|_| rng.sample(e)).collect()
            }
            DistSpec::Point { value } => vec![value; m],
        }
    }

    /// Lower `p`-quantile of `X`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            DistSpec::Gaussian { mean, variance } => {
                if variance == 0.0 {
                    mean
                } else {
                    NormalLaw::new(mean, variance.sqrt()).expect("validated").inverse_cdf(p)
                }
            }
            DistSpec::Uniform { lo, hi } => lo + p * (hi - lo),
            DistSpec::Exponential { rate } => -(-p).ln_1p() / rate,
            DistSpec::Point { value } => value,
        }
    }

    /// `inf{t : P(X + t < 0) <= α}`, the negated `α`-quantile.
    pub fn value_at_risk(&self, alpha: f64) -> f64 {
        -self.quantile(alpha)
    }

    /// Certainty equivalent of the hinge `u(x) = x⁺/(1-α)`: the negated mean
    /// of `X` over its lower tail of mass `1 - α`.
    pub fn hinge_cvar(&self, alpha: f64) -> f64 {
        let p = 1.0 - alpha;
        match *self {
            DistSpec::Gaussian { mean, variance } => {
                if variance == 0.0 {
                    return -mean;
                }
                let sd = variance.sqrt();
                let std = NormalLaw::new(0.0, 1.0).expect("standard normal");
                -mean + sd * std.pdf(std.inverse_cdf(p)) / p
            }
            DistSpec::Uniform { lo, hi } => -(lo + p * (hi - lo) / 2.0),
            DistSpec::Exponential { rate } => -((1.0 - p) * (-p).ln_1p() + p) / (rate * p),
            DistSpec::Point { value } => -value,
        }
    }

    /// `β⁻¹ log E[e^{-βX}]`, infinite when the moment generating function
    /// does not exist.
    pub fn entropic(&self, beta: f64) -> f64 {
        match *self {
            DistSpec::Gaussian { mean, variance } => -mean + beta * variance / 2.0,
            DistSpec::Uniform { lo, hi } => {
                // log((e^{-β lo} - e^{-β hi}) / (β (hi - lo))), factored for stability
                let w = hi - lo;
                (-beta * lo + (-(-beta * w).exp_m1()).ln() - (beta * w).ln()) / beta
            }
            DistSpec::Exponential { rate } => (rate / (rate + beta)).ln() / beta,
            DistSpec::Point { value } => -value,
        }
    }

    /// Closed-form risk value where one is known.
    pub fn risk_value(&self, risk: &RiskKind) -> Option<f64> {
        match risk {
            RiskKind::Ubsr(loss) => match loss.kind() {
                // E[e^{-β(X+t)}] = λ  ⇒  t = entropic + ln(1/λ)/β
                LossKind::Entropic { beta } => Some(self.entropic(beta) - loss.lambda().ln() / beta),
                LossKind::Heaviside => Some(self.value_at_risk(loss.lambda())),
                _ => match self {
                    DistSpec::Point { value } => point_mass_shortfall(loss, *value),
                    _ => None,
                },
            },
            RiskKind::Oce(u) => match *u {
                UtilitySpec::Entropic { beta } => Some(self.entropic(beta)),
                UtilitySpec::CvarHinge { alpha } => Some(self.hinge_cvar(alpha)),
                _ => None,
            },
        }
    }
}

/// Shortfall risk of a constant: the unique `t` with `l(-c - t) = λ`.
fn point_mass_shortfall(loss: &crate::risk_functions::LossSpec, c: f64) -> Option<f64> {
    match loss.kind() {
        LossKind::PiecewiseLinear { a, b, c: shift } => {
            let lam = loss.lambda();
            // l(x) = a x⁺ - b x⁻ + shift; solve l(x) = λ for x
            let x = if lam >= shift { (lam - shift) / a } else { (lam - shift) / b };
            x.is_finite().then_some(-c - x)
        }
        _ => None,
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Gaussian { mean, variance } => write!(f, "gaussian:{mean},{variance}"),
            DistSpec::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            DistSpec::Exponential { rate } => write!(f, "exponential:{rate}"),
            DistSpec::Point { value } => write!(f, "point:{value}"),
        }
    }
}

/// Parses `gaussian:MEAN,VARIANCE`, `uniform:LO,HI`, `exponential:RATE` and
/// `point:VALUE`.
impl FromStr for DistSpec {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {a:?} in {s:?}: {e}"))))
                .collect::<Result<_>>()?
        };
        let spec = match (name.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("gaussian" | "normal", [mean, variance]) => DistSpec::Gaussian {
                mean: *mean,
                variance: *variance,
            },
            ("uniform", [lo, hi]) => DistSpec::Uniform { lo: *lo, hi: *hi },
            ("exponential", [rate]) => DistSpec::Exponential { rate: *rate },
            ("point", [value]) => DistSpec::Point { value: *value },
            _ => {
                return Err(invalid(format!(
                    "unknown distribution {s:?}; expected gaussian:MEAN,VAR, uniform:LO,HI, exponential:RATE or point:VALUE"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}
