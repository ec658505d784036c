//! Loss functions for shortfall risk and utility functions for certainty
//! equivalents.
//!
//! A [`LossSpec`] pairs an increasing loss `l` with its threshold `λ`; the
//! shortfall risk of `X` is the smallest cash amount `t` with
//! `E[l(-X - t)] <= λ`. A [`UtilitySpec`] describes a convex increasing
//! utility `u`; its certainty equivalent is `inf_t { t + E[u(-X - t)] }`,
//! whose minimizer is the shortfall risk under `l = u'` and `λ = 1`.
//!
//! Both feed the root finders through the [`ShortfallLoss`] trait.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RiskError};

/// Exponents above this are clamped before `exp` to keep values finite.
pub const EXP_CLAMP: f64 = 700.0;

/// A function value together with a flag telling whether the exponent had
/// to be clamped to produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub saturated: bool,
}

impl Evaluation {
    fn exact(value: f64) -> Self {
        Self {
            value,
            saturated: false,
        }
    }
}

fn clamped_exp(exponent: f64) -> Evaluation {
    if exponent > EXP_CLAMP {
        Evaluation {
            value: EXP_CLAMP.exp(),
            saturated: true,
        }
    } else {
        Evaluation::exact(exponent.exp())
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

/// An increasing function paired with a threshold, i.e. everything the
/// search-and-bisect solvers need to define `ĝ(t) = mean l(-z - t) - λ`.
pub trait ShortfallLoss {
    fn loss(&self, x: f64) -> Evaluation;

    fn level(&self) -> f64;

    /// Range of the function in closed form, when known. Used for
    /// diagnostics when bracketing fails.
    fn range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Parametric family of the shortfall loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `l(x) = exp(βx)`
    Entropic { beta: f64 },
    /// `l(x) = c + a·x⁺ - b·x⁻`
    PiecewiseLinear {
        a: f64,
        b: f64,
        #[serde(default)]
        c: f64,
    },
    /// `l(x) = (x⁺)^a / a`
    Polynomial { a: f64 },
    /// `l(x) = 1{x > 0}`
    Heaviside,
}

#[derive(Serialize, Deserialize)]
struct RawLossSpec {
    #[serde(flatten)]
    kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

/// A validated loss function with its risk threshold `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec", into = "RawLossSpec")]
pub struct LossSpec {
    kind: LossKind,
    lambda: f64,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = RiskError;

    fn try_from(raw: RawLossSpec) -> Result<Self> {
        let lambda = match (raw.lambda, raw.kind) {
            (Some(l), _) => l,
            (None, LossKind::Entropic { .. }) => 1.0,
            (None, LossKind::PiecewiseLinear { .. }) => 0.0,
            (None, _) => return Err(invalid("loss specification requires `lambda`")),
        };
        LossSpec::new(raw.kind, lambda)
    }
}

impl From<LossSpec> for RawLossSpec {
    fn from(spec: LossSpec) -> Self {
        RawLossSpec {
            kind: spec.kind,
            lambda: Some(spec.lambda),
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(invalid("lambda must be finite"));
        }
        match kind {
            LossKind::Entropic { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(invalid(format!("entropic loss needs beta > 0, got {beta}")));
                }
                if lambda <= 0.0 {
                    return Err(invalid(format!(
                        "lambda {lambda} is outside the range (0, inf) of the entropic loss"
                    )));
                }
            }
            LossKind::PiecewiseLinear { a, b, c } => {
                if !(a.is_finite() && b.is_finite() && c.is_finite()) || b < 0.0 || a < b || a <= 0.0
                {
                    return Err(invalid(format!(
                        "piecewise-linear loss needs a >= b >= 0 and a > 0, got a={a}, b={b}"
                    )));
                }
                if b == 0.0 && lambda <= c {
                    return Err(invalid(format!(
                        "lambda {lambda} is outside the range ({c}, inf) of the loss"
                    )));
                }
            }
            LossKind::Polynomial { a } => {
                if !(a > 1.0 && a.is_finite()) {
                    return Err(invalid(format!("polynomial loss needs a > 1, got {a}")));
                }
                if lambda <= 0.0 {
                    return Err(invalid(format!(
                        "lambda {lambda} is outside the range (0, inf) of the polynomial loss"
                    )));
                }
            }
            LossKind::Heaviside => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(invalid(format!(
                        "heaviside loss needs lambda in (0, 1), got {lambda}"
                    )));
                }
            }
        }
        Ok(Self { kind, lambda })
    }

    pub fn entropic(beta: f64) -> Result<Self> {
        Self::new(LossKind::Entropic { beta }, 1.0)
    }

    /// Heaviside loss at level `alpha`; its shortfall risk is `VaR_alpha`.
    pub fn value_at_risk(alpha: f64) -> Result<Self> {
        Self::new(LossKind::Heaviside, alpha)
    }

    /// Piecewise-linear loss `a·x⁺ - (1-a)·x⁻` with `λ = 0`.
    pub fn expectile(a: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&a) {
            return Err(invalid(format!("expectile level must be in [1/2, 1), got {a}")));
        }
        Self::new(LossKind::PiecewiseLinear { a, b: 1.0 - a, c: 0.0 }, 0.0)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LossKind::Entropic { .. } => "entropic",
            LossKind::PiecewiseLinear { .. } => "piecewise_linear",
            LossKind::Polynomial { .. } => "polynomial",
            LossKind::Heaviside => "heaviside",
        }
    }

    /// `l(x)`. Entropic values with `βx > 700` saturate.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_checked(x).value
    }

    pub fn eval_checked(&self, x: f64) -> Evaluation {
        match self.kind {
            LossKind::Entropic { beta } => clamped_exp(beta * x),
            LossKind::PiecewiseLinear { a, b, c } => Evaluation::exact(c + a * pos(x) - b * neg(x)),
            LossKind::Polynomial { a } => Evaluation::exact(pos(x).powf(a) / a),
            LossKind::Heaviside => Evaluation::exact(if x > 0.0 { 1.0 } else { 0.0 }),
        }
    }

    /// `l'(x)`; the right derivative at kinks.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        Ok(self.deriv_checked(x)?.value)
    }

    pub fn deriv_checked(&self, x: f64) -> Result<Evaluation> {
        Ok(match self.kind {
            LossKind::Entropic { beta } => {
                let e = clamped_exp(beta * x);
                Evaluation {
                    value: beta * e.value,
                    saturated: e.saturated,
                }
            }
            LossKind::PiecewiseLinear { a, b, .. } => Evaluation::exact(if x >= 0.0 { a } else { b }),
            LossKind::Polynomial { a } => Evaluation::exact(pos(x).powf(a - 1.0)),
            LossKind::Heaviside => return Err(RiskError::UnsupportedDerivative("heaviside")),
        })
    }

    /// Regularity constants on the evaluation window `[lo, hi]`.
    pub fn regularity(&self, window: (f64, f64)) -> FunctionRegularity {
        let (lo, hi) = window;
        match self.kind {
            LossKind::Entropic { beta } => FunctionRegularity {
                strict_slope_lower_bound: Some(beta * (beta * lo).min(EXP_CLAMP).exp()),
                smoothness: Some(beta * beta * (beta * hi).min(EXP_CLAMP).exp()),
                lipschitz: Some(beta * (beta * hi).min(EXP_CLAMP).exp()),
                strictly_increasing: true,
                continuous_derivative: true,
            },
            LossKind::PiecewiseLinear { a, b, .. } => FunctionRegularity {
                strict_slope_lower_bound: (b > 0.0).then_some(b),
                smoothness: None,
                lipschitz: Some(a),
                strictly_increasing: b > 0.0,
                continuous_derivative: a == b,
            },
            LossKind::Polynomial { a } => {
                let top = pos(hi);
                let smoothness = if a == 2.0 {
                    Some(1.0)
                } else if a > 2.0 {
                    Some((a - 1.0) * top.powf(a - 2.0))
                } else {
                    None
                };
                FunctionRegularity {
                    strict_slope_lower_bound: None,
                    smoothness,
                    lipschitz: Some(top.powf(a - 1.0)),
                    strictly_increasing: false,
                    continuous_derivative: true,
                }
            }
            LossKind::Heaviside => FunctionRegularity {
                strict_slope_lower_bound: None,
                smoothness: None,
                lipschitz: None,
                strictly_increasing: false,
                continuous_derivative: false,
            },
        }
    }
}

impl ShortfallLoss for LossSpec {
    fn loss(&self, x: f64) -> Evaluation {
        self.eval_checked(x)
    }

    fn level(&self) -> f64 {
        self.lambda
    }

    fn range(&self) -> (f64, f64) {
        match self.kind {
            LossKind::Entropic { .. } => (0.0, f64::INFINITY),
            LossKind::PiecewiseLinear { b: 0.0, c, .. } => (c, f64::INFINITY),
            LossKind::PiecewiseLinear { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            LossKind::Polynomial { .. } => (0.0, f64::INFINITY),
            LossKind::Heaviside => (0.0, 1.0),
        }
    }
}

/// Convex increasing utility for the optimized certainty equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawUtility")]
pub enum UtilitySpec {
    /// `u(x) = x⁺ / (1-α)`; the certainty equivalent is CVaR.
    CvarHinge { alpha: f64 },
    /// `u(x) = (exp(βx) - 1) / β`
    Entropic { beta: f64 },
    /// `u(x) = ((1+x)⁺)^a / a - 1/a`; `a = 2` is monotone mean-variance.
    MonotoneMv { a: f64 },
    /// `u(x) = a·x⁺ - b·x⁻` with `0 <= b < 1 < a`.
    #[serde(rename = "onpv")]
    PiecewiseLinear { a: f64, b: f64 },
    /// `u(x) = (1+x)⁴ - 1` for `x >= -1`, `-1` below.
    Quartic,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawUtility {
    CvarHinge { alpha: f64 },
    Entropic { beta: f64 },
    MonotoneMv { a: f64 },
    #[serde(rename = "onpv")]
    PiecewiseLinear { a: f64, b: f64 },
    Quartic,
}

impl TryFrom<RawUtility> for UtilitySpec {
    type Error = RiskError;

    fn try_from(raw: RawUtility) -> Result<Self> {
        let spec = match raw {
            RawUtility::CvarHinge { alpha } => UtilitySpec::CvarHinge { alpha },
            RawUtility::Entropic { beta } => UtilitySpec::Entropic { beta },
            RawUtility::MonotoneMv { a } => UtilitySpec::MonotoneMv { a },
            RawUtility::PiecewiseLinear { a, b } => UtilitySpec::PiecewiseLinear { a, b },
            RawUtility::Quartic => UtilitySpec::Quartic,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::CvarHinge { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(invalid(format!("cvar hinge needs alpha in (0, 1), got {alpha}")))
            }
            UtilitySpec::Entropic { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(invalid(format!("entropic utility needs beta > 0, got {beta}")))
            }
            UtilitySpec::MonotoneMv { a } if !(a > 1.0 && a.is_finite()) => {
                Err(invalid(format!("monotone mean-variance utility needs a > 1, got {a}")))
            }
            UtilitySpec::PiecewiseLinear { a, b }
                if !(a > 1.0 && a.is_finite() && (0.0..1.0).contains(&b)) =>
            {
                Err(invalid(format!(
                    "piecewise-linear utility needs 0 <= b < 1 < a, got a={a}, b={b}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilitySpec::CvarHinge { .. } => "cvar_hinge",
            UtilitySpec::Entropic { .. } => "entropic",
            UtilitySpec::MonotoneMv { .. } => "monotone_mv",
            UtilitySpec::PiecewiseLinear { .. } => "onpv",
            UtilitySpec::Quartic => "quartic",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_checked(x).value
    }

    pub fn eval_checked(&self, x: f64) -> Evaluation {
        match *self {
            UtilitySpec::CvarHinge { alpha } => Evaluation::exact(pos(x) / (1.0 - alpha)),
            UtilitySpec::Entropic { beta } => {
                let e = clamped_exp(beta * x);
                Evaluation {
                    value: (e.value - 1.0) / beta,
                    saturated: e.saturated,
                }
            }
            UtilitySpec::MonotoneMv { a } => Evaluation::exact((pos(1.0 + x).powf(a) - 1.0) / a),
            UtilitySpec::PiecewiseLinear { a, b } => Evaluation::exact(a * pos(x) - b * neg(x)),
            UtilitySpec::Quartic => {
                Evaluation::exact(if x >= -1.0 { (1.0 + x).powi(4) - 1.0 } else { -1.0 })
            }
        }
    }

    /// `u'(x)`; the left derivative at kinks.
    pub fn deriv(&self, x: f64) -> f64 {
        self.deriv_checked(x).value
    }

    pub fn deriv_checked(&self, x: f64) -> Evaluation {
        match *self {
            UtilitySpec::CvarHinge { alpha } => {
                Evaluation::exact(if x > 0.0 { 1.0 / (1.0 - alpha) } else { 0.0 })
            }
            UtilitySpec::Entropic { beta } => clamped_exp(beta * x),
            UtilitySpec::MonotoneMv { a } => Evaluation::exact(pos(1.0 + x).powf(a - 1.0)),
            UtilitySpec::PiecewiseLinear { a, b } => Evaluation::exact(if x > 0.0 { a } else { b }),
            UtilitySpec::Quartic => Evaluation::exact(4.0 * pos(1.0 + x).powi(3)),
        }
    }

    /// `u'` viewed as a shortfall loss with threshold 1.
    pub fn marginal(&self) -> MarginalUtility {
        MarginalUtility(*self)
    }

    /// Regularity of `u` on `[lo, hi]`: the slope bound is the strong
    /// convexity modulus, smoothness bounds `u''` and `lipschitz` bounds `u'`.
    pub fn regularity(&self, window: (f64, f64)) -> FunctionRegularity {
        let (lo, hi) = window;
        match *self {
            UtilitySpec::CvarHinge { alpha } => FunctionRegularity {
                strict_slope_lower_bound: None,
                smoothness: None,
                lipschitz: Some(1.0 / (1.0 - alpha)),
                strictly_increasing: false,
                continuous_derivative: false,
            },
            UtilitySpec::Entropic { beta } => FunctionRegularity {
                strict_slope_lower_bound: Some(beta * (beta * lo).min(EXP_CLAMP).exp()),
                smoothness: Some(beta * (beta * hi).min(EXP_CLAMP).exp()),
                lipschitz: Some((beta * hi).min(EXP_CLAMP).exp()),
                strictly_increasing: true,
                continuous_derivative: true,
            },
            UtilitySpec::MonotoneMv { a } => {
                let curvature = |x: f64| (a - 1.0) * pos(1.0 + x).powf(a - 2.0);
                FunctionRegularity {
                    strict_slope_lower_bound: (lo > -1.0)
                        .then(|| curvature(lo).min(curvature(hi)))
                        .filter(|v| *v > 0.0),
                    smoothness: (a >= 2.0).then(|| curvature(lo).max(curvature(hi))),
                    lipschitz: Some(pos(1.0 + hi).powf(a - 1.0)),
                    strictly_increasing: false,
                    continuous_derivative: true,
                }
            }
            UtilitySpec::PiecewiseLinear { a, b } => FunctionRegularity {
                strict_slope_lower_bound: None,
                smoothness: None,
                lipschitz: Some(a),
                strictly_increasing: b > 0.0,
                continuous_derivative: false,
            },
            UtilitySpec::Quartic => FunctionRegularity {
                strict_slope_lower_bound: (lo > -1.0).then(|| 12.0 * (1.0 + lo).powi(2)),
                smoothness: Some(12.0 * pos(1.0 + hi).powi(2)),
                lipschitz: Some(4.0 * pos(1.0 + hi).powi(3)),
                strictly_increasing: false,
                continuous_derivative: true,
            },
        }
    }
}

/// Adapter exposing `u'` with threshold 1 to the shortfall solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalUtility(pub UtilitySpec);

impl ShortfallLoss for MarginalUtility {
    fn loss(&self, x: f64) -> Evaluation {
        self.0.deriv_checked(x)
    }

    fn level(&self) -> f64 {
        1.0
    }

    fn range(&self) -> (f64, f64) {
        match self.0 {
            UtilitySpec::CvarHinge { alpha } => (0.0, 1.0 / (1.0 - alpha)),
            UtilitySpec::Entropic { .. } => (0.0, f64::INFINITY),
            UtilitySpec::MonotoneMv { .. } | UtilitySpec::Quartic => (0.0, f64::INFINITY),
            UtilitySpec::PiecewiseLinear { a, b } => (b, a),
        }
    }
}

/// Declared regularity of a loss or utility on an evaluation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionRegularity {
    pub strict_slope_lower_bound: Option<f64>,
    pub smoothness: Option<f64>,
    pub lipschitz: Option<f64>,
    pub strictly_increasing: bool,
    pub continuous_derivative: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_losses() -> Vec<LossSpec> {
        vec![
            LossSpec::entropic(0.5).unwrap(),
            LossSpec::new(LossKind::PiecewiseLinear { a: 0.75, b: 0.25, c: 0.0 }, 0.0).unwrap(),
            LossSpec::new(LossKind::PiecewiseLinear { a: 2.0, b: 0.0, c: 0.0 }, 0.5).unwrap(),
            LossSpec::new(LossKind::Polynomial { a: 2.0 }, 0.5).unwrap(),
            LossSpec::new(LossKind::Polynomial { a: 3.5 }, 0.5).unwrap(),
            LossSpec::value_at_risk(0.05).unwrap(),
        ]
    }

    fn all_utilities() -> Vec<UtilitySpec> {
        vec![
            UtilitySpec::CvarHinge { alpha: 0.95 },
            UtilitySpec::Entropic { beta: 0.5 },
            UtilitySpec::MonotoneMv { a: 2.0 },
            UtilitySpec::MonotoneMv { a: 1.5 },
            UtilitySpec::PiecewiseLinear { a: 2.0, b: 0.5 },
            UtilitySpec::Quartic,
        ]
    }

    #[test]
    fn loss_values() {
        assert_eq!(LossSpec::entropic(0.5).unwrap().eval(0.0), 1.0);
        let pl = LossSpec::new(LossKind::PiecewiseLinear { a: 0.75, b: 0.25, c: 0.0 }, 0.0).unwrap();
        assert_eq!(pl.eval(-2.0), -0.5);
        let poly = LossSpec::new(LossKind::Polynomial { a: 2.0 }, 1.0).unwrap();
        assert_eq!(poly.eval(3.0), 4.5);
    }

    #[test]
    fn loss_derivatives() {
        assert_eq!(LossSpec::entropic(0.5).unwrap().deriv(0.0).unwrap(), 0.5);
        let pl = LossSpec::new(LossKind::PiecewiseLinear { a: 0.75, b: 0.25, c: 0.0 }, 0.0).unwrap();
        assert_eq!(pl.deriv(0.0).unwrap(), 0.75);
        assert_eq!(pl.deriv(-1e-9).unwrap(), 0.25);
        let poly = LossSpec::new(LossKind::Polynomial { a: 2.0 }, 1.0).unwrap();
        assert_eq!(poly.deriv(-1.0).unwrap(), 0.0);
        assert_eq!(
            LossSpec::value_at_risk(0.1).unwrap().deriv(0.3),
            Err(RiskError::UnsupportedDerivative("heaviside"))
        );
    }

    #[test]
    fn utility_values() {
        assert_eq!(UtilitySpec::Entropic { beta: 0.5 }.eval(0.0), 0.0);
        assert!((UtilitySpec::CvarHinge { alpha: 0.95 }.deriv(1.0) - 20.0).abs() < 1e-12);
        assert_eq!(UtilitySpec::MonotoneMv { a: 2.0 }.eval(1.0), 1.5);
        // left derivative at the kink
        assert_eq!(UtilitySpec::CvarHinge { alpha: 0.5 }.deriv(0.0), 0.0);
        assert_eq!(UtilitySpec::PiecewiseLinear { a: 2.0, b: 0.5 }.deriv(0.0), 0.5);
        assert_eq!(UtilitySpec::Quartic.eval(-1.0), -1.0);
        assert_eq!(UtilitySpec::Quartic.eval(-3.0), -1.0);
        assert_eq!(UtilitySpec::Quartic.eval(1.0), 15.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(LossSpec::new(LossKind::Entropic { beta: 0.0 }, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Entropic { beta: 1.0 }, -1.0).is_err());
        assert!(LossSpec::new(LossKind::PiecewiseLinear { a: 0.2, b: 0.5, c: 0.0 }, 0.0).is_err());
        assert!(LossSpec::new(LossKind::Polynomial { a: 1.0 }, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Heaviside, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Heaviside, 0.0).is_err());
        assert!(LossSpec::expectile(0.3).is_err());
        assert!(UtilitySpec::CvarHinge { alpha: 1.0 }.validate().is_err());
        assert!(UtilitySpec::PiecewiseLinear { a: 0.9, b: 0.5 }.validate().is_err());
        assert!(UtilitySpec::MonotoneMv { a: 1.0 }.validate().is_err());
    }

    #[test]
    fn entropic_saturates() {
        let l = LossSpec::entropic(1.0).unwrap();
        let e = l.eval_checked(800.0);
        assert!(e.saturated && e.value.is_finite());
        assert!(!l.eval_checked(10.0).saturated);
    }

    #[test]
    fn json_round_trip_and_schema() {
        let l: LossSpec = serde_json::from_str(r#"{"kind":"entropic","beta":0.5,"lambda":1.0}"#).unwrap();
        assert_eq!(l, LossSpec::entropic(0.5).unwrap());
        let pl: LossSpec =
            serde_json::from_str(r#"{"kind":"piecewise_linear","a":0.75,"b":0.25,"c":0.0,"lambda":0.0}"#)
                .unwrap();
        assert_eq!(pl, LossSpec::expectile(0.75).unwrap());
        let h: LossSpec = serde_json::from_str(r#"{"kind":"heaviside","lambda":0.05}"#).unwrap();
        assert_eq!(h, LossSpec::value_at_risk(0.05).unwrap());
        assert!(serde_json::from_str::<LossSpec>(r#"{"kind":"heaviside","lambda":1.5}"#).is_err());
        assert!(serde_json::from_str::<LossSpec>(r#"{"kind":"heaviside"}"#).is_err());

        let back: LossSpec = serde_json::from_str(&serde_json::to_string(&pl).unwrap()).unwrap();
        assert_eq!(back, pl);

        let cases = [
            (r#"{"kind":"cvar_hinge","alpha":0.95}"#, UtilitySpec::CvarHinge { alpha: 0.95 }),
            (r#"{"kind":"monotone_mv","a":2.0}"#, UtilitySpec::MonotoneMv { a: 2.0 }),
            (r#"{"kind":"onpv","a":2.0,"b":0.5}"#, UtilitySpec::PiecewiseLinear { a: 2.0, b: 0.5 }),
            (r#"{"kind":"quartic"}"#, UtilitySpec::Quartic),
            (r#"{"kind":"entropic","beta":0.5}"#, UtilitySpec::Entropic { beta: 0.5 }),
        ];
        for (json, want) in cases {
            let got: UtilitySpec = serde_json::from_str(json).unwrap();
            assert_eq!(got, want);
            let again: UtilitySpec = serde_json::from_str(&serde_json::to_string(&got).unwrap()).unwrap();
            assert_eq!(again, want);
        }
        assert!(serde_json::from_str::<UtilitySpec>(r#"{"kind":"cvar_hinge","alpha":1.5}"#).is_err());
    }

    #[test]
    fn regularity_metadata() {
        let l = LossSpec::entropic(0.5).unwrap();
        let r = l.regularity((-2.0, 4.0));
        assert!((r.strict_slope_lower_bound.unwrap() - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.smoothness.unwrap() - 0.25 * 2.0f64.exp()).abs() < 1e-15);
        let pl = LossSpec::expectile(0.75).unwrap().regularity((-1.0, 1.0));
        assert_eq!(pl.strict_slope_lower_bound, Some(0.25));
        assert!(pl.strictly_increasing);
        let flat = LossSpec::new(LossKind::PiecewiseLinear { a: 1.0, b: 0.0, c: 0.0 }, 0.5).unwrap();
        assert!(!flat.regularity((-1.0, 1.0)).strictly_increasing);
    }

    #[test]
    fn marginal_utility_is_a_threshold_one_loss() {
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        for u in all_utilities() {
            let m = u.marginal();
            assert_eq!(m.level(), 1.0);
            for &x in &grid {
                assert_eq!(m.loss(x).value, u.deriv(x));
            }
        }
        // the entropic marginal is literally the entropic loss with λ = 1
        let u = UtilitySpec::Entropic { beta: 0.5 };
        let l = LossSpec::entropic(0.5).unwrap();
        for &x in &grid {
            assert_eq!(u.marginal().loss(x), l.loss(x));
        }
        assert_eq!(u.marginal().level(), l.level());
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-6;
        let xs = [-2.3, -0.7, 0.4, 1.9];
        for l in all_losses() {
            if matches!(l.kind(), LossKind::Heaviside) {
                continue;
            }
            for &x in &xs {
                let fd = (l.eval(x + h) - l.eval(x - h)) / (2.0 * h);
                assert!((fd - l.deriv(x).unwrap()).abs() < 1e-4, "{l:?} at {x}");
            }
        }
        for u in all_utilities() {
            for &x in &xs {
                let fd = (u.eval(x + h) - u.eval(x - h)) / (2.0 * h);
                assert!((fd - u.deriv(x)).abs() < 1e-4, "{u:?} at {x}");
            }
        }
    }

    proptest! {
        #[test]
        fn convex_and_monotone(x in -6.0f64..6.0, gap1 in 1e-3f64..4.0, gap2 in 1e-3f64..4.0) {
            let (y, z) = (x + gap1, x + gap1 + gap2);
            let chord = |fx: f64, fz: f64| ((z - y) * fx + (y - x) * fz) / (z - x);
            for l in all_losses() {
                let (lx, ly, lz) = (l.eval(x), l.eval(y), l.eval(z));
                prop_assert!(lx <= ly && ly <= lz);
                if !matches!(l.kind(), LossKind::Heaviside) {
                    prop_assert!(ly <= chord(lx, lz) + 1e-12 * (1.0 + lz.abs()));
                }
            }
            for u in all_utilities() {
                let (ux, uy, uz) = (u.eval(x), u.eval(y), u.eval(z));
                prop_assert!(ux <= uy && uy <= uz);
                prop_assert!(uy <= chord(ux, uz) + 1e-12 * (1.0 + uz.abs()));
                prop_assert!(u.deriv(x) <= u.deriv(y));
            }
        }
    }
}
