//! Risk-measure arguments: `NAME[:key=value,...]`, inline JSON or `@file.json`.

use std::collections::BTreeMap;
use std::fs;

use clap::Args;
use ubsr::optimization::RiskKind;
use ubsr::risk_functions::{LossKind, LossSpec, UtilitySpec};

pub const RISK_NAMES: &str =
    "entropic-ubsr, entropic-oce, var, cvar, expectile, polynomial, piecewise, mmv, onpv, quartic";

/// Parameters shared by every risk shorthand. Inline `key=value` pairs take
/// precedence over these flags.
#[derive(Debug, Clone, Default, Args)]
pub struct RiskParams {
    /// Risk aversion of the entropic loss or utility.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Confidence level of VaR / CVaR.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Shape parameter `a` (expectile level, polynomial degree, mmv exponent, onpv gain slope).
    #[arg(long = "a")]
    pub a: Option<f64>,
    /// Loss slope `b` of the onpv utility or the piecewise-linear loss.
    #[arg(long = "b")]
    pub b: Option<f64>,
    /// Risk threshold of the shortfall loss.
    #[arg(long)]
    pub lambda: Option<f64>,
}

/// Parse one risk argument.
pub fn parse_risk(text: &str, flags: &RiskParams) -> Result<RiskKind, String> {
    let text = text.trim();
    if let Some(path) = text.strip_prefix('@') {
        let body = fs::read_to_string(path).map_err(|e| format!("cannot read risk file {path}: {e}"))?;
        return parse_json(&body);
    }
    if text.starts_with('{') {
        return parse_json(text);
    }

    let (name, inline) = text.split_once(':').unwrap_or((text, ""));
    let mut params = BTreeMap::new();
    for pair in inline.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("expected key=value in risk parameters, got {pair:?}"))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("risk parameter {k} has non-numeric value {v:?}"))?;
        params.insert(k.trim().to_string(), v);
    }
    for (key, val) in [
        ("beta", flags.beta),
        ("alpha", flags.alpha),
        ("a", flags.a),
        ("b", flags.b),
        ("lambda", flags.lambda),
    ] {
        if let Some(v) = val {
            params.entry(key.to_string()).or_insert(v);
        }
    }
    let get = |key: &str, default: Option<f64>| -> Result<f64, String> {
        params
            .get(key)
            .copied()
            .or(default)
            .ok_or_else(|| format!("risk {name:?} needs parameter {key}"))
    };
    let known: &[&str] = match name {
        "entropic-ubsr" => &["beta", "lambda"],
        "entropic-oce" => &["beta"],
        "var" | "cvar" => &["alpha"],
        "expectile" => &["a"],
        "polynomial" => &["a", "lambda"],
        "piecewise" => &["a", "b", "lambda"],
        "mmv" => &["a"],
        "onpv" => &["a", "b"],
        "quartic" => &[],
        _ => return Err(format!("unknown risk {name:?}; expected one of {RISK_NAMES}, JSON or @file")),
    };
    if let Some(extra) = inline
        .split(',')
        .filter_map(|p| p.split_once('=').map(|(k, _)| k.trim()))
        .find(|k| !known.contains(k))
    {
        return Err(format!("risk {name:?} does not take parameter {extra}"));
    }

    let risk = match name {
        "entropic-ubsr" => RiskKind::Ubsr(
            LossSpec::new(LossKind::Entropic { beta: get("beta", Some(0.5))? }, get("lambda", Some(1.0))?)
                .map_err(|e| e.to_string())?,
        ),
        "entropic-oce" => RiskKind::Oce(UtilitySpec::Entropic { beta: get("beta", Some(0.5))? }),
        "var" => RiskKind::Ubsr(LossSpec::value_at_risk(get("alpha", Some(0.95))?).map_err(|e| e.to_string())?),
        "cvar" => RiskKind::Oce(UtilitySpec::CvarHinge { alpha: get("alpha", Some(0.95))? }),
        "expectile" => RiskKind::Ubsr(LossSpec::expectile(get("a", Some(0.75))?).map_err(|e| e.to_string())?),
        "polynomial" => RiskKind::Ubsr(
            LossSpec::new(LossKind::Polynomial { a: get("a", Some(2.0))? }, get("lambda", None)?)
                .map_err(|e| e.to_string())?,
        ),
        "piecewise" => RiskKind::Ubsr(
            LossSpec::new(
                LossKind::PiecewiseLinear {
                    a: get("a", None)?,
                    b: get("b", None)?,
                    c: 0.0,
                },
                get("lambda", Some(0.0))?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "mmv" => RiskKind::Oce(UtilitySpec::MonotoneMv { a: get("a", Some(2.0))? }),
        "onpv" => RiskKind::Oce(UtilitySpec::PiecewiseLinear {
            a: get("a", None)?,
            b: get("b", None)?,
        }),
        _ => RiskKind::Oce(UtilitySpec::Quartic),
    };
    if let RiskKind::Oce(u) = &risk {
        u.validate().map_err(|e| e.to_string())?;
    }
    Ok(risk)
}

fn parse_json(body: &str) -> Result<RiskKind, String> {
    serde_json::from_str(body).map_err(|e| format!("invalid risk JSON: {e}"))
}
