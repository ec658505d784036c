//! Long-only portfolio selection on a returns table, with equal-weight and
//! minimum-CVaR benchmarks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::returns::ReturnsData;
use crate::error::{invalid, Result, RiskError};
use crate::optimization::{sg_run, ProjectionSpec, RiskKind, SGConfig};
use crate::risk_functions::UtilitySpec;
use crate::scenarios::{linear_portfolio, EmpiricalNoiseSpec, NoiseSpec, DEFAULT_NOISE_SCALE};

/// Tail level of the minimum-CVaR benchmark.
pub const DEFAULT_BENCHMARK_ALPHA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRisk {
    pub name: String,
    pub risk: RiskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioConfig {
    pub risks: Vec<NamedRisk>,
    /// SG settings; the projection is replaced by the simplex of the table.
    pub sg: SGConfig,
    pub noise_scale: f64,
    pub benchmark_alpha: f64,
}

impl PortfolioConfig {
    pub fn new(risks: Vec<NamedRisk>, sg: SGConfig) -> Self {
        Self {
            risks,
            sg,
            noise_scale: DEFAULT_NOISE_SCALE,
            benchmark_alpha: DEFAULT_BENCHMARK_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Risk,
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub name: String,
    pub kind: EntryKind,
    pub weights: Vec<f64>,
    /// Compounded in-sample return after each period.
    pub cumulative: Vec<f64>,
    pub residual_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioReport {
    pub tickers: Vec<String>,
    pub dates: Vec<String>,
    pub dropped_rows: usize,
    pub entries: Vec<PortfolioEntry>,
}

/// `Π_t (1 + wᵀr_t) - 1` after each period.
pub fn cumulative_returns(weights: &[f64], returns: &[Vec<f64>]) -> Vec<f64> {
    let mut wealth = 1.0;
    returns
        .iter()
        .map(|r| {
            wealth *= 1.0 + weights.iter().zip(r).map(|(w, x)| w * x).sum::<f64>();
            wealth - 1.0
        })
        .collect()
}

pub fn run_portfolio(data: &ReturnsData, cfg: &PortfolioConfig) -> Result<PortfolioReport> {
    let d = data.dim();
    if !(cfg.benchmark_alpha > 0.0 && cfg.benchmark_alpha < 1.0) {
        return Err(invalid("benchmark alpha must lie in (0, 1)"));
    }
    let model = linear_portfolio(&NoiseSpec::Empirical(EmpiricalNoiseSpec {
        returns: data.returns.clone(),
        noise_scale: cfg.noise_scale,
        seed: cfg.sg.seed,
    }))?;
    let sg = SGConfig {
        projection: ProjectionSpec::Simplex { dim: d },
        ..cfg.sg.clone()
    };
    let start = vec![1.0 / d as f64; d];

    let benchmark = NamedRisk {
        name: "min_cvar".into(),
        risk: RiskKind::Oce(UtilitySpec::CvarHinge {
            alpha: cfg.benchmark_alpha,
        }),
    };
    let mut entries = Vec::with_capacity(cfg.risks.len() + 2);
    for (named, kind) in cfg
        .risks
        .iter()
        .map(|r| (r, EntryKind::Risk))
        .chain(std::iter::once((&benchmark, EntryKind::Benchmark)))
    {
        let trace = sg_run(&model, &named.risk, &sg, &start, None).map_err(|e| match e {
            RiskError::Iteration { iteration, source } => {
                RiskError::Data(format!("{}: iteration {iteration}: {source}", named.name))
            }
            other => other,
        })?;
        entries.push(PortfolioEntry {
            name: named.name.clone(),
            kind,
            cumulative: cumulative_returns(&trace.final_theta, &data.returns),
            weights: trace.final_theta,
            residual_warnings: trace.metadata.residual_warnings,
        });
    }
    entries.push(PortfolioEntry {
        name: "equal_weight".into(),
        kind: EntryKind::Benchmark,
        cumulative: cumulative_returns(&start, &data.returns),
        weights: start,
        residual_warnings: 0,
    });
    Ok(PortfolioReport {
        tickers: data.tickers.clone(),
        dates: data.dates.clone(),
        dropped_rows: data.dropped_rows,
        entries,
    })
}

fn csv_err(e: csv::Error) -> RiskError {
    RiskError::Data(e.to_string())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|e| RiskError::Data(format!("bad number {s:?}: {e}")))
}

impl PortfolioReport {
    /// `portfolio,kind,TICKER1,...`
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["portfolio".to_string(), "kind".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let kind = match e.kind {
                EntryKind::Risk => "risk",
                EntryKind::Benchmark => "benchmark",
            };
            let mut row = vec![e.name.clone(), kind.to_string()];
            row.extend(e.weights.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| RiskError::Data(e.to_string()))
    }

    /// `date,PORTFOLIO1,...`
    pub fn write_cumulative_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.entries.iter().map(|e| e.name.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.clone()];
            row.extend(self.entries.iter().map(|e| e.cumulative[t].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| RiskError::Data(e.to_string()))
    }

    /// Rebuild tickers, dates and entries from the two CSV files.
    pub fn read_csv<R1: Read, R2: Read>(weights: R1, cumulative: R2) -> Result<Self> {
        let mut wr = csv::Reader::from_reader(weights);
        let header = wr.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("portfolio") || header.get(1) != Some("kind") {
            return Err(RiskError::Data("weights header must start with portfolio,kind".into()));
        }
        let tickers: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut entries = Vec::new();
        for rec in wr.records() {
            let rec = rec.map_err(csv_err)?;
            let kind = match rec.get(1) {
                Some("risk") => EntryKind::Risk,
                Some("benchmark") => EntryKind::Benchmark,
                other => return Err(RiskError::Data(format!("unknown entry kind {other:?}"))),
            };
            entries.push(PortfolioEntry {
                name: rec.get(0).unwrap_or_default().to_string(),
                kind,
                weights: rec.iter().skip(2).map(parse_f64).collect::<Result<_>>()?,
                cumulative: Vec::new(),
                residual_warnings: 0,
            });
        }
        let mut cr = csv::Reader::from_reader(cumulative);
        let header = cr.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = header.iter().skip(1).collect();
        if names != entries.iter().map(|e| e.name.as_str()).collect::<Vec<_>>() {
            return Err(RiskError::Data("cumulative columns do not match the weights rows".into()));
        }
        let mut dates = Vec::new();
        for rec in cr.records() {
            let rec = rec.map_err(csv_err)?;
            dates.push(rec.get(0).unwrap_or_default().to_string());
            for (e, v) in entries.iter_mut().zip(rec.iter().skip(1)) {
                e.cumulative.push(parse_f64(v)?);
            }
        }
        Ok(Self {
            tickers,
            dates,
            dropped_rows: 0,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{ubsr_sb, BisectionConfig, SampleBatch};
    use crate::risk_functions::LossSpec;
    use crate::scenarios::noise_rng;
    use rand::Rng;

    fn table(returns: Vec<Vec<f64>>, tickers: &[&str]) -> ReturnsData {
        ReturnsData {
            tickers: tickers.iter().map(|s| s.to_string()).collect(),
            dates: (0..returns.len()).map(|i| format!("2024-01-{:02}", i % 28 + 1)).collect(),
            returns,
            dropped_rows: 0,
        }
    }

    fn risks() -> Vec<NamedRisk> {
        vec![
            NamedRisk {
                name: "entropic_ubsr".into(),
                risk: RiskKind::Ubsr(LossSpec::entropic(1.0).unwrap()),
            },
            NamedRisk {
                name: "entropic_oce".into(),
                risk: RiskKind::Oce(UtilitySpec::Entropic { beta: 1.0 }),
            },
        ]
    }

    #[test]
    fn dominant_asset_gets_most_weight() {
        // asset 1 = asset 2 + 0.02 in every period
        let mut rng = noise_rng(3, 0);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| {
                let b: f64 = rng.random_range(-0.05..0.05);
                vec![b + 0.02, b]
            })
            .collect();
        let data = table(rows.clone(), &["A", "B"]);

        // direct check at the two vertices
        let cfg = BisectionConfig::new(1e-8);
        let col = |j: usize| SampleBatch::new(rows.iter().map(|r| r[j]).collect()).unwrap();
        let loss = LossSpec::entropic(1.0).unwrap();
        assert!(ubsr_sb(&loss, &col(0), &cfg).unwrap().value < ubsr_sb(&loss, &col(1), &cfg).unwrap().value);

        let mut sg = SGConfig::new(200, ProjectionSpec::Identity, 6);
        sg.c = 2.0;
        let report = run_portfolio(&data, &PortfolioConfig::new(risks(), sg)).unwrap();
        assert_eq!(report.entries.len(), 4);
        for e in &report.entries {
            assert!(ProjectionSpec::Simplex { dim: 2 }.contains(&e.weights));
            if e.name != "equal_weight" {
                assert!(e.weights[0] >= 0.5, "{}: {:?}", e.name, e.weights);
            }
        }
        let eq = report.entries.iter().find(|e| e.name == "equal_weight").unwrap();
        assert_eq!(eq.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn single_asset_is_fully_invested() {
        let data = table(vec![vec![0.01], vec![-0.02], vec![0.005]], &["ONLY"]);
        let report = run_portfolio(&data, &PortfolioConfig::new(risks(), SGConfig::new(10, ProjectionSpec::Identity, 1))).unwrap();
        for e in &report.entries {
            assert_eq!(e.weights, vec![1.0]);
        }
        let cum = &report.entries[0].cumulative;
        assert!((cum[2] - (1.01 * 0.98 * 1.005 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let data = table(vec![vec![0.01, 0.0, -0.01], vec![-0.02, 0.01, 0.0], vec![0.0, 0.02, 0.01]], &["A", "B", "C"]);
        let report = run_portfolio(&data, &PortfolioConfig::new(risks(), SGConfig::new(15, ProjectionSpec::Identity, 4))).unwrap();
        let (mut w, mut c) = (Vec::new(), Vec::new());
        report.write_weights_csv(&mut w).unwrap();
        report.write_cumulative_csv(&mut c).unwrap();
        let back = PortfolioReport::read_csv(w.as_slice(), c.as_slice()).unwrap();
        assert_eq!(back.tickers, report.tickers);
        assert_eq!(back.dates, report.dates);
        for (a, b) in back.entries.iter().zip(&report.entries) {
            assert_eq!((&a.name, a.kind, &a.weights, &a.cumulative), (&b.name, b.kind, &b.weights, &b.cumulative));
        }
    }
}
