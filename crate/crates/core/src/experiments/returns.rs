//! Asset-return tables read from CSV: `date,TICKER1,...,TICKERd`.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// How a price column is turned into per-period returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    /// `p_t / p_{t-1} - 1`
    #[default]
    Simple,
    /// `ln(p_t / p_{t-1})`
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsData {
    pub tickers: Vec<String>,
    pub dates: Vec<String>,
    /// One row per period, one column per ticker.
    pub returns: Vec<Vec<f64>>,
    /// Rows dropped because a cell was blank.
    pub dropped_rows: usize,
}

impl ReturnsData {
    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    pub fn periods(&self) -> usize {
        self.returns.len()
    }
}

fn data_err(msg: String) -> RiskError {
    RiskError::Data(msg)
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r.clone()].iter().all(u8::is_ascii_digit).then(|| s[r].parse::<u32>().ok()).flatten();
    matches!(
        (digits(0..4), digits(5..7), digits(8..10)),
        (Some(_), Some(1..=12), Some(1..=31))
    )
}

/// Read a returns table. With `prices = Some(kind)` the cells are prices and
/// are converted to returns of that kind, losing the first date.
pub fn read_returns<R: Read>(input: R, prices: Option<ReturnKind>) -> Result<ReturnsData> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| data_err(format!("cannot read header: {e}")))?.clone();
    if header.get(0).map(str::to_ascii_lowercase).as_deref() != Some("date") {
        return Err(data_err("first header column must be `date`".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if tickers.is_empty() {
        return Err(data_err("header names no tickers".into()));
    }
    if let Some(i) = tickers.iter().position(String::is_empty) {
        return Err(data_err(format!("header column {} has an empty ticker", i + 2)));
    }
    let width = tickers.len() + 1;

    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut dropped_rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        // line numbers are 1-based and the header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(format!("line {line}: {e}")))?;
        if rec.len() != width {
            return Err(data_err(format!("line {line}: expected {width} columns, found {}", rec.len())));
        }
        if rec.iter().any(str::is_empty) {
            dropped_rows += 1;
            continue;
        }
        let date = &rec[0];
        if !is_iso_date(date) {
            return Err(data_err(format!("line {line}, column 1: {date:?} is not an ISO date (YYYY-MM-DD)")));
        }
        let row = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(data_err(format!(
                    "line {line}, column {} ({}): {cell:?} is not a finite number",
                    j + 1,
                    tickers[j - 1]
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        dates.push(date.to_string());
        values.push(row);
    }

    let (dates, returns) = match prices {
        None => (dates, values),
        Some(kind) => {
            if let Some((i, j)) = values
                .iter()
                .enumerate()
                .find_map(|(i, r)| r.iter().position(|p| *p <= 0.0).map(|j| (i, j)))
            {
                return Err(data_err(format!(
                    "price for {} on {} is not positive",
                    tickers[j], dates[i]
                )));
            }
            let rets = values
                .windows(2)
                .map(|w| {
                    w[1].iter()
                        .zip(&w[0])
                        .map(|(p, q)| match kind {
                            ReturnKind::Simple => p / q - 1.0,
                            ReturnKind::Log => (p / q).ln(),
                        })
                        .collect()
                })
                .collect();
            (dates.into_iter().skip(1).collect(), rets)
        }
    };
    if returns.len() < 2 {
        return Err(data_err(format!(
            "need at least two periods of returns, found {}",
            returns.len()
        )));
    }
    Ok(ReturnsData {
        tickers,
        dates,
        returns,
        dropped_rows,
    })
}

/// Read a column of outcomes: the first field of every record, skipping a
/// non-numeric first line as a header.
pub fn read_samples<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| data_err(format!("line {line}: {e}")))?;
        let cell = rec.get(0).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Err(_) if line == 1 => continue,
            _ => return Err(data_err(format!("line {line}, column 1: {cell:?} is not a finite number"))),
        }
    }
    if out.is_empty() {
        return Err(RiskError::EmptyBatch);
    }
    Ok(out)
}
