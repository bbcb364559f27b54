//! CSV series ingestion.
//!
//! Rows hold either `value` or `timestamp,value`. Lines starting with `#` are
//! comments and a non-numeric first row is taken as a header.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    /// Present when the rows carry a timestamp column.
    pub timestamps: Option<Vec<String>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn read_series(path: &Path) -> Result<Series> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_series(f)
}

pub fn parse_series<R: Read>(reader: R) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut stamps: Vec<String> = Vec::new();
    let mut width = None;
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let cols = rec.len();
        if cols != 1 && cols != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 1 or 2 columns, found {cols}"),
            });
        }
        let raw = &rec[cols - 1];
        let parsed = raw.parse::<f64>();
        if first {
            first = false;
            if parsed.is_err() {
                width = Some(cols);
                continue;
            }
        }
        if *width.get_or_insert(cols) != cols {
            return Err(Error::Parse {
                line,
                message: format!("row has {cols} columns, earlier rows have {}", width.unwrap_or(cols)),
            });
        }
        let v = parsed.map_err(|_| Error::Parse {
            line,
            message: format!("invalid number `{raw}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite value `{raw}`"),
            });
        }
        if cols == 2 {
            stamps.push(rec[0].to_string());
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::DegenerateSample("series has no values".into()));
    }
    Ok(Series {
        values,
        timestamps: (width == Some(2)).then_some(stamps),
    })
}

/// Log returns `log P_t − log P_{t−1}`, multiplied by 100 when `percent`.
pub fn log_returns(prices: &[f64], percent: bool) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: prices.len(),
        });
    }
    if let Some((i, p)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::Domain(format!("price {p} at position {} is not positive", i + 1)));
    }
    let k = if percent { 100.0 } else { 1.0 };
    Ok(prices.windows(2).map(|w| k * (w[1].ln() - w[0].ln())).collect())
}
