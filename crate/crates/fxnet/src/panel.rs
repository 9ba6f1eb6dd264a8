//! Dated per-currency panel of implied variances: the interchange between
//! the variance synthesis stage (`date,currency,civ` CSV) and the network
//! estimator.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Daily panel of currency implied variances, row-major `T x N`, `NaN` for
/// missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CivPanel {
    pub dates: Vec<NaiveDate>,
    pub currencies: Vec<String>,
    pub values: Vec<f64>,
}

impl CivPanel {
    pub fn new(dates: Vec<NaiveDate>, currencies: Vec<String>) -> Self {
        let values = vec![f64::NAN; dates.len() * currencies.len()];
        CivPanel {
            dates,
            currencies,
            values,
        }
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_currencies(&self) -> usize {
        self.currencies.len()
    }

    pub fn get(&self, di: usize, ci: usize) -> f64 {
        self.values[di * self.currencies.len() + ci]
    }

    pub fn set(&mut self, di: usize, ci: usize, v: f64) {
        self.values[di * self.currencies.len() + ci] = v;
    }

    pub fn is_present(&self, di: usize, ci: usize) -> bool {
        !self.get(di, ci).is_nan()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn currency_index(&self, ccy: &str) -> Option<usize> {
        self.currencies.iter().position(|c| c == ccy)
    }

    /// Column of one currency across all dates (NaN where missing).
    pub fn column(&self, ci: usize) -> Vec<f64> {
        (0..self.n_dates()).map(|di| self.get(di, ci)).collect()
    }
}

const CIV_HEADER: &str = "date,currency,civ";

/// Write the panel as `date,currency,civ`, skipping missing cells. Rows are
/// emitted date-major then currency order, so output is deterministic.
pub fn save_civ_panel(panel: &CivPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::from(CIV_HEADER);
    buf.push('\n');
    for (di, date) in panel.dates.iter().enumerate() {
        for (ci, ccy) in panel.currencies.iter().enumerate() {
            let v = panel.get(di, ci);
            if !v.is_nan() {
                buf.push_str(&format!("{date},{ccy},{v}\n"));
            }
        }
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a `date,currency,civ` CSV into a panel on the union grid.
pub fn load_civ_panel(path: impl AsRef<Path>) -> Result<CivPanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CIV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header {CIV_HEADER:?}, found {h:?}"),
            })
        }
        None => return Err(Error::EmptyFile(path.display().to_string())),
    }
    let mut cells: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d").map_err(|_| {
            Error::MalformedRow {
                line,
                reason: format!("invalid ISO date {:?}", fields[0]),
            }
        })?;
        let ccy = fields[1].trim().to_string();
        let civ: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("cannot parse civ from {:?}", fields[2]),
        })?;
        cells.insert((date, ccy), civ);
    }
    if cells.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    let mut dates: Vec<NaiveDate> = cells.keys().map(|(d, _)| *d).collect();
    dates.sort();
    dates.dedup();
    let mut currencies: Vec<String> = cells.keys().map(|(_, c)| c.clone()).collect();
    currencies.sort();
    currencies.dedup();
    let mut panel = CivPanel::new(dates, currencies);
    for ((date, ccy), v) in cells {
        let di = panel.date_index(date).unwrap();
        let ci = panel.currency_index(&ccy).unwrap();
        panel.set(di, ci, v);
    }
    Ok(panel)
}
