//! Input panels: option vol quotes, spot/forward FX with bid/mid/ask, and
//! interest rates, aligned onto a single dated per-currency grid.
//!
//! File formats (UTF-8 CSV, ISO-8601 dates):
//!
//! ```text
//! surface: date,currency,tenor,bucket,vol
//! fx:      date,currency,spot_bid,spot_mid,spot_ask,fwd_bid,fwd_mid,fwd_ask,rate_dom,rate_for
//! ```
//!
//! `bucket` is one of `10d-put`, `25d-put`, `ATM`, `25d-call`, `10d-call`.
//! Exchange rates are units of foreign currency per USD. Writers emit the
//! shortest round-trippable float representation, so load(save(panel)) is
//! bit-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default option tenor driving the pipeline: one month.
pub const ONE_MONTH: f64 = 1.0 / 12.0;

/// The five quoted delta pillars, in increasing-strike order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeltaBucket {
    TenDeltaPut,
    TwentyFiveDeltaPut,
    Atm,
    TwentyFiveDeltaCall,
    TenDeltaCall,
}

impl DeltaBucket {
    pub const ALL: [DeltaBucket; 5] = [
        DeltaBucket::TenDeltaPut,
        DeltaBucket::TwentyFiveDeltaPut,
        DeltaBucket::Atm,
        DeltaBucket::TwentyFiveDeltaCall,
        DeltaBucket::TenDeltaCall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeltaBucket::TenDeltaPut => "10d-put",
            DeltaBucket::TwentyFiveDeltaPut => "25d-put",
            DeltaBucket::Atm => "ATM",
            DeltaBucket::TwentyFiveDeltaCall => "25d-call",
            DeltaBucket::TenDeltaCall => "10d-call",
        }
    }

    pub fn parse(s: &str) -> Option<DeltaBucket> {
        match s {
            "10d-put" => Some(DeltaBucket::TenDeltaPut),
            "25d-put" => Some(DeltaBucket::TwentyFiveDeltaPut),
            "ATM" => Some(DeltaBucket::Atm),
            "25d-call" => Some(DeltaBucket::TwentyFiveDeltaCall),
            "10d-call" => Some(DeltaBucket::TenDeltaCall),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            DeltaBucket::TenDeltaPut => 0,
            DeltaBucket::TwentyFiveDeltaPut => 1,
            DeltaBucket::Atm => 2,
            DeltaBucket::TwentyFiveDeltaCall => 3,
            DeltaBucket::TenDeltaCall => 4,
        }
    }
}

impl fmt::Display for DeltaBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One implied-vol quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub currency: String,
    pub date: NaiveDate,
    /// Time to expiry in years (1/12 for 1M).
    pub tenor: f64,
    pub bucket: DeltaBucket,
    /// Annualized Black-style implied volatility, decimal.
    pub implied_vol: f64,
}

/// One day of spot/forward/rate data for a currency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxRecord {
    pub currency: String,
    pub date: NaiveDate,
    pub spot_bid: f64,
    pub spot_mid: f64,
    pub spot_ask: f64,
    pub fwd_bid: f64,
    pub fwd_mid: f64,
    pub fwd_ask: f64,
    /// Domestic (USD) annualized simple rate, decimal.
    pub rate_dom: f64,
    /// Foreign annualized simple rate, decimal.
    pub rate_for: f64,
}

/// Pillar vols per tenor, keyed by the tenor's f64 bit pattern.
type TenorPillars = BTreeMap<u64, [Option<f64>; 5]>;

/// Per-(currency, date) sets of delta-pillar vols at one or more tenors.
#[derive(Debug, Clone, Default)]
pub struct VolSurfacePanel {
    /// Quotes in load order.
    pub quotes: Vec<OptionQuote>,
    cells: BTreeMap<(String, NaiveDate), TenorPillars>,
}

impl VolSurfacePanel {
    pub fn from_quotes(quotes: Vec<OptionQuote>) -> Result<Self> {
        let mut panel = VolSurfacePanel::default();
        for (i, q) in quotes.into_iter().enumerate() {
            panel.insert(q, i + 2)?; // pretend line numbers after a header
        }
        Ok(panel)
    }

    fn insert(&mut self, q: OptionQuote, line: usize) -> Result<()> {
        let tenor_key = q.tenor.to_bits();
        let cell = self
            .cells
            .entry((q.currency.clone(), q.date))
            .or_default()
            .entry(tenor_key)
            .or_insert([None; 5]);
        let slot = &mut cell[q.bucket.index()];
        if slot.is_some() {
            return Err(Error::DuplicateQuote {
                line,
                date: q.date,
                currency: q.currency,
                bucket: q.bucket.as_str().to_string(),
            });
        }
        *slot = Some(q.implied_vol);
        self.quotes.push(q);
        Ok(())
    }

    /// The five pillar vols for a cell at the given tenor, if all present.
    /// Returned in increasing-strike bucket order.
    pub fn smile_vols(
        &self,
        currency: &str,
        date: NaiveDate,
        tenor: f64,
    ) -> Option<[(DeltaBucket, f64); 5]> {
        let tenors = self.cells.get(&(currency.to_string(), date))?;
        let cell = tenors.get(&tenor.to_bits())?;
        let mut out = [(DeltaBucket::Atm, 0.0); 5];
        for (i, bucket) in DeltaBucket::ALL.iter().enumerate() {
            out[i] = (*bucket, cell[i]?);
        }
        Some(out)
    }

    /// True when every pillar of the cell at `tenor` is quoted.
    pub fn has_complete_smile(&self, currency: &str, date: NaiveDate, tenor: f64) -> bool {
        self.smile_vols(currency, date, tenor).is_some()
    }

    /// Distinct (currency, date) cells with a complete smile at `tenor`.
    pub fn complete_cells(&self, tenor: f64) -> Vec<(String, NaiveDate)> {
        self.cells
            .iter()
            .filter(|(_, tenors)| {
                tenors
                    .get(&tenor.to_bits())
                    .is_some_and(|c| c.iter().all(Option::is_some))
            })
            .map(|(k, _)| k.clone())
            .collect()
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("cannot parse {what} from {s:?}"),
    })
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| Error::MalformedRow {
        line,
        reason: format!("invalid ISO date {s:?}"),
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().map(str::to_string).collect())
}

const SURFACE_HEADER: &str = "date,currency,tenor,bucket,vol";
const FX_HEADER: &str =
    "date,currency,spot_bid,spot_mid,spot_ask,fwd_bid,fwd_mid,fwd_ask,rate_dom,rate_for";

/// Load an option vol surface CSV.
pub fn load_option_surface(path: impl AsRef<Path>) -> Result<VolSurfacePanel> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    match iter.next() {
        Some((_, h)) if h.trim() == SURFACE_HEADER => {}
        Some((_, h)) => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header {SURFACE_HEADER:?}, found {h:?}"),
            })
        }
        None => return Err(Error::EmptyFile(path.display().to_string())),
    }
    let mut panel = VolSurfacePanel::default();
    let mut rows = 0usize;
    for (idx, raw) in iter {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let date = parse_date(fields[0], line)?;
        let currency = fields[1].trim().to_string();
        if currency.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty currency code".into(),
            });
        }
        let tenor: f64 = parse_field(fields[2], line, "tenor")?;
        let bucket = DeltaBucket::parse(fields[3].trim()).ok_or_else(|| Error::MalformedRow {
            line,
            reason: format!("unknown bucket {:?}", fields[3].trim()),
        })?;
        let vol: f64 = parse_field(fields[4], line, "vol")?;
        if !tenor.is_finite() || tenor <= 0.0 || !vol.is_finite() || vol <= 0.0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("tenor and vol must be positive, got tenor={tenor}, vol={vol}"),
            });
        }
        panel.insert(
            OptionQuote {
                currency,
                date,
                tenor,
                bucket,
                implied_vol: vol,
            },
            line,
        )?;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(panel)
}

/// Write an option vol surface CSV (inverse of [`load_option_surface`]).
pub fn save_option_surface(quotes: &[OptionQuote], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::from(SURFACE_HEADER);
    buf.push('\n');
    for q in quotes {
        buf.push_str(&format!(
            "{},{},{},{},{}\n",
            q.date, q.currency, q.tenor, q.bucket, q.implied_vol
        ));
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load the FX panel CSV, checking quote-ordering invariants per row.
pub fn load_fx_panel(path: impl AsRef<Path>) -> Result<Vec<FxRecord>> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    match iter.next() {
        Some((_, h)) if h.trim() == FX_HEADER => {}
        Some((_, h)) => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header {FX_HEADER:?}, found {h:?}"),
            })
        }
        None => return Err(Error::EmptyFile(path.display().to_string())),
    }
    let mut records = Vec::new();
    for (idx, raw) in iter {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        let date = parse_date(fields[0], line)?;
        let currency = fields[1].trim().to_string();
        let nums: Vec<f64> = fields[2..]
            .iter()
            .enumerate()
            .map(|(i, s)| parse_field::<f64>(s, line, &format!("field {}", i + 3)))
            .collect::<Result<_>>()?;
        let rec = FxRecord {
            currency,
            date,
            spot_bid: nums[0],
            spot_mid: nums[1],
            spot_ask: nums[2],
            fwd_bid: nums[3],
            fwd_mid: nums[4],
            fwd_ask: nums[5],
            rate_dom: nums[6],
            rate_for: nums[7],
        };
        validate_fx_record(&rec, line)?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(records)
}

fn validate_fx_record(r: &FxRecord, line: usize) -> Result<()> {
    for (side, bid, mid, ask) in [
        ("spot", r.spot_bid, r.spot_mid, r.spot_ask),
        ("forward", r.fwd_bid, r.fwd_mid, r.fwd_ask),
    ] {
        if bid > ask {
            return Err(Error::CrossedMarket {
                line,
                side: side.to_string(),
                bid,
                ask,
            });
        }
        if !(bid > 0.0 && mid > 0.0 && ask > 0.0) {
            return Err(Error::MalformedRow {
                line,
                reason: format!("{side} prices must be positive"),
            });
        }
        if mid < bid || mid > ask {
            return Err(Error::MalformedRow {
                line,
                reason: format!("{side} mid {mid} outside [{bid}, {ask}]"),
            });
        }
    }
    Ok(())
}

/// Write the FX panel CSV (inverse of [`load_fx_panel`]).
pub fn save_fx_panel(records: &[FxRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::from(FX_HEADER);
    buf.push('\n');
    for r in records {
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.date,
            r.currency,
            r.spot_bid,
            r.spot_mid,
            r.spot_ask,
            r.fwd_bid,
            r.fwd_mid,
            r.fwd_ask,
            r.rate_dom,
            r.rate_for
        ));
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Sampling frequency for period-end selection and annualization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    Daily,
    Weekly,
    Monthly,
}

impl Frequency {
    /// Periods per year used for annualization: 252 / 52 / 12.
    pub fn periods_per_year(self) -> f64 {
        match self {
            Frequency::Daily => 252.0,
            Frequency::Weekly => 52.0,
            Frequency::Monthly => 12.0,
        }
    }

    pub fn parse(s: &str) -> Option<Frequency> {
        match s {
            "d" | "daily" => Some(Frequency::Daily),
            "w" | "weekly" => Some(Frequency::Weekly),
            "m" | "monthly" => Some(Frequency::Monthly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
        }
    }
}

/// Option and FX panels matched onto a common (date, currency) grid.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    /// Strictly increasing union date grid.
    pub dates: Vec<NaiveDate>,
    /// Ordered currency list (lexicographic).
    pub currencies: Vec<String>,
    /// Row-major (date x currency) availability; true iff a complete smile
    /// and an FX record both exist.
    pub mask: Vec<bool>,
    /// Tenor the smile completeness was checked at.
    pub tenor: f64,
    fx: BTreeMap<(NaiveDate, String), FxRecord>,
    smiles: BTreeMap<(NaiveDate, String), [(DeltaBucket, f64); 5]>,
}

impl AlignedDataset {
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_currencies(&self) -> usize {
        self.currencies.len()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn currency_index(&self, ccy: &str) -> Option<usize> {
        self.currencies.iter().position(|c| c == ccy)
    }

    pub fn available(&self, di: usize, ci: usize) -> bool {
        self.mask[di * self.currencies.len() + ci]
    }

    pub fn fx(&self, date: NaiveDate, ccy: &str) -> Option<&FxRecord> {
        self.fx.get(&(date, ccy.to_string()))
    }

    pub fn smile_vols(&self, date: NaiveDate, ccy: &str) -> Option<&[(DeltaBucket, f64); 5]> {
        self.smiles.get(&(date, ccy.to_string()))
    }

    /// Log mid spot.
    pub fn log_spot(&self, date: NaiveDate, ccy: &str) -> Option<f64> {
        self.fx(date, ccy).map(|r| r.spot_mid.ln())
    }

    /// Log mid 1M forward.
    pub fn log_forward(&self, date: NaiveDate, ccy: &str) -> Option<f64> {
        self.fx(date, ccy).map(|r| r.fwd_mid.ln())
    }

    /// Once a currency enters the joint panel it must stay: any false cell
    /// after the first true cell fails with [`Error::NonMonotoneEntry`].
    pub fn validate_monotone_entry(&self) -> Result<()> {
        let n = self.currencies.len();
        for (ci, ccy) in self.currencies.iter().enumerate() {
            let mut entered_at: Option<usize> = None;
            for (di, date) in self.dates.iter().enumerate() {
                let avail = self.mask[di * n + ci];
                match (entered_at, avail) {
                    (None, true) => entered_at = Some(di),
                    (Some(_), false) => {
                        return Err(Error::NonMonotoneEntry {
                            currency: ccy.clone(),
                            date: *date,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Match the two panels: the grid is the union of dates; a cell is available
/// iff both a complete smile (at `tenor`) and an FX record exist.
pub fn align(surface: &VolSurfacePanel, fx_records: &[FxRecord], tenor: f64) -> Result<AlignedDataset> {
    let mut dates: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut currencies: BTreeSet<String> = BTreeSet::new();

    let complete = surface.complete_cells(tenor);
    for (ccy, date) in &complete {
        dates.insert(*date);
        currencies.insert(ccy.clone());
    }
    let mut fx_map = BTreeMap::new();
    for r in fx_records {
        dates.insert(r.date);
        currencies.insert(r.currency.clone());
        fx_map.insert((r.date, r.currency.clone()), r.clone());
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let currencies: Vec<String> = currencies.into_iter().collect();
    let mut smiles = BTreeMap::new();
    for (ccy, date) in &complete {
        if let Some(vols) = surface.smile_vols(ccy, *date, tenor) {
            smiles.insert((*date, ccy.clone()), vols);
        }
    }

    let mut mask = vec![false; dates.len() * currencies.len()];
    let mut any = false;
    for (di, date) in dates.iter().enumerate() {
        for (ci, ccy) in currencies.iter().enumerate() {
            let ok = smiles.contains_key(&(*date, ccy.clone()))
                && fx_map.contains_key(&(*date, ccy.clone()));
            mask[di * currencies.len() + ci] = ok;
            any |= ok;
        }
    }
    if !any {
        return Err(Error::NoOverlap);
    }
    Ok(AlignedDataset {
        dates,
        currencies,
        mask,
        tenor,
        fx: fx_map,
        smiles,
    })
}

/// Select period-end dates from a date grid.
///
/// Monthly keeps the last available date of each calendar month, weekly the
/// last of each ISO week, daily is the identity.
pub fn sample_period_ends(dates: &[NaiveDate], frequency: Frequency) -> Vec<NaiveDate> {
    match frequency {
        Frequency::Daily => dates.to_vec(),
        Frequency::Monthly => {
            let mut last: BTreeMap<(i32, u32), NaiveDate> = BTreeMap::new();
            for d in dates {
                let key = (d.year(), d.month());
                let e = last.entry(key).or_insert(*d);
                if *d > *e {
                    *e = *d;
                }
            }
            last.into_values().collect()
        }
        Frequency::Weekly => {
            let mut last: BTreeMap<(i32, u32), NaiveDate> = BTreeMap::new();
            for d in dates {
                let iso = d.iso_week();
                let key = (iso.year(), iso.week());
                let e = last.entry(key).or_insert(*d);
                if *d > *e {
                    *e = *d;
                }
            }
            let mut out: Vec<NaiveDate> = last.into_values().collect();
            out.sort();
            out
        }
    }
}
