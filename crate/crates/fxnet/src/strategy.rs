//! Currency excess returns, quintile sorts, long-short strategies,
//! transaction costs, and performance statistics.
//!
//! Returns are in log units: `rx = f_t - s_{t+1}` with the decomposition
//! `fx = -(s_{t+1} - s_t)` (spot appreciation) and `ir = f_t - s_t` (forward
//! discount), so `rx = fx + ir` holds exactly cell by cell.
//!
//! Sorting convention: P1 holds the highest signal values, P5 the lowest;
//! ties break by currency code. Network sorts buy P5 (net-receivers) and
//! sell P1; the benchmark sorts buy P1 per their economic direction (carry
//! buys high rates, volatility buys high vol, the variance-premium strategy
//! buys cheap insurance, momentum buys winners).
//!
//! The cost ledger tracks each currency's position cycle: the forward leg is
//! rolled every period at the effective bid (long) or ask (short); the spot
//! leg pays the effective ask/bid only in the period the position actually
//! closes. Effective quotes sit `spread_fraction` of the quoted log
//! half-spread away from mid. First and last periods force open/close.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::econometrics::{self, long_run_variance};
use crate::error::{Error, Result};
use crate::market_data::{AlignedDataset, Frequency};
use crate::panel::CivPanel;

/// One realized excess return with its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnObs {
    pub rx: f64,
    pub fx: f64,
    pub ir: f64,
}

/// Returns realized between two consecutive sampled period ends.
#[derive(Debug, Clone)]
pub struct PeriodReturns {
    /// Position-formation date t.
    pub signal_date: NaiveDate,
    /// Realization date t+1.
    pub realize_date: NaiveDate,
    pub returns: BTreeMap<String, ReturnObs>,
}

/// Panel of per-period currency excess returns at a sampling frequency.
#[derive(Debug, Clone)]
pub struct ExcessReturnPanel {
    pub frequency: Frequency,
    pub period_ends: Vec<NaiveDate>,
    pub periods: Vec<PeriodReturns>,
}

impl ExcessReturnPanel {
    pub fn period_by_signal_date(&self, date: NaiveDate) -> Option<&PeriodReturns> {
        self.periods.iter().find(|p| p.signal_date == date)
    }
}

/// Log excess returns between consecutive period ends.
///
/// A currency contributes to the period formed at t only when it is fully
/// available at t (smile and FX) and has a spot at t+1.
pub fn excess_returns(ds: &AlignedDataset, frequency: Frequency) -> ExcessReturnPanel {
    let ends = crate::market_data::sample_period_ends(&ds.dates, frequency);
    let mut periods = Vec::new();
    for w in ends.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mut returns = BTreeMap::new();
        if let Some(di) = ds.date_index(t0) {
            for (ci, ccy) in ds.currencies.iter().enumerate() {
                if !ds.available(di, ci) {
                    continue;
                }
                let (f_t, s_t) = match (ds.log_forward(t0, ccy), ds.log_spot(t0, ccy)) {
                    (Some(f), Some(s)) => (f, s),
                    _ => continue,
                };
                let s_next = match ds.log_spot(t1, ccy) {
                    Some(s) => s,
                    None => continue,
                };
                returns.insert(
                    ccy.clone(),
                    ReturnObs {
                        rx: f_t - s_next,
                        fx: s_t - s_next,
                        ir: f_t - s_t,
                    },
                );
            }
        }
        periods.push(PeriodReturns {
            signal_date: t0,
            realize_date: t1,
            returns,
        });
    }
    ExcessReturnPanel {
        frequency,
        period_ends: ends,
        periods,
    }
}

/// Quintile memberships for one formation date. `quintiles[0]` is P1
/// (highest signal), `quintiles[4]` is P5 (lowest).
#[derive(Debug, Clone)]
pub struct PortfolioAssignment {
    pub signal_date: NaiveDate,
    pub signal_name: String,
    pub quintiles: [Vec<String>; 5],
    /// Mean signal per quintile.
    pub signal_means: [f64; 5],
}

/// Quintile sizes for a universe of `n`: base `n/5` each, remainders to the
/// extreme quintiles first (P1, P5, P2, P4, then P3).
pub fn quintile_sizes(n: usize) -> [usize; 5] {
    let base = n / 5;
    let rem = n % 5;
    let mut sizes = [base; 5];
    const ORDER: [usize; 5] = [0, 4, 1, 3, 2];
    for &q in ORDER.iter().take(rem) {
        sizes[q] += 1;
    }
    sizes
}

/// Sort a universe into quintiles on descending signal, ties by code.
pub fn sort_quintiles(
    signals: &BTreeMap<String, f64>,
    signal_date: NaiveDate,
    signal_name: &str,
) -> Result<PortfolioAssignment> {
    let n = signals.len();
    if n < 5 {
        return Err(Error::UniverseTooSmall { n });
    }
    let mut ranked: Vec<(&String, f64)> = signals.iter().map(|(c, v)| (c, *v)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite signals")
            .then_with(|| a.0.cmp(b.0))
    });
    let sizes = quintile_sizes(n);
    let mut quintiles: [Vec<String>; 5] = Default::default();
    let mut signal_means = [0.0f64; 5];
    let mut cursor = 0usize;
    for q in 0..5 {
        let slice = &ranked[cursor..cursor + sizes[q]];
        quintiles[q] = slice.iter().map(|(c, _)| (*c).clone()).collect();
        signal_means[q] = slice.iter().map(|(_, v)| v).sum::<f64>() / sizes[q] as f64;
        cursor += sizes[q];
    }
    Ok(PortfolioAssignment {
        signal_date,
        signal_name: signal_name.to_string(),
        quintiles,
        signal_means,
    })
}

/// Which quintile the long-short strategy buys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LongLeg {
    /// Buy P5, sell P1 (network sorts: buy net-receivers).
    P5,
    /// Buy P1, sell P5 (benchmark sorts).
    P1,
}

/// Return series of the five quintiles and the long-short strategy.
#[derive(Debug, Clone)]
pub struct StrategyTrack {
    pub name: String,
    pub frequency: Frequency,
    pub long_leg: LongLeg,
    /// Realization dates of each period's returns.
    pub realize_dates: Vec<NaiveDate>,
    pub quintile_returns: [Vec<f64>; 5],
    pub long_short: Vec<f64>,
    /// Mean fx component per quintile plus the long-short spread.
    pub fx_means: [f64; 6],
    /// Mean ir component per quintile plus the long-short spread.
    pub ir_means: [f64; 6],
    /// Mean signal per quintile plus the long-minus-short signal spread.
    pub signal_means: [f64; 6],
    /// Spread fraction of the cost model (None = gross).
    pub cost_model: Option<f64>,
    /// Assignments that produced the track (kept for cost/allocation reuse).
    pub assignments: Vec<PortfolioAssignment>,
}

impl StrategyTrack {
    pub fn long_index(&self) -> usize {
        match self.long_leg {
            LongLeg::P5 => 4,
            LongLeg::P1 => 0,
        }
    }

    pub fn short_index(&self) -> usize {
        4 - self.long_index()
    }

    pub fn long_set<'a>(&self, assignment: &'a PortfolioAssignment) -> &'a [String] {
        &assignment.quintiles[self.long_index()]
    }

    pub fn short_set<'a>(&self, assignment: &'a PortfolioAssignment) -> &'a [String] {
        &assignment.quintiles[self.short_index()]
    }
}

/// Equal-weight quintile and long-short returns from assignments paired with
/// the returns realized one period later. Periods where some quintile has no
/// realized member are dropped.
pub fn long_short_returns(
    assignments: &[PortfolioAssignment],
    panel: &ExcessReturnPanel,
    long_leg: LongLeg,
    name: &str,
) -> StrategyTrack {
    let mut realize_dates = Vec::new();
    let mut quintile_returns: [Vec<f64>; 5] = Default::default();
    let mut long_short = Vec::new();
    let mut fx_sums = [0.0f64; 6];
    let mut ir_sums = [0.0f64; 6];
    let mut sig_sums = [0.0f64; 6];
    let mut kept = Vec::new();
    let long_idx = match long_leg {
        LongLeg::P5 => 4usize,
        LongLeg::P1 => 0,
    };
    let short_idx = 4 - long_idx;

    for assignment in assignments {
        let period = match panel.period_by_signal_date(assignment.signal_date) {
            Some(p) => p,
            None => continue,
        };
        let mut q_rx = [0.0f64; 5];
        let mut q_fx = [0.0f64; 5];
        let mut q_ir = [0.0f64; 5];
        let mut complete = true;
        for q in 0..5 {
            let members: Vec<&ReturnObs> = assignment.quintiles[q]
                .iter()
                .filter_map(|c| period.returns.get(c))
                .collect();
            if members.is_empty() {
                complete = false;
                break;
            }
            let n = members.len() as f64;
            q_rx[q] = members.iter().map(|r| r.rx).sum::<f64>() / n;
            q_fx[q] = members.iter().map(|r| r.fx).sum::<f64>() / n;
            q_ir[q] = members.iter().map(|r| r.ir).sum::<f64>() / n;
        }
        if !complete {
            continue;
        }
        realize_dates.push(period.realize_date);
        for q in 0..5 {
            quintile_returns[q].push(q_rx[q]);
            fx_sums[q] += q_fx[q];
            ir_sums[q] += q_ir[q];
            sig_sums[q] += assignment.signal_means[q];
        }
        long_short.push(q_rx[long_idx] - q_rx[short_idx]);
        fx_sums[5] += q_fx[long_idx] - q_fx[short_idx];
        ir_sums[5] += q_ir[long_idx] - q_ir[short_idx];
        sig_sums[5] += assignment.signal_means[long_idx] - assignment.signal_means[short_idx];
        kept.push(assignment.clone());
    }

    let n = realize_dates.len().max(1) as f64;
    StrategyTrack {
        name: name.to_string(),
        frequency: panel.frequency,
        long_leg,
        realize_dates,
        quintile_returns,
        long_short,
        fx_means: fx_sums.map(|v| v / n),
        ir_means: ir_sums.map(|v| v / n),
        signal_means: sig_sums.map(|v| v / n),
        cost_model: None,
        assignments: kept,
    }
}

/// Benchmark strategy kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkKind {
    /// Equal-weight average of all available currencies (a portfolio).
    Dol,
    /// Sort on the forward discount `f - s`; buys high interest rates.
    Car,
    /// Sort on trailing-month realized volatility; buys high volatility.
    Vol,
    /// Sort on realized-minus-implied volatility; buys cheap insurance.
    Vrp,
    /// Sort on trailing six-period mean excess return; buys winners.
    Mom,
}

impl BenchmarkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::Dol => "dol",
            BenchmarkKind::Car => "car",
            BenchmarkKind::Vol => "vol",
            BenchmarkKind::Vrp => "vrp",
            BenchmarkKind::Mom => "mom",
        }
    }

    pub fn parse(s: &str) -> Option<BenchmarkKind> {
        match s {
            "dol" => Some(BenchmarkKind::Dol),
            "car" => Some(BenchmarkKind::Car),
            "vol" => Some(BenchmarkKind::Vol),
            "vrp" => Some(BenchmarkKind::Vrp),
            "mom" => Some(BenchmarkKind::Mom),
            _ => None,
        }
    }
}

/// Inputs benchmark signals may need.
pub struct SignalContext<'a> {
    pub dataset: &'a AlignedDataset,
    pub civ: Option<&'a CivPanel>,
    pub rx_panel: &'a ExcessReturnPanel,
}

/// Trailing-calendar-month realized volatility (monthly scale, not
/// annualized): sqrt of the sum of squared daily log mid-spot returns over
/// `(t - 1 month, t]`. None when the currency's window has gaps or too few
/// observations.
fn realized_vol(ds: &AlignedDataset, ccy: &str, t: NaiveDate) -> Option<f64> {
    let start = t - chrono::Months::new(1);
    let days: Vec<NaiveDate> = ds
        .dates
        .iter()
        .copied()
        .filter(|d| *d > start && *d <= t)
        .collect();
    if days.len() < 5 {
        return None;
    }
    let mut prev: Option<f64> = None;
    let mut acc = 0.0;
    let mut n_rets = 0usize;
    for d in &days {
        match (prev, ds.log_spot(*d, ccy)) {
            (Some(p), Some(s)) => {
                let r = s - p;
                acc += r * r;
                n_rets += 1;
                prev = Some(s);
            }
            (None, Some(s)) => prev = Some(s),
            (_, None) => return None,
        }
    }
    if n_rets < 4 {
        return None;
    }
    Some(acc.sqrt())
}

/// Signal values for one benchmark sort at formation date `t`, over the
/// universe available at `t`. `Dol` is a portfolio, not a sort; see
/// [`dollar_factor`].
pub fn benchmark_signal(
    kind: BenchmarkKind,
    ctx: &SignalContext,
    t: NaiveDate,
) -> Result<BTreeMap<String, f64>> {
    let ds = ctx.dataset;
    let di = ds.date_index(t).ok_or(Error::InsufficientHistory {
        signal: kind.as_str().into(),
        date: t,
        needed: 1,
    })?;
    let universe: Vec<&String> = ds
        .currencies
        .iter()
        .enumerate()
        .filter(|(ci, _)| ds.available(di, *ci))
        .map(|(_, c)| c)
        .collect();
    let mut out = BTreeMap::new();
    match kind {
        BenchmarkKind::Dol => {
            return Err(Error::Config(
                "dol is an equal-weight portfolio, not a sort".into(),
            ))
        }
        BenchmarkKind::Car => {
            for ccy in &universe {
                if let (Some(f), Some(s)) = (ds.log_forward(t, ccy), ds.log_spot(t, ccy)) {
                    out.insert((*ccy).clone(), f - s);
                }
            }
        }
        BenchmarkKind::Vol | BenchmarkKind::Vrp => {
            let start = t - chrono::Months::new(1);
            if ds.dates.first().map(|d| *d > start).unwrap_or(true) {
                return Err(Error::InsufficientHistory {
                    signal: kind.as_str().into(),
                    date: t,
                    needed: 21,
                });
            }
            for ccy in &universe {
                let rv = match realized_vol(ds, ccy, t) {
                    Some(v) => v,
                    None => continue,
                };
                if kind == BenchmarkKind::Vol {
                    out.insert((*ccy).clone(), rv);
                } else {
                    let civ = ctx.civ.ok_or_else(|| {
                        Error::Config("vrp needs the implied-variance panel".into())
                    })?;
                    let (Some(cdi), Some(cci)) = (civ.date_index(t), civ.currency_index(ccy))
                    else {
                        continue;
                    };
                    let v = civ.get(cdi, cci);
                    if v.is_nan() || v < 0.0 {
                        continue;
                    }
                    // Expected realized vol proxied by trailing realized;
                    // implied monthly vol is the sqrt of the 1M variance.
                    out.insert((*ccy).clone(), rv - v.sqrt());
                }
            }
        }
        BenchmarkKind::Mom => {
            let hist: Vec<&PeriodReturns> = ctx
                .rx_panel
                .periods
                .iter()
                .filter(|p| p.realize_date <= t)
                .collect();
            if hist.len() < 6 {
                return Err(Error::InsufficientHistory {
                    signal: "mom".into(),
                    date: t,
                    needed: 6,
                });
            }
            let window = &hist[hist.len() - 6..];
            for ccy in &universe {
                let vals: Vec<f64> = window
                    .iter()
                    .filter_map(|p| p.returns.get(*ccy).map(|r| r.rx))
                    .collect();
                if vals.len() == 6 {
                    out.insert((*ccy).clone(), vals.iter().sum::<f64>() / 6.0);
                }
            }
        }
    }
    Ok(out)
}

/// A plain named return series (the dollar factor, PCs, combinations).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// The dollar portfolio: per period, the equal-weight mean excess return of
/// every available currency.
pub fn dollar_factor(panel: &ExcessReturnPanel) -> FactorSeries {
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for p in &panel.periods {
        if p.returns.is_empty() {
            continue;
        }
        dates.push(p.realize_date);
        values.push(p.returns.values().map(|r| r.rx).sum::<f64>() / p.returns.len() as f64);
    }
    FactorSeries {
        name: "dol".into(),
        dates,
        values,
    }
}

/// Cost model: effective quotes sit `spread_fraction` of the quoted log
/// half-spread away from mid (0.5 = the 50% rule).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostModel {
    pub spread_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Long,
    Short,
    Flat,
}

struct EffectiveQuotes {
    fwd_bid: f64,
    fwd_ask: f64,
    spot_bid: f64,
    spot_ask: f64,
    spot_mid: f64,
}

fn effective_quotes(
    ds: &AlignedDataset,
    ccy: &str,
    date: NaiveDate,
    fraction: f64,
) -> Result<EffectiveQuotes> {
    let rec = ds.fx(date, ccy).ok_or_else(|| Error::MissingQuote {
        currency: ccy.to_string(),
        date,
    })?;
    let scale = |mid: f64, px: f64| {
        let (m, p) = (mid.ln(), px.ln());
        m + fraction * (p - m)
    };
    Ok(EffectiveQuotes {
        fwd_bid: scale(rec.fwd_mid, rec.fwd_bid),
        fwd_ask: scale(rec.fwd_mid, rec.fwd_ask),
        spot_bid: scale(rec.spot_mid, rec.spot_bid),
        spot_ask: scale(rec.spot_mid, rec.spot_ask),
        spot_mid: rec.spot_mid.ln(),
    })
}

/// Cost-adjusted returns for the long-short strategy of `track` (its
/// quintiles are costed as long-only books).
///
/// Long positions earn `f^b_t - s^a_{t+1}` when closed next period and
/// `f^b_t - s_{t+1}` when held; shorts mirror with the ask-side forward and
/// bid-side spot. The final period closes every position.
pub fn apply_transaction_costs(
    track: &StrategyTrack,
    ds: &AlignedDataset,
    panel: &ExcessReturnPanel,
    cost: CostModel,
) -> Result<StrategyTrack> {
    let assignments = &track.assignments;
    let mut long_short = Vec::with_capacity(assignments.len());
    let mut quintile_returns: [Vec<f64>; 5] = Default::default();
    let mut realize_dates = Vec::with_capacity(assignments.len());

    let position_of = |assignment: &PortfolioAssignment, ccy: &String| -> Position {
        if track.long_set(assignment).contains(ccy) {
            Position::Long
        } else if track.short_set(assignment).contains(ccy) {
            Position::Short
        } else {
            Position::Flat
        }
    };

    for (i, assignment) in assignments.iter().enumerate() {
        let period = panel
            .period_by_signal_date(assignment.signal_date)
            .expect("assignments came from this panel");
        realize_dates.push(period.realize_date);
        let next = assignments.get(i + 1);

        let mut long_acc = 0.0;
        for ccy in track.long_set(assignment) {
            let entry = effective_quotes(ds, ccy, assignment.signal_date, cost.spread_fraction)?;
            let exit = effective_quotes(ds, ccy, period.realize_date, cost.spread_fraction)?;
            let closes = next.is_none_or(|nx| position_of(nx, ccy) != Position::Long);
            let spot = if closes { exit.spot_ask } else { exit.spot_mid };
            long_acc += entry.fwd_bid - spot;
        }
        let mut short_acc = 0.0;
        for ccy in track.short_set(assignment) {
            let entry = effective_quotes(ds, ccy, assignment.signal_date, cost.spread_fraction)?;
            let exit = effective_quotes(ds, ccy, period.realize_date, cost.spread_fraction)?;
            let closes = next.is_none_or(|nx| position_of(nx, ccy) != Position::Short);
            let spot = if closes { exit.spot_bid } else { exit.spot_mid };
            short_acc += -entry.fwd_ask + spot;
        }
        long_short.push(
            long_acc / track.long_set(assignment).len() as f64
                + short_acc / track.short_set(assignment).len() as f64,
        );

        for (q, members) in assignment.quintiles.iter().enumerate() {
            let mut acc = 0.0;
            for ccy in members {
                let entry =
                    effective_quotes(ds, ccy, assignment.signal_date, cost.spread_fraction)?;
                let exit = effective_quotes(ds, ccy, period.realize_date, cost.spread_fraction)?;
                let holds = next.is_some_and(|nx| nx.quintiles[q].contains(ccy));
                let spot = if holds { exit.spot_mid } else { exit.spot_ask };
                acc += entry.fwd_bid - spot;
            }
            quintile_returns[q].push(acc / members.len() as f64);
        }
    }

    Ok(StrategyTrack {
        name: format!("{}(net)", track.name),
        frequency: track.frequency,
        long_leg: track.long_leg,
        realize_dates,
        quintile_returns,
        long_short,
        fx_means: track.fx_means,
        ir_means: track.ir_means,
        signal_means: track.signal_means,
        cost_model: Some(cost.spread_fraction),
        assignments: assignments.clone(),
    })
}

/// Annualized summary statistics of a per-period return series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub ann_mean_pct: f64,
    /// HAC t-statistic of the per-period mean.
    pub t_stat: f64,
    pub ann_sharpe: f64,
    pub ann_std_pct: f64,
    pub skewness: f64,
    /// Raw (non-excess) kurtosis.
    pub kurtosis: f64,
    /// First-order autocorrelation.
    pub ac1: f64,
    pub hac_lag: usize,
}

/// Compute summary statistics. Needs at least 24 observations; a constant
/// series (zero variance) is flagged as [`Error::DegenerateSeries`] because
/// its Sharpe ratio is undefined.
pub fn performance_stats(series: &[f64], frequency: Frequency) -> Result<SummaryStats> {
    let n = series.len();
    if n < 24 {
        return Err(Error::TooShort { n, min: 24 });
    }
    let a = frequency.periods_per_year();
    let mean = series.iter().sum::<f64>() / n as f64;
    let m2 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if m2 <= 1e-28 * (1.0 + mean * mean) {
        return Err(Error::DegenerateSeries);
    }
    let sd = m2.sqrt();
    let m3 = series.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
    let m4 = series.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
    let (lrv, lag) = long_run_variance(series);
    let t_stat = mean / (lrv.max(1e-300) / n as f64).sqrt();
    let mut ac_num = 0.0;
    for i in 1..n {
        ac_num += (series[i] - mean) * (series[i - 1] - mean);
    }
    let ac1 = ac_num / (m2 * n as f64);
    Ok(SummaryStats {
        n,
        ann_mean_pct: mean * a * 100.0,
        t_stat,
        ann_sharpe: mean * a / (sd * a.sqrt()),
        ann_std_pct: sd * a.sqrt() * 100.0,
        skewness: m3 / sd.powi(3),
        kurtosis: m4 / (m2 * m2),
        ac1,
        hac_lag: lag,
    })
}

/// One spanning regression: strategy returns on an intercept plus factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanningResult {
    /// Intercept scaled to percent per annum.
    pub alpha_annual_pct: f64,
    pub alpha_t: f64,
    /// (factor name, beta, t-stat).
    pub betas: Vec<(String, f64, f64)>,
    pub adj_r_squared: f64,
    pub n: usize,
}

/// Regress `strategy` on the factor set with HAC errors; series must be
/// aligned period by period.
pub fn spanning_regression(
    strategy: &[f64],
    factors: &[(&str, &[f64])],
    frequency: Frequency,
) -> Result<SpanningResult> {
    let t = strategy.len();
    for (_, f) in factors {
        if f.len() != t {
            return Err(Error::LengthMismatch {
                left: t,
                right: f.len(),
            });
        }
    }
    let k = factors.len() + 1;
    let x = DMatrix::from_fn(t, k, |i, j| if j == 0 { 1.0 } else { factors[j - 1].1[i] });
    let y = DVector::from_column_slice(strategy);
    let fit = econometrics::ols_hac(&y, &x)?;
    let a = frequency.periods_per_year();
    Ok(SpanningResult {
        alpha_annual_pct: fit.coefficients[0] * a * 100.0,
        alpha_t: fit.t_stats[0],
        betas: factors
            .iter()
            .enumerate()
            .map(|(j, (name, _))| (name.to_string(), fit.coefficients[j + 1], fit.t_stats[j + 1]))
            .collect(),
        adj_r_squared: fit.adj_r_squared,
        n: t,
    })
}

/// Weighted combination of aligned return series; weights must sum to 1.
pub fn combine_portfolios(series: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if series.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: series.len(),
            right: weights.len(),
        });
    }
    let t = series.first().map_or(0, |s| s.len());
    for s in series {
        if s.len() != t {
            return Err(Error::LengthMismatch {
                left: t,
                right: s.len(),
            });
        }
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("weights must sum to 1, got {wsum}")));
    }
    Ok((0..t)
        .map(|i| series.iter().zip(weights).map(|(s, w)| s[i] * w).sum())
        .collect())
}

/// Buy/sell frequencies of one strategy and position differences vs another.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationRow {
    pub currency: String,
    pub buy_a: f64,
    pub sell_a: f64,
    pub buy_b: f64,
    pub sell_b: f64,
    /// Fraction of overlapping periods where the currency's position
    /// (long/short/none) differs between the strategies.
    pub diff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationReport {
    pub rows: Vec<AllocationRow>,
    pub average_diff: f64,
}

/// Compare two strategies' allocations over overlapping formation dates.
pub fn allocation_report(a: &StrategyTrack, b: &StrategyTrack) -> AllocationReport {
    let b_by_date: BTreeMap<NaiveDate, &PortfolioAssignment> =
        b.assignments.iter().map(|x| (x.signal_date, x)).collect();
    let overlapping: Vec<(&PortfolioAssignment, &PortfolioAssignment)> = a
        .assignments
        .iter()
        .filter_map(|x| b_by_date.get(&x.signal_date).map(|y| (x, *y)))
        .collect();
    let mut currencies: Vec<String> = overlapping
        .iter()
        .flat_map(|(x, y)| {
            x.quintiles
                .iter()
                .chain(y.quintiles.iter())
                .flatten()
                .cloned()
        })
        .collect();
    currencies.sort();
    currencies.dedup();

    let pos = |track: &StrategyTrack, asg: &PortfolioAssignment, c: &String| -> Position {
        if track.long_set(asg).contains(c) {
            Position::Long
        } else if track.short_set(asg).contains(c) {
            Position::Short
        } else {
            Position::Flat
        }
    };

    let n = overlapping.len().max(1) as f64;
    let mut rows = Vec::new();
    let mut diff_sum = 0.0;
    for ccy in &currencies {
        let mut row = AllocationRow {
            currency: ccy.clone(),
            buy_a: 0.0,
            sell_a: 0.0,
            buy_b: 0.0,
            sell_b: 0.0,
            diff: 0.0,
        };
        for (x, y) in &overlapping {
            let pa = pos(a, x, ccy);
            let pb = pos(b, y, ccy);
            match pa {
                Position::Long => row.buy_a += 1.0,
                Position::Short => row.sell_a += 1.0,
                Position::Flat => {}
            }
            match pb {
                Position::Long => row.buy_b += 1.0,
                Position::Short => row.sell_b += 1.0,
                Position::Flat => {}
            }
            if pa != pb {
                row.diff += 1.0;
            }
        }
        row.buy_a /= n;
        row.sell_a /= n;
        row.buy_b /= n;
        row.sell_b /= n;
        row.diff /= n;
        diff_sum += row.diff;
        rows.push(row);
    }
    let average_diff = if rows.is_empty() {
        0.0
    } else {
        diff_sum / rows.len() as f64
    };
    AllocationReport { rows, average_diff }
}
