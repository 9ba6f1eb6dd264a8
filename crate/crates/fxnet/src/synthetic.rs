//! Seeded synthetic market data with planted structure.
//!
//! Real 20-currency OTC option panels are proprietary, so the repo ships a
//! generator that emits loader-compatible files with known ground truth:
//!
//! - implied variances follow a stationary VAR(1) around a positive base
//!   level in which currency 0 is a pure transmitter (its lagged shocks feed
//!   every other variance; nothing feeds back) and innovations share a
//!   common correlation component;
//! - smile quotes are flat at the vol implied by each day's variance, so the
//!   synthesis stage recovers the planted variance path;
//! - spots are geometric random walks and forwards carry planted
//!   per-currency interest differentials (assigned by a seeded shuffle so
//!   carry ranks do not line up with network ranks);
//! - a JSON sidecar records the truth for verification.
//!
//! Same seed, same files, byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::market_data::{DeltaBucket, FxRecord, OptionQuote, ONE_MONTH};

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_currencies: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Lag-1 coefficient from the transmitter to every other variance.
    pub transmitter_strength: f64,
    /// Own-lag persistence of each variance deviation.
    pub persistence: f64,
    /// Innovation standard deviation of the variance process.
    pub civ_innovation_sd: f64,
    /// Pairwise innovation correlation (the common component).
    pub innovation_correlation: f64,
    /// Base 1M implied vol (annualized) around which variances move.
    pub base_vol: f64,
    /// Largest annualized carry spread across currencies.
    pub carry_spread_max: f64,
    /// Daily log-spot volatility.
    pub spot_vol: f64,
    /// Full quoted log spread (e.g. 0.001 = 10bp) on spot and forward.
    pub full_spread: f64,
    pub start_date: NaiveDate,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_currencies: 6,
            n_days: 750,
            seed: 7,
            transmitter_strength: 0.18,
            persistence: 0.90,
            civ_innovation_sd: 4.0e-5,
            innovation_correlation: 0.3,
            base_vol: 0.10,
            carry_spread_max: 0.08,
            spot_vol: 0.006,
            full_spread: 0.001,
            start_date: NaiveDate::from_ymd_opt(2006, 1, 2).unwrap(),
        }
    }
}

impl SyntheticConfig {
    pub fn currency_code(&self, i: usize) -> String {
        format!("C{i:02}")
    }

    fn base_civ(&self) -> f64 {
        self.base_vol * self.base_vol * ONE_MONTH
    }
}

/// What the generator planted, for verification against estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub currencies: Vec<String>,
    /// VAR(1) coefficient matrix of variance deviations, row = receiving.
    pub phi: Vec<Vec<f64>>,
    /// Innovation covariance of the variance process.
    pub sigma: Vec<Vec<f64>>,
    /// The pure-transmitter currency.
    pub transmitter: String,
    /// Annualized carry spread per currency.
    pub carry: BTreeMap<String, f64>,
    /// Expected monthly excess return per currency (carry / 12).
    pub expected_monthly_rx: BTreeMap<String, f64>,
    pub base_civ: f64,
    pub seed: u64,
}

/// Generated panels plus the sidecar truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub quotes: Vec<OptionQuote>,
    pub fx: Vec<FxRecord>,
    pub truth: GroundTruth,
    pub dates: Vec<NaiveDate>,
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut day = start;
    while out.len() < n {
        if day.weekday().num_days_from_monday() < 5 {
            out.push(day);
        }
        day = day.succ_opt().unwrap();
    }
    out
}

/// Generate the full synthetic dataset.
pub fn generate(config: &SyntheticConfig) -> SyntheticData {
    let n = config.n_currencies;
    let t = config.n_days;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let dates = business_days(config.start_date, t);
    let currencies: Vec<String> = (0..n).map(|i| config.currency_code(i)).collect();

    // Planted VAR(1): persistent diagonals, transmitter column 0 feeds all
    // other rows, row 0 receives nothing.
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        phi[(i, i)] = config.persistence;
    }
    for i in 1..n {
        phi[(i, 0)] = config.transmitter_strength;
    }
    let sd = config.civ_innovation_sd;
    let rho = config.innovation_correlation;
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sd * sd
        } else {
            rho * sd * sd
        }
    });
    let sigma_chol = Cholesky::new(sigma.clone()).expect("valid correlation").l();

    // Simulate variance deviations with a burn-in, clamped to keep the
    // variance level positive.
    let base = config.base_civ();
    let clamp = 0.9 * base;
    let mut x = DVector::<f64>::zeros(n);
    for _ in 0..200 {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = &phi * x + &sigma_chol * z;
    }
    let mut civ_path = Vec::with_capacity(t);
    for _ in 0..t {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = &phi * x + &sigma_chol * z;
        let civ: Vec<f64> = x.iter().map(|d| base + d.clamp(-clamp, clamp)).collect();
        civ_path.push(civ);
    }

    // Carry spreads: evenly spaced, shuffled so carry rank != network rank.
    let mut carry_levels: Vec<f64> = (0..n)
        .map(|i| {
            if n > 1 {
                config.carry_spread_max * i as f64 / (n - 1) as f64
            } else {
                config.carry_spread_max
            }
        })
        .collect();
    for i in (1..carry_levels.len()).rev() {
        let j = rng.random_range(0..=i);
        carry_levels.swap(i, j);
    }

    // Spot paths.
    let mut spots = vec![1.0f64; n];
    let half_spread = 0.5 * config.full_spread;

    let mut quotes = Vec::with_capacity(t * n * 5);
    let mut fx = Vec::with_capacity(t * n);
    for (di, date) in dates.iter().enumerate() {
        for ci in 0..n {
            let civ = civ_path[di][ci];
            let vol = (civ / ONE_MONTH).sqrt();
            for bucket in DeltaBucket::ALL {
                quotes.push(OptionQuote {
                    currency: currencies[ci].clone(),
                    date: *date,
                    tenor: ONE_MONTH,
                    bucket,
                    implied_vol: vol,
                });
            }
            let spot_mid = spots[ci];
            let fwd_mid = spot_mid * (carry_levels[ci] * ONE_MONTH).exp();
            fx.push(FxRecord {
                currency: currencies[ci].clone(),
                date: *date,
                spot_bid: spot_mid * (-half_spread).exp(),
                spot_mid,
                spot_ask: spot_mid * half_spread.exp(),
                fwd_bid: fwd_mid * (-half_spread).exp(),
                fwd_mid,
                fwd_ask: fwd_mid * half_spread.exp(),
                rate_dom: 0.01,
                rate_for: 0.01 + carry_levels[ci],
            });
            let z: f64 = rng.sample(StandardNormal);
            spots[ci] *= (config.spot_vol * z).exp();
        }
    }

    let carry: BTreeMap<String, f64> = currencies
        .iter()
        .cloned()
        .zip(carry_levels.iter().copied())
        .collect();
    let expected_monthly_rx: BTreeMap<String, f64> = carry
        .iter()
        .map(|(c, v)| (c.clone(), v * ONE_MONTH))
        .collect();
    let truth = GroundTruth {
        currencies: currencies.clone(),
        phi: (0..n)
            .map(|i| (0..n).map(|j| phi[(i, j)]).collect())
            .collect(),
        sigma: (0..n)
            .map(|i| (0..n).map(|j| sigma[(i, j)]).collect())
            .collect(),
        transmitter: currencies[0].clone(),
        carry,
        expected_monthly_rx,
        base_civ: base,
        seed: config.seed,
    };
    SyntheticData {
        quotes,
        fx,
        truth,
        dates,
    }
}

/// Generate and write the three artifacts.
pub fn write_files(
    config: &SyntheticConfig,
    surface_path: impl AsRef<Path>,
    fx_path: impl AsRef<Path>,
    truth_path: impl AsRef<Path>,
) -> Result<SyntheticData> {
    let data = generate(config);
    crate::market_data::save_option_surface(&data.quotes, surface_path)?;
    crate::market_data::save_fx_panel(&data.fx, fx_path)?;
    let json =
        serde_json::to_string_pretty(&data.truth).expect("ground truth serializes");
    let truth_path = truth_path.as_ref();
    std::fs::write(truth_path, json)
        .map_err(|e| crate::error::Error::io(truth_path.display().to_string(), e))?;
    Ok(data)
}
