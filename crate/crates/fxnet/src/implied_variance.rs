//! Model-free implied variance from a five-point FX volatility smile.
//!
//! OTC FX dealers quote Garman–Kohlhagen implied vols at fixed delta pillars
//! (10d/25d puts and calls plus the delta-neutral ATM straddle). This module
//! converts those quotes into strike space, interpolates the smile linearly
//! in call-delta with flat wings, and evaluates the variance synthesized from
//! out-of-the-money option prices:
//!
//! ```text
//! CIV = (2/B) [ int_F^inf C(K)/K^2 dK + int_0^F P(K)/K^2 dK ]
//! ```
//!
//! on a log-spaced strike grid, trapezoidal rule. The result is the
//! risk-neutral variance of the log exchange-rate change over the option
//! tenor, in squared-log-return units (not annualized).
//!
//! Conventions (configurable flags deliberately kept minimal):
//! - deltas are forward, non-premium-adjusted: call delta = N(d1);
//! - ATM is the delta-neutral straddle, K = F exp(sigma^2 tau / 2);
//! - wings extrapolate flat beyond the 10-delta pillars.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::market_data::DeltaBucket;

/// Call or put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionKind {
    Call,
    Put,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Garman–Kohlhagen (discounted Black) option price on the forward.
///
/// Returns `B * Black(F, K, sigma, tau)`. Put-call parity
/// `C - P = B (F - K)` holds by construction; the `sigma -> 0` limit is the
/// discounted intrinsic value.
pub fn gk_price(f: f64, k: f64, sigma: f64, tau: f64, b: f64, kind: OptionKind) -> f64 {
    debug_assert!(f > 0.0 && k > 0.0 && tau > 0.0 && b > 0.0 && sigma >= 0.0);
    b * black_undiscounted(f, k, sigma, tau, kind)
}

fn black_undiscounted(f: f64, k: f64, sigma: f64, tau: f64, kind: OptionKind) -> f64 {
    let vol = sigma * tau.sqrt();
    if vol <= 1e-14 {
        return match kind {
            OptionKind::Call => (f - k).max(0.0),
            OptionKind::Put => (k - f).max(0.0),
        };
    }
    let n = std_normal();
    let d1 = ((f / k).ln() + 0.5 * vol * vol) / vol;
    let d2 = d1 - vol;
    match kind {
        OptionKind::Call => f * n.cdf(d1) - k * n.cdf(d2),
        OptionKind::Put => k * n.cdf(-d2) - f * n.cdf(-d1),
    }
}

/// Forward (non-premium-adjusted) call delta N(d1) at strike `k`.
pub fn forward_call_delta(f: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    let vol = sigma * tau.sqrt();
    if vol <= 1e-14 {
        return if f > k {
            1.0
        } else if f < k {
            0.0
        } else {
            0.5
        };
    }
    let d1 = ((f / k).ln() + 0.5 * vol * vol) / vol;
    std_normal().cdf(d1)
}

/// Call-delta coordinate of each quoted pillar.
///
/// A put quoted at delta -q shares its strike with the call of delta 1 - q;
/// the delta-neutral ATM straddle sits at call delta 0.5 exactly.
pub fn bucket_call_delta(bucket: DeltaBucket) -> f64 {
    match bucket {
        DeltaBucket::TenDeltaPut => 0.90,
        DeltaBucket::TwentyFiveDeltaPut => 0.75,
        DeltaBucket::Atm => 0.50,
        DeltaBucket::TwentyFiveDeltaCall => 0.25,
        DeltaBucket::TenDeltaCall => 0.10,
    }
}

/// Strike implied by a delta pillar, inverting the forward Black delta in
/// closed form: `K = F exp(sigma^2 tau / 2 - sigma sqrt(tau) N^{-1}(delta_c))`.
///
/// The ATM bucket maps to the delta-neutral straddle strike
/// `K = F exp(sigma^2 tau / 2)`; `sigma sqrt(tau) = 0` collapses to `K = F`.
pub fn strike_from_delta(f: f64, sigma: f64, tau: f64, bucket: DeltaBucket) -> Result<f64> {
    if !(f.is_finite() && sigma.is_finite() && tau.is_finite()) || f <= 0.0 {
        return Err(Error::NoConvergence(format!(
            "degenerate inputs F={f}, sigma={sigma}, tau={tau}"
        )));
    }
    let vol = sigma * tau.sqrt();
    if vol <= 1e-14 {
        return Ok(f);
    }
    let k = match bucket {
        DeltaBucket::Atm => f * (0.5 * vol * vol).exp(),
        _ => {
            let d1 = std_normal().inverse_cdf(bucket_call_delta(bucket));
            f * (0.5 * vol * vol - vol * d1).exp()
        }
    };
    if k.is_finite() && k > 0.0 {
        Ok(k)
    } else {
        Err(Error::NoConvergence(format!(
            "non-finite strike for F={f}, sigma={sigma}, tau={tau}"
        )))
    }
}

/// Strike-space smile for one (currency, date, tenor) cell.
#[derive(Debug, Clone)]
pub struct Smile {
    /// Forward outright.
    pub forward: f64,
    /// Discount factor for the tenor.
    pub bond: f64,
    /// Time to expiry in years.
    pub tenor: f64,
    /// Five (strike, vol) pillars in strictly increasing strike order.
    pub points: [(f64, f64); 5],
    /// (call-delta, vol) nodes in increasing delta order, for interpolation.
    delta_nodes: [(f64, f64); 5],
}

impl Smile {
    /// Piecewise-linear vol in call-delta space, flat outside [0.10, 0.90].
    pub fn vol_at_call_delta(&self, delta: f64) -> f64 {
        let nodes = &self.delta_nodes;
        if delta <= nodes[0].0 {
            return nodes[0].1;
        }
        if delta >= nodes[4].0 {
            return nodes[4].1;
        }
        for w in nodes.windows(2) {
            let (d0, v0) = w[0];
            let (d1, v1) = w[1];
            if delta <= d1 {
                let t = (delta - d0) / (d1 - d0);
                return v0 + t * (v1 - v0);
            }
        }
        nodes[4].1
    }

    /// Vol at an arbitrary strike: the fixed point `sigma = g(Delta(K, sigma))`
    /// of the delta-space interpolant, with a bisection fallback.
    pub fn vol_at_strike(&self, k: f64) -> f64 {
        let mut sigma = self.delta_nodes[2].1; // start from ATM vol
        for _ in 0..100 {
            let next = self.vol_at_call_delta(forward_call_delta(self.forward, k, sigma, self.tenor));
            if (next - sigma).abs() <= 1e-14 * sigma.max(1e-8) {
                return next;
            }
            sigma = next;
        }
        // Fixed point cycled; bisect sigma - g(Delta(K, sigma)) instead.
        let vols: Vec<f64> = self.delta_nodes.iter().map(|p| p.1).collect();
        let lo0 = vols.iter().cloned().fold(f64::INFINITY, f64::min) * 0.25;
        let hi0 = vols.iter().cloned().fold(0.0f64, f64::max) * 4.0;
        let h = |s: f64| s - self.vol_at_call_delta(forward_call_delta(self.forward, k, s, self.tenor));
        let (mut lo, mut hi) = (lo0, hi0);
        if h(lo) * h(hi) > 0.0 {
            return sigma;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(lo) * h(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Build a strike-space [`Smile`] from the five pillar vols.
///
/// Quotes may arrive in any bucket order; strikes are computed per pillar
/// and must come out strictly increasing in the buckets' canonical
/// increasing-strike order (10d-put, 25d-put, ATM, 25d-call, 10d-call), or
/// the quote set is pathological.
pub fn build_smile(
    vols_by_bucket: &[(DeltaBucket, f64); 5],
    forward: f64,
    bond: f64,
    tenor: f64,
    context: &str,
) -> Result<Smile> {
    let mut ordered = *vols_by_bucket;
    ordered.sort_by_key(|(bucket, _)| DeltaBucket::ALL.iter().position(|b| b == bucket));
    let mut points = [(0.0, 0.0); 5];
    let mut delta_nodes = [(0.0, 0.0); 5];
    for (i, (bucket, vol)) in ordered.iter().enumerate() {
        let k = strike_from_delta(forward, *vol, tenor, *bucket)?;
        points[i] = (k, *vol);
        delta_nodes[i] = (bucket_call_delta(*bucket), *vol);
    }
    for w in points.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::NonMonotoneStrikes {
                context: context.to_string(),
            });
        }
    }
    // Call delta descends as the strike ascends; interpolation nodes sort by
    // delta.
    delta_nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite deltas"));
    Ok(Smile {
        forward,
        bond,
        tenor,
        points,
        delta_nodes,
    })
}

/// Integration configuration for [`compute_civ`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CivGrid {
    /// Number of strike grid points.
    pub n_grid: usize,
    /// Strike range multiplier: integrate over [F/m, F*m].
    pub range_mult: f64,
}

impl Default for CivGrid {
    fn default() -> Self {
        CivGrid {
            n_grid: 2000,
            range_mult: std::f64::consts::E,
        }
    }
}

/// Model-free implied variance result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CivResult {
    /// Risk-neutral variance of the log FX change over the tenor.
    pub civ: f64,
    /// Grid size used.
    pub n_grid: usize,
    /// Strike integration range [K_min, K_max].
    pub strike_range: (f64, f64),
}

/// Evaluate the model-free implied variance of the smile.
///
/// Trapezoidal rule on a log-spaced grid over `[F/m, F*m]`; out-of-the-money
/// side selected at each strike; prices from the interpolated smile vol. The
/// discount factor cancels (the integrand uses undiscounted prices times
/// 2 rather than dividing the discounted price by B).
pub fn compute_civ(smile: &Smile, grid: CivGrid) -> CivResult {
    let f = smile.forward;
    let k_min = f / grid.range_mult;
    let k_max = f * grid.range_mult;
    let n = grid.n_grid.max(2);
    let log_lo = k_min.ln();
    let step = (k_max.ln() - log_lo) / (n - 1) as f64;

    let integrand = |k: f64| -> f64 {
        let sigma = smile.vol_at_strike(k);
        let kind = if k >= f {
            OptionKind::Call
        } else {
            OptionKind::Put
        };
        black_undiscounted(f, k, sigma, smile.tenor, kind) / (k * k)
    };

    let mut acc = 0.0;
    let mut prev_k = k_min;
    let mut prev_v = integrand(prev_k);
    for i in 1..n {
        let k = (log_lo + step * i as f64).exp();
        let v = integrand(k);
        acc += 0.5 * (v + prev_v) * (k - prev_k);
        prev_k = k;
        prev_v = v;
    }
    CivResult {
        civ: 2.0 * acc,
        n_grid: n,
        strike_range: (k_min, k_max),
    }
}
