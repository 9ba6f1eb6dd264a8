//! Shared statistical kernels: Newey–West HAC long-run covariance with
//! Andrews AR(1) plug-in bandwidth, OLS with HAC standard errors, and
//! descriptive moments.
//!
//! Conventions:
//! - Matrices are `T x m` (rows = time). Inputs are demeaned internally, so
//!   `nw_hac` with lag 0 reproduces the (population-normalized) sample
//!   covariance exactly.
//! - The Bartlett taper `1 - j/(L+1)` keeps the estimate positive
//!   semidefinite for every lag choice.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Long-run covariance estimate.
#[derive(Debug, Clone)]
pub struct HacEstimate {
    /// `m x m` long-run covariance matrix.
    pub cov: DMatrix<f64>,
    /// Bartlett truncation lag actually used.
    pub lag: usize,
    /// Kernel name, always "bartlett" here.
    pub kernel: &'static str,
}

/// Andrews (1991) AR(1) plug-in truncation lag for the Bartlett kernel.
///
/// Per column: fit AR(1) by least squares, form
/// `alpha(1) = sum 4 rho^2 s^4 / ((1-rho)^6 (1+rho)^2) / sum s^4 / (1-rho)^4`,
/// then `S_T = 1.1447 (alpha(1) T)^{1/3}` and the integer lag is `floor(S_T)`.
/// Columns with (near-)zero innovation variance are skipped; if every column
/// is degenerate the lag is 0.
pub fn andrews_bandwidth(data: &DMatrix<f64>) -> usize {
    let t = data.nrows();
    if t < 10 {
        return 0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for col in data.column_iter() {
        let mean = col.mean();
        let x: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for i in 1..t {
            sxx += x[i - 1] * x[i - 1];
            sxy += x[i - 1] * x[i];
        }
        if sxx <= f64::EPSILON * t as f64 {
            continue; // degenerate column
        }
        let rho = (sxy / sxx).clamp(-0.97, 0.97);
        let mut sse = 0.0;
        for i in 1..t {
            let e = x[i] - rho * x[i - 1];
            sse += e * e;
        }
        let s2 = sse / (t - 1) as f64;
        if s2 <= 0.0 {
            continue;
        }
        let one_m = 1.0 - rho;
        let one_p = 1.0 + rho;
        num += 4.0 * rho * rho * s2 * s2 / (one_m.powi(6) * one_p.powi(2));
        den += s2 * s2 / one_m.powi(4);
    }
    if den <= 0.0 {
        return 0;
    }
    let alpha1 = num / den;
    let st = 1.1447 * (alpha1 * t as f64).powf(1.0 / 3.0);
    if st.is_finite() && st > 0.0 {
        st.floor() as usize
    } else {
        0
    }
}

/// Newey–West long-run covariance with Bartlett weights.
///
/// `Gamma_0 + sum_{j=1}^{lag} (1 - j/(lag+1)) (Gamma_j + Gamma_j')` with
/// `Gamma_j = (1/T) sum_{t>j} x_t x_{t-j}'` on the demeaned data.
pub fn nw_hac(data: &DMatrix<f64>, lag: usize) -> HacEstimate {
    let (t, m) = (data.nrows(), data.ncols());
    assert!(lag < t, "lag {lag} must be < T {t}");
    let means = DVector::from_iterator(m, data.column_iter().map(|c| c.mean()));
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= means[j];
        }
    }
    let mut cov = gamma_j(&x, 0);
    for j in 1..=lag {
        let w = 1.0 - j as f64 / (lag as f64 + 1.0);
        let g = gamma_j(&x, j);
        cov += (&g + g.transpose()) * w;
    }
    HacEstimate {
        cov,
        lag,
        kernel: "bartlett",
    }
}

fn gamma_j(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let (t, m) = (x.nrows(), x.ncols());
    let mut g = DMatrix::<f64>::zeros(m, m);
    for s in j..t {
        let xt = x.row(s);
        let xl = x.row(s - j);
        for a in 0..m {
            for b in 0..m {
                g[(a, b)] += xt[a] * xl[b];
            }
        }
    }
    g / t as f64
}

/// Long-run variance of a scalar series with automatic lag selection.
/// Returns (variance, lag).
pub fn long_run_variance(series: &[f64]) -> (f64, usize) {
    let data = DMatrix::from_column_slice(series.len(), 1, series);
    let lag = andrews_bandwidth(&data);
    let est = nw_hac(&data, lag.min(series.len().saturating_sub(1)));
    (est.cov[(0, 0)], est.lag)
}

/// OLS fit with HAC coefficient covariance.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Coefficients in regressor order.
    pub coefficients: DVector<f64>,
    /// HAC sandwich covariance of the coefficients.
    pub hac_cov: DMatrix<f64>,
    /// HAC t-statistics, coefficient / sqrt(diag).
    pub t_stats: DVector<f64>,
    /// Plain (unadjusted) R-squared.
    pub r_squared: f64,
    /// Degrees-of-freedom adjusted R-squared.
    pub adj_r_squared: f64,
    /// Residual series.
    pub residuals: DVector<f64>,
    /// Newey-West lag used for the score covariance.
    pub hac_lag: usize,
}

/// OLS of `y` on `x` (no implicit intercept; pass a column of ones).
///
/// Coefficient covariance is the HAC sandwich
/// `(X'X/T)^{-1} S (X'X/T)^{-1} / T` with `S` the Newey–West long-run
/// covariance of the score contributions `x_t e_t` at the Andrews lag.
pub fn ols_hac(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OlsFit> {
    let (t, k) = (x.nrows(), x.ncols());
    if y.len() != t {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: t,
        });
    }
    if t <= k {
        return Err(Error::RankDeficient(format!("T={t} <= k={k}")));
    }
    let xtx = x.transpose() * x;
    let chol = match nalgebra::Cholesky::new(xtx.clone()) {
        Some(c) => c,
        None => return Err(Error::RankDeficient("X'X not positive definite".into())),
    };
    // Condition check on X'X via symmetric eigenvalues.
    let eig = xtx.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if min_ev <= 0.0 || max_ev / min_ev > 1e14 {
        return Err(Error::RankDeficient(format!(
            "condition number {:.3e}",
            max_ev / min_ev.max(f64::MIN_POSITIVE)
        )));
    }
    let beta = chol.solve(&(x.transpose() * y));
    let fitted = x * &beta;
    let resid = y - &fitted;

    // Scores x_t * e_t, T x k.
    let mut scores = DMatrix::<f64>::zeros(t, k);
    for i in 0..t {
        for j in 0..k {
            scores[(i, j)] = x[(i, j)] * resid[i];
        }
    }
    let lag = andrews_bandwidth(&scores).min(t - 1);
    let s = nw_hac(&scores, lag).cov;
    let xtx_t_inv = chol.inverse() * t as f64; // (X'X/T)^{-1}
    let hac_cov = (&xtx_t_inv * s * &xtx_t_inv) / t as f64;

    let t_stats = DVector::from_iterator(
        k,
        (0..k).map(|j| {
            let se = hac_cov[(j, j)].max(0.0).sqrt();
            if se > 0.0 {
                beta[j] / se
            } else {
                f64::NAN
            }
        }),
    );

    let y_mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let rss: f64 = resid.iter().map(|v| v * v).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj = if tss > 0.0 {
        1.0 - (1.0 - r2) * (t as f64 - 1.0) / (t as f64 - k as f64)
    } else {
        1.0
    };
    Ok(OlsFit {
        coefficients: beta,
        hac_cov,
        t_stats,
        r_squared: r2,
        adj_r_squared: adj,
        residuals: resid,
        hac_lag: lag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(rho: f64, sigma: f64, t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut x = vec![0.0; t];
        for i in 1..t {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[i] = rho * x[i - 1] + sigma * z;
        }
        x
    }

    #[test]
    fn lag_zero_is_sample_covariance() {
        let x = ar1(0.3, 1.0, 500, 7);
        let data = DMatrix::from_column_slice(500, 1, &x);
        let est = nw_hac(&data, 0);
        let mean = x.iter().sum::<f64>() / 500.0;
        let sample: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0;
        assert_eq!(est.cov[(0, 0)], sample); // bit-for-bit
    }

    #[test]
    fn iid_series_small_lag() {
        // Plug-in formula at the |rho_hat| <= 0.05 tolerance band gives
        // lag <= 2 for T <= 1000; skip seeds whose sample rho falls outside.
        let mut checked = 0;
        for seed in 0..10u64 {
            let x = ar1(0.0, 1.0, 1000, seed);
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for i in 1..x.len() {
                sxx += x[i - 1] * x[i - 1];
                sxy += x[i - 1] * x[i];
            }
            if (sxy / sxx).abs() > 0.05 {
                continue;
            }
            checked += 1;
            let data = DMatrix::from_column_slice(1000, 1, &x);
            assert!(andrews_bandwidth(&data) <= 2, "seed {seed}");
        }
        assert!(checked >= 3, "too few seeds inside the tolerance band");
    }

    #[test]
    fn persistent_series_larger_lag() {
        let iid = ar1(0.0, 1.0, 1000, 3);
        let pers = ar1(0.9, 1.0, 1000, 3);
        let l0 = andrews_bandwidth(&DMatrix::from_column_slice(1000, 1, &iid));
        let l9 = andrews_bandwidth(&DMatrix::from_column_slice(1000, 1, &pers));
        assert!(l9 > l0, "lag {l9} should exceed iid lag {l0}");
    }

    #[test]
    fn constant_series_lag_zero() {
        let data = DMatrix::from_element(200, 1, 3.5);
        assert_eq!(andrews_bandwidth(&data), 0);
    }

    #[test]
    fn iid_long_run_variance_near_one() {
        let x = ar1(0.0, 1.0, 100_000, 11);
        let (lrv, _) = long_run_variance(&x);
        assert!((lrv - 1.0).abs() < 0.05, "lrv {lrv}");
    }

    #[test]
    fn ar1_long_run_variance_closed_form() {
        // Spectral density at zero of AR(1): sigma^2 / (1-rho)^2 = 4.
        let x = ar1(0.5, 1.0, 100_000, 13);
        let data = DMatrix::from_column_slice(x.len(), 1, &x);
        let est = nw_hac(&data, 50);
        assert!(
            (est.cov[(0, 0)] - 4.0).abs() / 4.0 < 0.10,
            "lrv {}",
            est.cov[(0, 0)]
        );
    }

    #[test]
    fn hac_psd_on_arbitrary_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(300, 4, |_, _| StandardNormal.sample(&mut rng));
        for lag in [0, 3, 10, 40] {
            let est = nw_hac(&data, lag);
            let sym = (&est.cov + est.cov.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            assert!(
                eig.eigenvalues.min() >= -1e-10,
                "min eigenvalue {} at lag {lag}",
                eig.eigenvalues.min()
            );
        }
    }

    #[test]
    fn ols_exact_fit() {
        let t = 60;
        let x = DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let beta = DVector::from_column_slice(&[2.0, -0.5]);
        let y = &x * &beta;
        let fit = ols_hac(&y, &x).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients[1], -0.5, epsilon = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_intercept_only_is_mean() {
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0, 2.0, 1.0, 3.0]);
        let x = DMatrix::from_element(10, 1, 1.0);
        let fit = ols_hac(&y, &x).unwrap();
        assert_relative_eq!(fit.coefficients[0], y.mean(), epsilon = 1e-12);
    }

    #[test]
    fn ols_rank_deficient_detected() {
        let t = 40;
        let x = DMatrix::from_fn(t, 2, |i, _| i as f64); // duplicated column
        let y = DVector::from_fn(t, |i, _| i as f64);
        assert!(matches!(ols_hac(&y, &x), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn hac_se_exceeds_ols_se_under_autocorrelation() {
        // y = 1 + x + u with AR(0.8) errors: HAC SE should exceed the naive
        // iid OLS SE on the slope.
        let t = 2000;
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u = ar1(0.8, 1.0, t, 22);
        let y = DVector::from_iterator(t, (0..t).map(|i| 1.0 + xs[i] + u[i]));
        let x = DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let fit = ols_hac(&y, &x).unwrap();
        // Naive OLS variance: s^2 (X'X)^{-1}.
        let s2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / (t as f64 - 2.0);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let ols_se = (s2 * xtx_inv[(0, 0)]).sqrt(); // intercept picks up AR error level
        let hac_se = fit.hac_cov[(0, 0)].sqrt();
        assert!(
            hac_se > ols_se,
            "HAC SE {hac_se} should exceed OLS SE {ols_se}"
        );
    }

    #[test]
    fn ols_invariant_to_column_scaling() {
        let t = 120;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = DVector::from_iterator(t, xs.iter().map(|v| 3.0 * v + 1.0));
        let x1 = DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let x2 = DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { 10.0 * xs[i] });
        let f1 = ols_hac(&y, &x1).unwrap();
        let f2 = ols_hac(&y, &x2).unwrap();
        assert_relative_eq!(f1.coefficients[1], 10.0 * f2.coefficients[1], epsilon = 1e-9);
    }
}
