//! Time-varying-parameter VAR estimated by Quasi-Bayesian Local-Likelihood.
//!
//! For each target date the sample likelihood is reweighted with a Normal
//! kernel centered on that date; combined with a conjugate Minnesota
//! Normal–Wishart prior this gives an analytic per-date quasi posterior, so
//! no MCMC is needed and dates can be estimated in parallel.
//!
//! Conventions:
//! - data `Y` is `T x N` (rows = days); the regression uses
//!   `x_t = (1, y_{t-1}, ..., y_{t-p})`, `m = 1 + N p` regressors;
//! - kernel weights `w_kt = (1/sqrt(2 pi)) exp(-((k-t)/H)^2 / 2)` are
//!   normalized so they sum to the (effective) sample length, which keeps
//!   the Wishart degrees of freedom on the scale of a full sample;
//! - the Wishart draw is the innovation *precision*; its inverse is the
//!   covariance fed to the variance decompositions. The point covariance is
//!   the inverse-Wishart mean `Gamma / (alpha - N - 1)`.
//! - `shrinkage = 0` is accepted as the exact dogmatic limit: the posterior
//!   coefficient mean collapses to the prior mean.

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::CivPanel;

/// Posterior summarization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosteriorMode {
    /// Posterior means only (fast, the default).
    Point,
    /// Propagate full posterior draws.
    Draws,
}

/// Estimation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QbllConfig {
    /// VAR lag order p.
    pub lags: usize,
    /// Minnesota tightness (0 = dogmatic prior).
    pub shrinkage: f64,
    /// Prior mean on each variable's own first lag.
    pub first_lag_center: f64,
    /// Posterior draws per date in [`PosteriorMode::Draws`].
    pub n_draws: usize,
    /// Kernel bandwidth in observations; `None` means `ceil(sqrt(T))`.
    pub bandwidth: Option<usize>,
    /// RNG seed for posterior sampling.
    pub seed: u64,
    /// Estimate on log CIV instead of levels.
    pub log_civ: bool,
    pub mode: PosteriorMode,
}

impl Default for QbllConfig {
    fn default() -> Self {
        QbllConfig {
            lags: 2,
            shrinkage: 0.05,
            first_lag_center: 0.1,
            n_draws: 500,
            bandwidth: None,
            seed: 0,
            log_civ: false,
            mode: PosteriorMode::Point,
        }
    }
}

impl QbllConfig {
    pub fn bandwidth_for(&self, t_len: usize) -> usize {
        self.bandwidth
            .unwrap_or_else(|| (t_len as f64).sqrt().ceil() as usize)
            .max(1)
    }
}

/// Normal kernel weights for one target index.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    /// Raw `w_kt` values, `t = 1..=T`.
    pub raw: Vec<f64>,
    /// Normalized weights summing to `T`.
    pub normalized: Vec<f64>,
    /// Sum of normalized weights (= T by construction).
    pub effective_sample: f64,
}

/// Kernel weights centered on index `k` (1-based) over a sample of length `T`.
pub fn kernel_weights(k: usize, t_len: usize, h_bw: f64) -> KernelWeights {
    assert!(k >= 1 && k <= t_len, "target index {k} outside 1..={t_len}");
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let raw: Vec<f64> = (1..=t_len)
        .map(|t| {
            let z = (k as f64 - t as f64) / h_bw;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    let scale = t_len as f64 / sum;
    let normalized: Vec<f64> = raw.iter().map(|w| w * scale).collect();
    let effective_sample = normalized.iter().sum();
    KernelWeights {
        raw,
        normalized,
        effective_sample,
    }
}

/// Minnesota Normal–Wishart prior.
///
/// Coefficient prior mean is zero except each variable's own first lag;
/// the shared regressor precision is diagonal with own-lag entries
/// `l^2 s_j^2 / shrinkage^2` (lag `l`, variable `j`; relative residual
/// variances scale cross terms through the Kronecker structure) and a
/// diffuse intercept. Wishart parameters follow the usual Normal–Wishart
/// defaults: `alpha_0 = N + 2`, scale matrix the diagonal of per-equation
/// AR(p) residual variances.
#[derive(Debug, Clone)]
pub struct NwPrior {
    /// Prior coefficient mean, `m x N` (column i = equation i).
    pub phi0: DMatrix<f64>,
    /// Prior regressor precision, `m x m` diagonal (empty marker when dogmatic).
    pub xi0: DMatrix<f64>,
    /// Wishart scale parameter (degrees of freedom).
    pub alpha0: f64,
    /// Wishart matrix parameter, `N x N`.
    pub gamma0: DMatrix<f64>,
    /// True when `shrinkage == 0`: infinite coefficient precision.
    pub dogmatic: bool,
}

/// Build the Minnesota prior. `scales` holds per-variable AR(p) residual
/// variances used for relative scaling (length N).
pub fn minnesota_prior(
    n_vars: usize,
    lags: usize,
    shrinkage: f64,
    first_lag_center: f64,
    scales: &[f64],
) -> NwPrior {
    assert!(n_vars >= 1 && lags >= 1);
    assert_eq!(scales.len(), n_vars);
    let m = 1 + n_vars * lags;
    let mut phi0 = DMatrix::<f64>::zeros(m, n_vars);
    for i in 0..n_vars {
        phi0[(1 + i, i)] = first_lag_center; // own first lag
    }
    let dogmatic = shrinkage == 0.0;
    let mut xi0 = DMatrix::<f64>::zeros(m, m);
    if !dogmatic {
        // Diffuse intercept: prior variance (100 * shrinkage)^2 relative scale.
        xi0[(0, 0)] = 1.0 / (100.0 * shrinkage).powi(2);
        for l in 1..=lags {
            for (j, scale) in scales.iter().enumerate() {
                let idx = 1 + (l - 1) * n_vars + j;
                let s2 = scale.max(1e-12);
                xi0[(idx, idx)] = (l * l) as f64 * s2 / (shrinkage * shrinkage);
            }
        }
    }
    let alpha0 = n_vars as f64 + 2.0;
    let gamma0 = DMatrix::from_fn(n_vars, n_vars, |i, j| {
        if i == j {
            scales[i].max(1e-12)
        } else {
            0.0
        }
    });
    NwPrior {
        phi0,
        xi0,
        alpha0,
        gamma0,
        dogmatic,
    }
}

/// Per-date quasi posterior parameters.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    /// Panel row index this state belongs to.
    pub date_index: usize,
    /// Posterior coefficient mean, `m x N`.
    pub phi_mean: DMatrix<f64>,
    /// Posterior regressor precision `Xi_0 + A' D A` (the data part alone
    /// under a dogmatic prior, whose precision is infinite).
    pub xi: DMatrix<f64>,
    /// Posterior Wishart degrees of freedom `alpha_0 + sum(rho)`.
    pub alpha: f64,
    /// Posterior Wishart matrix.
    pub gamma: DMatrix<f64>,
    pub dogmatic: bool,
    pub n_vars: usize,
    pub lags: usize,
}

impl PosteriorState {
    /// Posterior-mean innovation covariance: inverse-Wishart mean
    /// `Gamma / (alpha - N - 1)`.
    pub fn sigma_point(&self) -> DMatrix<f64> {
        let denom = self.alpha - self.n_vars as f64 - 1.0;
        &self.gamma / denom
    }

    /// Point-estimate VAR parameters (posterior means).
    pub fn point_params(&self) -> VarParams {
        VarParams::from_stacked(&self.phi_mean, self.sigma_point(), self.n_vars, self.lags)
    }
}

/// One set of VAR parameters: intercept, lag coefficient matrices, and the
/// innovation covariance.
#[derive(Debug, Clone)]
pub struct VarParams {
    pub intercept: DVector<f64>,
    /// `coefficients[l]` is the `N x N` matrix on lag `l+1`; entry `(i, j)`
    /// is equation i's loading on variable j.
    pub coefficients: Vec<DMatrix<f64>>,
    /// Innovation covariance (not precision).
    pub sigma: DMatrix<f64>,
}

impl VarParams {
    fn from_stacked(phi: &DMatrix<f64>, sigma: DMatrix<f64>, n_vars: usize, lags: usize) -> Self {
        let intercept = DVector::from_fn(n_vars, |i, _| phi[(0, i)]);
        let coefficients = (0..lags)
            .map(|l| DMatrix::from_fn(n_vars, n_vars, |i, j| phi[(1 + l * n_vars + j, i)]))
            .collect();
        VarParams {
            intercept,
            coefficients,
            sigma,
        }
    }

    /// Spectral radius of the companion matrix (stability < 1).
    pub fn spectral_radius(&self) -> f64 {
        let n = self.intercept.len();
        let p = self.coefficients.len();
        let dim = n * p;
        let mut comp = DMatrix::<f64>::zeros(dim, dim);
        for (l, phi) in self.coefficients.iter().enumerate() {
            comp.view_mut((0, l * n), (n, n)).copy_from(phi);
        }
        for i in n..dim {
            comp[(i, i - n)] = 1.0;
        }
        comp.complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

fn condition_number_spd(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Quasi posterior for one target date.
///
/// `y` is the full `T x N` data matrix; the regression sample is rows
/// `p..T-1` and `weights` must hold one normalized weight per regression row
/// (see [`kernel_weights`]).
pub fn qbll_posterior(
    y: &DMatrix<f64>,
    date_index: usize,
    prior: &NwPrior,
    weights: &[f64],
    lags: usize,
) -> Result<PosteriorState> {
    let (t_len, n) = (y.nrows(), y.ncols());
    assert!(t_len > lags, "need at least p+1 rows");
    assert_eq!(weights.len(), t_len - lags, "one weight per regression row");
    let values: Vec<f64> = (0..t_len)
        .flat_map(|i| (0..n).map(move |j| y[(i, j)]))
        .collect();
    let active: Vec<usize> = (0..n).collect();
    let rows: Vec<usize> = (lags..t_len).collect();
    qbll_posterior_rows(&values, n, &active, &rows, date_index, prior, weights, lags)
}

/// Draw a Wishart(`df`, `scale`) matrix via the Bartlett decomposition.
fn wishart_draw<R: Rng>(rng: &mut R, scale_chol: &DMatrix<f64>, df: f64, dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new(df - i as f64).expect("df > dim - 1");
        a[(i, i)] = chi.sample(rng).max(1e-300).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = scale_chol * a;
    &la * la.transpose()
}

/// Sample VAR parameter draws from the posterior. Deterministic per seed.
pub fn sample_posterior(state: &PosteriorState, n_draws: usize, seed: u64) -> Vec<VarParams> {
    let n = state.n_vars;
    let m = state.phi_mean.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gamma_inv_chol = {
        let gamma_chol = Cholesky::new(state.gamma.clone()).expect("posterior Gamma SPD");
        let gamma_inv = gamma_chol.inverse();
        Cholesky::new((&gamma_inv + gamma_inv.transpose()) * 0.5)
            .expect("Gamma inverse SPD")
            .l()
    };
    let xi_inv_chol = if state.dogmatic {
        None
    } else {
        let xi_chol = Cholesky::new(state.xi.clone()).expect("posterior Xi SPD");
        let xi_inv = xi_chol.inverse();
        Some(
            Cholesky::new((&xi_inv + xi_inv.transpose()) * 0.5)
                .expect("Xi inverse SPD")
                .l(),
        )
    };

    (0..n_draws)
        .map(|_| {
            let precision = wishart_draw(&mut rng, &gamma_inv_chol, state.alpha, n);
            let sigma_chol = Cholesky::new(precision).expect("Wishart draw SPD");
            let sigma = sigma_chol.inverse();
            let sigma = (&sigma + sigma.transpose()) * 0.5;
            let phi = match &xi_inv_chol {
                None => state.phi_mean.clone(),
                Some(l_row) => {
                    let z = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let l_col = Cholesky::new(sigma.clone()).expect("sigma SPD").l();
                    &state.phi_mean + l_row * z * l_col.transpose()
                }
            };
            VarParams::from_stacked(&phi, sigma, n, state.lags)
        })
        .collect()
}

/// One estimated date on the path.
#[derive(Debug, Clone)]
pub struct PathEntry {
    pub date: NaiveDate,
    pub date_index: usize,
    /// Currencies active in this date's system, panel order.
    pub currencies: Vec<String>,
    pub state: PosteriorState,
    /// Posterior-mean parameters.
    pub point: VarParams,
    /// Posterior draws when requested.
    pub draws: Option<Vec<VarParams>>,
    /// Spectral radius of the posterior-mean companion matrix (reported,
    /// not enforced).
    pub spectral_radius: f64,
}

/// The estimated path over requested dates.
#[derive(Debug, Clone)]
pub struct TvpVarPath {
    pub entries: Vec<PathEntry>,
    pub config: QbllConfig,
}

/// Per-variable AR(p) residual variance, used as Minnesota scale.
fn ar_residual_variance(series: &[f64], lags: usize) -> f64 {
    let t = series.len();
    if t <= lags + 2 {
        let mean = series.iter().sum::<f64>() / t as f64;
        return series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
    }
    let rows = t - lags;
    let k = lags + 1;
    let x = DMatrix::from_fn(rows, k, |i, j| {
        if j == 0 {
            1.0
        } else {
            series[i + lags - j]
        }
    });
    let yv = DVector::from_fn(rows, |i, _| series[i + lags]);
    let xtx = x.transpose() * &x;
    match Cholesky::new(xtx) {
        Some(chol) => {
            let beta = chol.solve(&(x.transpose() * &yv));
            let resid = &yv - &x * beta;
            let dof = (rows as f64 - k as f64).max(1.0);
            (resid.norm_squared() / dof).max(1e-12)
        }
        None => {
            let mean = yv.mean();
            (yv.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).max(1e-12)
        }
    }
}

/// Estimate the TVP-VAR at the requested panel dates.
///
/// Currencies enter a date's system only when they are complete over the
/// kernel-effective window `[k - 3H, k + 3H]`; the regression then uses every
/// row where the active set is complete with its lags.
pub fn estimate_path(
    panel: &CivPanel,
    dates: &[NaiveDate],
    config: &QbllConfig,
) -> Result<TvpVarPath> {
    let t_len = panel.n_dates();
    let h = config.bandwidth_for(t_len);
    let mut targets = Vec::with_capacity(dates.len());
    for d in dates {
        let idx = panel
            .date_index(*d)
            .ok_or(Error::DateOutOfRange {
                index: 0,
                lo: 0,
                hi: t_len - 1,
            })?;
        targets.push((idx, *d));
    }

    let values: Vec<f64> = if config.log_civ {
        panel.values.iter().map(|v| v.ln()).collect()
    } else {
        panel.values.clone()
    };
    let n_all = panel.n_currencies();
    let get = |di: usize, ci: usize| values[di * n_all + ci];

    let entries: Vec<Result<PathEntry>> = targets
        .par_iter()
        .map(|&(k0, date)| {
            let lo = k0.saturating_sub(3 * h);
            let hi = (k0 + 3 * h).min(t_len - 1);
            let active: Vec<usize> = (0..n_all)
                .filter(|&ci| (lo..=hi).all(|di| !get(di, ci).is_nan()))
                .collect();
            if active.is_empty() {
                return Err(Error::SingularDesign {
                    date_index: k0,
                    condition: f64::INFINITY,
                });
            }
            let n = active.len();
            let p = config.lags;
            // Regression rows: all t >= p whose lags are complete for the
            // active set.
            let rows: Vec<usize> = (p..t_len)
                .filter(|&di| {
                    active
                        .iter()
                        .all(|&ci| (0..=p).all(|l| !get(di - l, ci).is_nan()))
                })
                .collect();
            let m = 1 + n * p;
            if rows.len() < m + 2 {
                return Err(Error::SingularDesign {
                    date_index: k0,
                    condition: f64::INFINITY,
                });
            }
            let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            let raw: Vec<f64> = rows
                .iter()
                .map(|&di| {
                    let z = (di as f64 - k0 as f64) / h as f64;
                    norm * (-0.5 * z * z).exp()
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw
                .iter()
                .map(|w| w * rows.len() as f64 / sum)
                .collect();

            let scales: Vec<f64> = active
                .iter()
                .map(|&ci| {
                    let series: Vec<f64> = rows.iter().map(|&di| get(di, ci)).collect();
                    ar_residual_variance(&series, p)
                })
                .collect();
            let prior = minnesota_prior(n, p, config.shrinkage, config.first_lag_center, &scales);

            // Build a dense (rows+lags view) regression via explicit moments.
            let state = qbll_posterior_rows(
                &values,
                n_all,
                &active,
                &rows,
                k0,
                &prior,
                &weights,
                p,
            )?;
            let point = state.point_params();
            let spectral_radius = point.spectral_radius();
            let draws = match config.mode {
                PosteriorMode::Point => None,
                PosteriorMode::Draws => Some(sample_posterior(
                    &state,
                    config.n_draws,
                    config.seed ^ (k0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                )),
            };
            Ok(PathEntry {
                date,
                date_index: k0,
                currencies: active
                    .iter()
                    .map(|&ci| panel.currencies[ci].clone())
                    .collect(),
                state,
                point,
                draws,
                spectral_radius,
            })
        })
        .collect();

    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(e?);
    }
    Ok(TvpVarPath {
        entries: out,
        config: config.clone(),
    })
}

/// Moment-form posterior over an explicit row subset of a flat panel.
#[allow(clippy::too_many_arguments)]
fn qbll_posterior_rows(
    values: &[f64],
    n_all: usize,
    active: &[usize],
    rows: &[usize],
    date_index: usize,
    prior: &NwPrior,
    weights: &[f64],
    lags: usize,
) -> Result<PosteriorState> {
    let n = active.len();
    let m = 1 + n * lags;
    let get = |di: usize, ci: usize| values[di * n_all + ci];

    let mut at_da = DMatrix::<f64>::zeros(m, m);
    let mut at_dy = DMatrix::<f64>::zeros(m, n);
    let mut yt_dy = DMatrix::<f64>::zeros(n, n);
    let mut x = DVector::<f64>::zeros(m);
    for (wi, &row) in rows.iter().enumerate() {
        let w = weights[wi];
        x[0] = 1.0;
        for l in 1..=lags {
            for (jj, &ci) in active.iter().enumerate() {
                x[1 + (l - 1) * n + jj] = get(row - l, ci);
            }
        }
        for a in 0..m {
            let wx = w * x[a];
            for b in 0..m {
                at_da[(a, b)] += wx * x[b];
            }
            for (b, &cb) in active.iter().enumerate() {
                at_dy[(a, b)] += wx * get(row, cb);
            }
        }
        for (a, &ca) in active.iter().enumerate() {
            let wy = w * get(row, ca);
            for (b, &cb) in active.iter().enumerate() {
                yt_dy[(a, b)] += wy * get(row, cb);
            }
        }
    }

    let cond = condition_number_spd(&at_da);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::SingularDesign {
            date_index,
            condition: cond,
        });
    }
    let rho_sum: f64 = weights.iter().sum();
    let alpha = prior.alpha0 + rho_sum;

    if prior.dogmatic {
        let phi_mean = prior.phi0.clone();
        let mut gamma = prior.gamma0.clone();
        for (wi, &row) in rows.iter().enumerate() {
            let w = weights[wi];
            x[0] = 1.0;
            for l in 1..=lags {
                for (jj, &ci) in active.iter().enumerate() {
                    x[1 + (l - 1) * n + jj] = get(row - l, ci);
                }
            }
            let fitted = phi_mean.transpose() * &x;
            let resid = DVector::from_fn(n, |i, _| get(row, active[i]) - fitted[i]);
            gamma += w * &resid * resid.transpose();
        }
        return Ok(PosteriorState {
            date_index,
            phi_mean,
            xi: at_da,
            alpha,
            gamma,
            dogmatic: true,
            n_vars: n,
            lags,
        });
    }

    let xi = &prior.xi0 + &at_da;
    let chol = Cholesky::new(xi.clone()).ok_or(Error::SingularDesign {
        date_index,
        condition: cond,
    })?;
    let rhs = &at_dy + &prior.xi0 * &prior.phi0;
    let phi_mean = chol.solve(&rhs);
    let mut gamma = &prior.gamma0
        + yt_dy
        + prior.phi0.transpose() * &prior.xi0 * &prior.phi0
        - phi_mean.transpose() * &xi * &phi_mean;
    gamma = (&gamma + gamma.transpose()) * 0.5;
    Ok(PosteriorState {
        date_index,
        phi_mean,
        xi,
        alpha,
        gamma,
        dogmatic: false,
        n_vars: n,
        lags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simulate_var(
        intercept: &DVector<f64>,
        phis: &[DMatrix<f64>],
        sigma_chol: &DMatrix<f64>,
        t_len: usize,
        seed: u64,
    ) -> DMatrix<f64> {
        let n = intercept.len();
        let p = phis.len();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut y = DMatrix::<f64>::zeros(t_len + 50, n);
        for t in p..(t_len + 50) {
            let mut row = intercept.clone();
            for (l, phi) in phis.iter().enumerate() {
                let prev = y.row(t - l - 1).transpose();
                row += phi * prev;
            }
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            row += sigma_chol * z;
            y.row_mut(t).copy_from(&row.transpose());
        }
        y.rows(50, t_len).into_owned()
    }

    fn panel_from_matrix(y: &DMatrix<f64>) -> CivPanel {
        let t = y.nrows();
        let n = y.ncols();
        let dates: Vec<NaiveDate> = (0..t)
            .map(|i| NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Days::new(i as u64))
            .collect();
        let ccys: Vec<String> = (0..n).map(|i| format!("C{i:02}")).collect();
        let mut panel = CivPanel::new(dates, ccys);
        for di in 0..t {
            for ci in 0..n {
                panel.set(di, ci, y[(di, ci)]);
            }
        }
        panel
    }

    #[test]
    fn kernel_weight_values() {
        let kw = kernel_weights(50, 100, 10.0);
        assert_relative_eq!(kw.raw[49], 0.3989422804014327, epsilon = 1e-12);
        assert_relative_eq!(
            kw.raw[59], // |t - k| = 10 = H
            0.3989422804014327 * (-0.5f64).exp(),
            epsilon = 1e-12
        );
        assert!((kw.raw[59] - 0.241971).abs() < 1e-6);
    }

    #[test]
    fn kernel_weights_normalize_to_t() {
        for (k, t, h) in [(1, 50, 3.0), (25, 50, 7.0), (50, 50, 25.0), (10, 400, 20.0)] {
            let kw = kernel_weights(k, t, h);
            assert_relative_eq!(kw.effective_sample, t as f64, epsilon = 1e-9);
            assert!(kw.normalized.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn kernel_weights_symmetric() {
        let kw = kernel_weights(50, 100, 8.0);
        for j in 1..40 {
            assert_relative_eq!(kw.raw[49 + j], kw.raw[49 - j], epsilon = 1e-15);
        }
    }

    #[test]
    fn minnesota_prior_mean_n1_p1() {
        let prior = minnesota_prior(1, 1, 0.05, 0.1, &[1.0]);
        assert_eq!(prior.phi0.nrows(), 2);
        assert_eq!(prior.phi0[(0, 0)], 0.0); // intercept
        assert_eq!(prior.phi0[(1, 0)], 0.1); // first own lag
        assert_eq!(prior.alpha0, 3.0);
    }

    #[test]
    fn minnesota_lag2_precision_is_4x_lag1() {
        let prior = minnesota_prior(2, 2, 0.05, 0.1, &[1.0, 1.0]);
        // own lag 1 of variable 0 at index 1; own lag 2 of variable 0 at 1+N.
        assert_relative_eq!(prior.xi0[(3, 3)] / prior.xi0[(1, 1)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_weights_diffuse_prior_matches_ols() {
        // AR(1) y_t = 0.3 + 0.6 y_{t-1} + e; flat weights and a nearly flat
        // prior must reproduce the OLS coefficients to 1e-8.
        let phis = vec![DMatrix::from_element(1, 1, 0.6)];
        let y = simulate_var(
            &DVector::from_element(1, 0.3),
            &phis,
            &DMatrix::from_element(1, 1, 0.5),
            400,
            42,
        );
        let t_eff = y.nrows() - 1;
        let weights = vec![1.0; t_eff];
        let prior = minnesota_prior(1, 1, 1e8, 0.1, &[1.0]);
        let state = qbll_posterior(&y, 200, &prior, &weights, 1).unwrap();

        // OLS oracle.
        let x = DMatrix::from_fn(t_eff, 2, |i, j| if j == 0 { 1.0 } else { y[(i, 0)] });
        let yv = DVector::from_fn(t_eff, |i, _| y[(i + 1, 0)]);
        let beta = (x.transpose() * &x)
            .try_inverse()
            .unwrap()
            * (x.transpose() * &yv);
        assert!((state.phi_mean[(0, 0)] - beta[0]).abs() < 1e-8);
        assert!((state.phi_mean[(1, 0)] - beta[1]).abs() < 1e-8);
    }

    #[test]
    fn dogmatic_prior_returns_prior_mean_exactly() {
        let phis = vec![DMatrix::from_element(1, 1, 0.6)];
        let y = simulate_var(
            &DVector::from_element(1, 0.3),
            &phis,
            &DMatrix::from_element(1, 1, 0.5),
            300,
            7,
        );
        let weights = kernel_weights(150, 299, 17.0).normalized;
        let prior = minnesota_prior(1, 1, 0.0, 0.1, &[1.0]);
        let state = qbll_posterior(&y, 150, &prior, &weights, 1).unwrap();
        assert_eq!(state.phi_mean[(0, 0)], 0.0);
        assert_eq!(state.phi_mean[(1, 0)], 0.1);
    }

    #[test]
    fn alpha_update_is_prior_plus_t() {
        let phis = vec![DMatrix::from_element(2, 2, 0.2)];
        let y = simulate_var(
            &DVector::from_element(2, 0.1),
            &phis,
            &DMatrix::identity(2, 2),
            200,
            3,
        );
        let weights = kernel_weights(100, 199, 14.0).normalized;
        let prior = minnesota_prior(2, 1, 0.05, 0.1, &[1.0, 1.0]);
        let state = qbll_posterior(&y, 100, &prior, &weights, 1).unwrap();
        assert_relative_eq!(state.alpha, prior.alpha0 + 199.0, epsilon = 1e-8);
    }

    #[test]
    fn posterior_precision_dominates_prior() {
        let phis = vec![DMatrix::from_element(2, 2, 0.2)];
        let y = simulate_var(
            &DVector::from_element(2, 0.1),
            &phis,
            &DMatrix::identity(2, 2),
            300,
            5,
        );
        let weights = kernel_weights(150, 299, 17.0).normalized;
        let prior = minnesota_prior(2, 1, 0.05, 0.1, &[1.0, 1.0]);
        let state = qbll_posterior(&y, 150, &prior, &weights, 1).unwrap();
        let diff = &state.xi - &prior.xi0;
        let eig = diff.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8);
    }

    #[test]
    fn constant_panel_is_singular() {
        let y = DMatrix::from_element(100, 2, 1.0);
        let weights = vec![1.0; 99];
        let prior = minnesota_prior(2, 1, 0.05, 0.1, &[1.0, 1.0]);
        assert!(matches!(
            qbll_posterior(&y, 50, &prior, &weights, 1),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn infinite_bandwidth_gives_constant_path() {
        let phis = vec![DMatrix::from_element(1, 1, 0.5)];
        let y = simulate_var(
            &DVector::from_element(1, 0.2),
            &phis,
            &DMatrix::from_element(1, 1, 0.3),
            250,
            11,
        );
        let panel = panel_from_matrix(&y);
        let config = QbllConfig {
            lags: 1,
            bandwidth: Some(10_000_000),
            ..Default::default()
        };
        let dates: Vec<NaiveDate> = vec![panel.dates[30], panel.dates[120], panel.dates[220]];
        let path = estimate_path(&panel, &dates, &config).unwrap();
        let base = &path.entries[0].state.phi_mean;
        for e in &path.entries[1..] {
            let diff = (&e.state.phi_mean - base).abs().max();
            assert!(diff < 1e-8, "path not constant: {diff}");
        }
    }

    #[test]
    fn sample_posterior_deterministic_and_spd() {
        let phis = vec![DMatrix::from_element(2, 2, 0.2)];
        let y = simulate_var(
            &DVector::from_element(2, 0.1),
            &phis,
            &DMatrix::identity(2, 2),
            300,
            17,
        );
        let weights = kernel_weights(150, 299, 17.0).normalized;
        let prior = minnesota_prior(2, 1, 0.05, 0.1, &[1.0, 1.0]);
        let state = qbll_posterior(&y, 150, &prior, &weights, 1).unwrap();
        let a = sample_posterior(&state, 3, 99);
        let b = sample_posterior(&state, 3, 99);
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.sigma, db.sigma);
            assert_eq!(da.intercept, db.intercept);
        }
        for d in &a {
            assert!(Cholesky::new(d.sigma.clone()).is_some(), "sigma draw SPD");
        }
    }

    #[test]
    fn posterior_draw_mean_matches_phi_mean() {
        let phis = vec![DMatrix::from_element(1, 1, 0.5)];
        let y = simulate_var(
            &DVector::from_element(1, 0.2),
            &phis,
            &DMatrix::from_element(1, 1, 0.3),
            300,
            23,
        );
        let weights = kernel_weights(150, 299, 17.0).normalized;
        let prior = minnesota_prior(1, 1, 0.05, 0.1, &[0.09]);
        let state = qbll_posterior(&y, 150, &prior, &weights, 1).unwrap();
        let draws = sample_posterior(&state, 100_000, 1234);
        // Mean of own-lag coefficient draws vs posterior mean, 3 MC SEs.
        let vals: Vec<f64> = draws.iter().map(|d| d.coefficients[0][(0, 0)]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let se = (var / vals.len() as f64).sqrt();
        let target = state.phi_mean[(1, 0)];
        assert!(
            (mean - target).abs() < 3.0 * se + 1e-12,
            "mean {mean} vs {target} (se {se})"
        );
    }

    #[test]
    fn recovers_constant_var2_parameters() {
        // N=3 stable VAR(2), T=600: posterior means within 0.1 of truth at
        // mid-sample. The truth keeps coefficients in the region where the
        // default Minnesota shrinkage bias stays well inside the budget.
        let phi1 = DMatrix::from_row_slice(
            3,
            3,
            &[0.20, 0.15, 0.0, 0.10, 0.20, 0.15, 0.0, 0.10, 0.20],
        );
        let phi2 = DMatrix::from_row_slice(
            3,
            3,
            &[0.05, 0.0, 0.05, 0.0, 0.05, 0.0, 0.05, 0.0, 0.05],
        );
        let truth = vec![phi1.clone(), phi2.clone()];
        let y = simulate_var(
            &DVector::from_element(3, 0.2),
            &truth,
            &(DMatrix::identity(3, 3) * 0.3),
            600,
            31,
        );
        let panel = panel_from_matrix(&y);
        // Constant parameters: a wide kernel is the right call and keeps the
        // effective sample large enough for the 0.1 recovery budget.
        let config = QbllConfig {
            lags: 2,
            bandwidth: Some(150),
            ..Default::default()
        };
        let path = estimate_path(&panel, &[panel.dates[300]], &config).unwrap();
        let point = &path.entries[0].point;
        for (est, tru) in point.coefficients.iter().zip(&truth) {
            let diff = (est - tru).abs().max();
            assert!(diff < 0.1, "coefficient error {diff}");
        }
        assert!(path.entries[0].spectral_radius < 1.0);
    }

    #[test]
    fn breaking_ar1_coefficient_path_crosses_midpoint() {
        // AR(1) with rho 0.2 -> 0.8 at mid-sample: the posterior mean path
        // must cross 0.5 within +-3 H of the break.
        let t_len = 600;
        let brk = 300;
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut series = vec![0.0f64; t_len];
        for t in 1..t_len {
            let rho = if t < brk { 0.2 } else { 0.8 };
            let z: f64 = rng.sample(StandardNormal);
            series[t] = rho * series[t - 1] + 0.3 * z;
        }
        let y = DMatrix::from_fn(t_len, 1, |i, _| series[i]);
        let panel = panel_from_matrix(&y);
        let config = QbllConfig {
            lags: 1,
            ..Default::default()
        };
        let h = config.bandwidth_for(t_len); // 25
        let dates: Vec<NaiveDate> = panel.dates.iter().copied().step_by(5).collect();
        let path = estimate_path(&panel, &dates, &config).unwrap();
        let coef: Vec<(usize, f64)> = path
            .entries
            .iter()
            .map(|e| (e.date_index, e.state.phi_mean[(1, 0)]))
            .collect();
        // Find a crossing of 0.5.
        let crossing = coef
            .windows(2)
            .find(|w| (w[0].1 - 0.5) * (w[1].1 - 0.5) <= 0.0)
            .map(|w| w[1].0);
        let cross = crossing.expect("coefficient path should cross 0.5");
        assert!(
            cross.abs_diff(brk) <= 3 * h,
            "crossing at {cross}, break at {brk}, H {h}"
        );
    }

    #[test]
    fn requesting_unknown_date_errors() {
        let y = simulate_var(
            &DVector::from_element(1, 0.2),
            &[DMatrix::from_element(1, 1, 0.5)],
            &DMatrix::from_element(1, 1, 0.3),
            100,
            3,
        );
        let panel = panel_from_matrix(&y);
        let bad = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap();
        assert!(matches!(
            estimate_path(&panel, &[bad], &QbllConfig::default()),
            Err(Error::DateOutOfRange { .. })
        ));
    }
}
