//! Horizon-band connectedness networks from estimated VAR parameters.
//!
//! The pipeline per date: truncated VMA coefficients from the VAR recursion,
//! impulse transfer functions on the Fourier grid `w_j = 2 pi j / H`, and the
//! generalized forecast-error variance decomposition accumulated per
//! frequency band,
//!
//! ```text
//! theta(d)[j,k] = sigma_kk^{-1} sum_{w in d} |[Psi(w) S]_{j,k}|^2
//!                 / sum_{w} [Psi(w) S Psi*(w)]_{j,j}
//! ```
//!
//! Interior grid frequencies carry weight 2 (their conjugate alias), so the
//! band sums add up exactly to the H-step time-domain generalized FEVD by
//! Parseval. Band membership follows the period `2 pi / w` in trading days:
//! short (1, 5], medium (5, 20], long (20, inf] with `w = 0` assigned long.
//!
//! Causal mode replaces the covariance by its diagonal before all products,
//! removing contemporaneous correlation and leaving only lag-driven
//! (causal) linkages.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizon band label. `Total` denotes the sum over S, M, L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Short,
    Medium,
    Long,
    Total,
}

impl Band {
    pub const PARTITION: [Band; 3] = [Band::Short, Band::Medium, Band::Long];
    pub const ALL: [Band; 4] = [Band::Short, Band::Medium, Band::Long, Band::Total];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Short => "S",
            Band::Medium => "M",
            Band::Long => "L",
            Band::Total => "T",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        match s {
            "S" => Some(Band::Short),
            "M" => Some(Band::Medium),
            "L" => Some(Band::Long),
            "T" => Some(Band::Total),
            _ => None,
        }
    }
}

/// Aggregate (full covariance) vs causal (diagonalized covariance) networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NetworkMode {
    Aggregate,
    Causal,
}

impl NetworkMode {
    pub const BOTH: [NetworkMode; 2] = [NetworkMode::Aggregate, NetworkMode::Causal];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkMode::Aggregate => "aggregate",
            NetworkMode::Causal => "causal",
        }
    }

    pub fn parse(s: &str) -> Option<NetworkMode> {
        match s {
            "aggregate" => Some(NetworkMode::Aggregate),
            "causal" => Some(NetworkMode::Causal),
            _ => None,
        }
    }
}

/// Band edges in trading-day periods plus the VMA/Fourier truncation horizon.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HorizonBands {
    /// Short band covers periods in (1, short_edge].
    pub short_edge: f64,
    /// Medium band covers periods in (short_edge, medium_edge]; longer is L.
    pub medium_edge: f64,
    /// Truncation horizon H.
    pub horizon: usize,
}

impl Default for HorizonBands {
    fn default() -> Self {
        HorizonBands {
            short_edge: 5.0,
            medium_edge: 20.0,
            horizon: 100,
        }
    }
}

impl HorizonBands {
    /// Band of the grid frequency `w` (radians per day); `w = 0` is long-run.
    pub fn band_of(&self, omega: f64) -> Band {
        if omega <= 0.0 {
            return Band::Long;
        }
        let period = 2.0 * std::f64::consts::PI / omega;
        if period <= self.short_edge {
            Band::Short
        } else if period <= self.medium_edge {
            Band::Medium
        } else {
            Band::Long
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.short_edge > 1.0 && self.medium_edge > self.short_edge) {
            return Err(Error::Config(format!(
                "band edges must satisfy 1 < short < medium, got {} and {}",
                self.short_edge, self.medium_edge
            )));
        }
        if (self.horizon as f64) < 2.0 * self.medium_edge {
            return Err(Error::Config(format!(
                "truncation horizon {} must be at least twice the longest finite band edge {}",
                self.horizon, self.medium_edge
            )));
        }
        Ok(())
    }
}

/// One date's adjacency in one band and mode.
#[derive(Debug, Clone)]
pub struct BandAdjacency {
    pub date: NaiveDate,
    pub band: Band,
    pub mode: NetworkMode,
    /// Raw FEVD shares, rows = receiving variable.
    pub raw: DMatrix<f64>,
    /// Row-normalized within the band; `None` for any row whose within-band
    /// sum is zero (flagged degenerate).
    pub normalized: Option<DMatrix<f64>>,
    /// Rows with zero within-band sums.
    pub degenerate_rows: Vec<usize>,
    pub currencies: Vec<String>,
}

/// VMA coefficients `Psi(0..H-1)` from the VAR recursion
/// `Psi(h) = sum_{i=1..min(h,p)} Phi_i Psi(h-i)`, `Psi(0) = I`.
pub fn var_to_vma(phis: &[DMatrix<f64>], horizon: usize) -> Vec<DMatrix<f64>> {
    let n = phis.first().map_or(0, |m| m.nrows());
    let mut psis = Vec::with_capacity(horizon);
    psis.push(DMatrix::<f64>::identity(n, n));
    for h in 1..horizon {
        let mut psi = DMatrix::<f64>::zeros(n, n);
        for (i, phi) in phis.iter().enumerate() {
            if h > i {
                psi += phi * &psis[h - 1 - i];
            }
        }
        psis.push(psi);
    }
    psis
}

/// Impulse transfer function `Psi(w) = sum_h Psi(h) e^{-iwh}`.
pub fn impulse_transfer(psis: &[DMatrix<f64>], omega: f64) -> DMatrix<Complex64> {
    let n = psis[0].nrows();
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for (h, psi) in psis.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -omega * h as f64);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += Complex64::new(psi[(i, j)], 0.0) * phase;
            }
        }
    }
    out
}

/// Frequency grid `w_j = 2 pi j / H` for `j = 0..=H/2` with the conjugate
/// multiplicity of each node (interior frequencies count twice).
fn frequency_grid(horizon: usize) -> Vec<(f64, f64)> {
    let half = horizon / 2;
    (0..=half)
        .map(|j| {
            let omega = 2.0 * std::f64::consts::PI * j as f64 / horizon as f64;
            let weight = if j == 0 || (horizon.is_multiple_of(2) && j == half) {
                1.0
            } else {
                2.0
            };
            (omega, weight)
        })
        .collect()
}

/// Generalized FEVD adjacency matrices per band.
///
/// `sigma` must be symmetric positive definite. In causal mode the products
/// use `diag(sigma)`; the scaling `sigma_kk` always comes from the diagonal.
pub fn fevd_adjacency(
    date: NaiveDate,
    phis: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    bands: &HorizonBands,
    mode: NetworkMode,
    currencies: &[String],
) -> Vec<BandAdjacency> {
    let n = sigma.nrows();
    let sigma_eff = match mode {
        NetworkMode::Aggregate => sigma.clone(),
        NetworkMode::Causal => DMatrix::from_fn(n, n, |i, j| if i == j { sigma[(i, j)] } else { 0.0 }),
    };
    let psis = var_to_vma(phis, bands.horizon);

    let mut numerators: BTreeMap<Band, DMatrix<f64>> = Band::PARTITION
        .iter()
        .map(|b| (*b, DMatrix::<f64>::zeros(n, n)))
        .collect();
    let mut denominator = vec![0.0f64; n];

    for (omega, weight) in frequency_grid(bands.horizon) {
        let transfer = impulse_transfer(&psis, omega);
        // T(w) = Psi(w) Sigma  (complex N x N)
        let mut t_mat = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += transfer[(i, k)] * Complex64::new(sigma_eff[(k, j)], 0.0);
                }
                t_mat[(i, j)] = acc;
            }
        }
        let band = bands.band_of(omega);
        let num = numerators.get_mut(&band).expect("partition band");
        for i in 0..n {
            for j in 0..n {
                num[(i, j)] += weight * t_mat[(i, j)].norm_sqr();
            }
        }
        // [Psi(w) Sigma Psi*(w)]_{jj} = sum_k T_{jk} conj(Psi_{jk}).
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += t_mat[(i, k)] * transfer[(i, k)].conj();
            }
            denominator[i] += weight * acc.re;
        }
    }

    Band::PARTITION
        .iter()
        .map(|band| {
            let num = &numerators[band];
            let raw = DMatrix::from_fn(n, n, |i, j| {
                let skk = sigma_eff[(j, j)];
                if skk > 0.0 && denominator[i] > 0.0 {
                    num[(i, j)] / (skk * denominator[i])
                } else {
                    0.0
                }
            });
            let mut degenerate = Vec::new();
            let mut normalized = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let row_sum: f64 = raw.row(i).iter().sum();
                if row_sum <= 0.0 {
                    degenerate.push(i);
                } else {
                    for j in 0..n {
                        normalized[(i, j)] = raw[(i, j)] / row_sum;
                    }
                }
            }
            BandAdjacency {
                date,
                band: *band,
                mode,
                raw,
                normalized: if degenerate.is_empty() {
                    Some(normalized)
                } else {
                    None
                },
                degenerate_rows: degenerate,
                currencies: currencies.to_vec(),
            }
        })
        .collect()
}

/// H-step time-domain generalized FEVD (the frequency-domain master oracle
/// must reproduce this when summed over the band partition).
pub fn time_domain_gfevd(
    phis: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    horizon: usize,
) -> DMatrix<f64> {
    let n = sigma.nrows();
    let psis = var_to_vma(phis, horizon);
    let mut num = DMatrix::<f64>::zeros(n, n);
    let mut den = vec![0.0f64; n];
    for psi in &psis {
        let t_mat = psi * sigma;
        for i in 0..n {
            for j in 0..n {
                num[(i, j)] += t_mat[(i, j)] * t_mat[(i, j)];
            }
            let q = (psi * sigma * psi.transpose())[(i, i)];
            den[i] += q;
        }
    }
    DMatrix::from_fn(n, n, |i, j| num[(i, j)] / (sigma[(j, j)] * den[i]))
}

/// From/to/net directional measures per currency, band, and mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionalMeasures {
    pub date: NaiveDate,
    pub mode: NetworkMode,
    pub currencies: Vec<String>,
    /// `[band][currency]`, bands ordered S, M, L, T.
    pub from: Vec<Vec<f64>>,
    pub to: Vec<Vec<f64>>,
    pub net: Vec<Vec<f64>>,
}

impl DirectionalMeasures {
    pub fn band_index(band: Band) -> usize {
        match band {
            Band::Short => 0,
            Band::Medium => 1,
            Band::Long => 2,
            Band::Total => 3,
        }
    }

    pub fn value(&self, kind: MeasureKind, band: Band, ci: usize) -> f64 {
        let b = Self::band_index(band);
        match kind {
            MeasureKind::From => self.from[b][ci],
            MeasureKind::To => self.to[b][ci],
            MeasureKind::Net => self.net[b][ci],
        }
    }
}

/// Which directional measure to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    From,
    To,
    Net,
}

impl MeasureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::From => "from",
            MeasureKind::To => "to",
            MeasureKind::Net => "net",
        }
    }

    pub fn parse(s: &str) -> Option<MeasureKind> {
        match s {
            "from" => Some(MeasureKind::From),
            "to" => Some(MeasureKind::To),
            "net" => Some(MeasureKind::Net),
            _ => None,
        }
    }
}

/// Directional measures from the three band adjacencies of one (date, mode).
///
/// From = off-diagonal row sum, To = off-diagonal column sum, Net = To - From,
/// computed on the normalized matrices (or on raw shares with
/// `absolute = true`); the T entries sum the three bands.
pub fn directional_measures(
    adjacencies: &[BandAdjacency],
    absolute: bool,
) -> Result<DirectionalMeasures> {
    assert_eq!(adjacencies.len(), 3, "need the S, M, L partition");
    let date = adjacencies[0].date;
    let mode = adjacencies[0].mode;
    let currencies = adjacencies[0].currencies.clone();
    let n = currencies.len();
    let mut from = vec![vec![0.0; n]; 4];
    let mut to = vec![vec![0.0; n]; 4];
    let mut net = vec![vec![0.0; n]; 4];
    for band in Band::PARTITION {
        let adj = adjacencies
            .iter()
            .find(|a| a.band == band)
            .expect("band present");
        let matrix: &DMatrix<f64> = if absolute {
            &adj.raw
        } else {
            adj.normalized.as_ref().ok_or(Error::DegenerateRow {
                row: *adj.degenerate_rows.first().unwrap_or(&0),
                band: band.as_str().to_string(),
            })?
        };
        let b = DirectionalMeasures::band_index(band);
        for i in 0..n {
            let mut f = 0.0;
            let mut t = 0.0;
            for j in 0..n {
                if j != i {
                    f += matrix[(i, j)];
                    t += matrix[(j, i)];
                }
            }
            from[b][i] = f;
            to[b][i] = t;
            net[b][i] = t - f;
            from[3][i] += f;
            to[3][i] += t;
            net[3][i] += t - f;
        }
    }
    Ok(DirectionalMeasures {
        date,
        mode,
        currencies,
        from,
        to,
        net,
    })
}

/// Write a thresholded adjacency as GraphML. Edges where the normalized (or
/// raw, if normalization is degenerate) weight meets the threshold;
/// self-loops excluded; node attributes carry the net measure.
pub fn export_graphml(
    adj: &BandAdjacency,
    net_by_currency: &[f64],
    threshold: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let matrix = adj.normalized.as_ref().unwrap_or(&adj.raw);
    let n = adj.currencies.len();
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    s.push_str("  <key id=\"w\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
    s.push_str("  <key id=\"net\" for=\"node\" attr.name=\"net\" attr.type=\"double\"/>\n");
    s.push_str(&format!(
        "  <graph id=\"{}-{}-{}\" edgedefault=\"directed\">\n",
        adj.date,
        adj.mode.as_str(),
        adj.band.as_str()
    ));
    for (i, ccy) in adj.currencies.iter().enumerate() {
        s.push_str(&format!(
            "    <node id=\"{ccy}\"><data key=\"net\">{}</data></node>\n",
            net_by_currency[i]
        ));
    }
    // Edge j -> i carries the share of i's variance due to j: row i, col j.
    for i in 0..n {
        for j in 0..n {
            if i != j && matrix[(i, j)] >= threshold {
                s.push_str(&format!(
                    "    <edge source=\"{}\" target=\"{}\"><data key=\"w\">{}</data></edge>\n",
                    adj.currencies[j],
                    adj.currencies[i],
                    matrix[(i, j)]
                ));
            }
        }
    }
    s.push_str("  </graph>\n</graphml>\n");
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(s.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the same graph as DOT.
pub fn export_dot(
    adj: &BandAdjacency,
    net_by_currency: &[f64],
    threshold: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let matrix = adj.normalized.as_ref().unwrap_or(&adj.raw);
    let n = adj.currencies.len();
    let mut s = format!(
        "digraph \"{}_{}_{}\" {{\n",
        adj.date,
        adj.mode.as_str(),
        adj.band.as_str()
    );
    for (i, ccy) in adj.currencies.iter().enumerate() {
        s.push_str(&format!("  \"{ccy}\" [net={}];\n", net_by_currency[i]));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && matrix[(i, j)] >= threshold {
                s.push_str(&format!(
                    "  \"{}\" -> \"{}\" [weight={}];\n",
                    adj.currencies[j],
                    adj.currencies[i],
                    matrix[(i, j)]
                ));
            }
        }
    }
    s.push_str("}\n");
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(s.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Minimal reader for the GraphML written by [`export_graphml`]; returns
/// (source, target, weight) triples. Intended for round-trip checks.
pub fn parse_graphml_edges(text: &str) -> Vec<(String, String, f64)> {
    let mut edges = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if !line.starts_with("<edge ") {
            continue;
        }
        let grab = |key: &str| -> Option<String> {
            let pat = format!("{key}=\"");
            let start = line.find(&pat)? + pat.len();
            let end = line[start..].find('"')? + start;
            Some(line[start..end].to_string())
        };
        let source = grab("source");
        let target = grab("target");
        let weight = line
            .find("<data key=\"w\">")
            .and_then(|i| {
                let rest = &line[i + 14..];
                rest.find("</data>").map(|j| rest[..j].parse::<f64>().ok())
            })
            .flatten();
        if let (Some(s), Some(t), Some(w)) = (source, target, weight) {
            edges.push((s, t, w));
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2008, 9, 30).unwrap()
    }

    fn ccys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("C{i}")).collect()
    }

    #[test]
    fn vma_white_noise_is_zero_after_lag0() {
        let phis = vec![DMatrix::<f64>::zeros(3, 3)];
        let psis = var_to_vma(&phis, 10);
        assert_eq!(psis[0], DMatrix::identity(3, 3));
        for psi in &psis[1..] {
            assert_eq!(psi.abs().max(), 0.0);
        }
    }

    #[test]
    fn vma_scalar_ar1_closed_form() {
        let phis = vec![DMatrix::from_element(1, 1, 0.5)];
        let psis = var_to_vma(&phis, 20);
        for (h, psi) in psis.iter().enumerate() {
            assert_relative_eq!(psi[(0, 0)], 0.5f64.powi(h as i32), epsilon = 1e-14);
        }
    }

    #[test]
    fn vma_matches_impulse_simulation() {
        // Random stable bivariate VAR(2): Psi(h) equals the response at lag h
        // of a unit shock with zero history.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let phi1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.3..0.3));
        let phi2 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.2..0.2));
        let phis = vec![phi1.clone(), phi2.clone()];
        let horizon = 30;
        let psis = var_to_vma(&phis, horizon);
        for shock in 0..2 {
            let mut hist: Vec<DMatrix<f64>> = Vec::new(); // x_t as 2x1
            let mut e0 = DMatrix::<f64>::zeros(2, 1);
            e0[(shock, 0)] = 1.0;
            for h in 0..horizon {
                let mut x = if h == 0 {
                    e0.clone()
                } else {
                    DMatrix::<f64>::zeros(2, 1)
                };
                for (l, phi) in phis.iter().enumerate() {
                    if h > l {
                        x += phi * &hist[h - 1 - l];
                    }
                }
                for i in 0..2 {
                    assert_relative_eq!(psis[h][(i, shock)], x[(i, 0)], epsilon = 1e-10);
                }
                hist.push(x);
            }
        }
    }

    #[test]
    fn transfer_at_zero_is_cumulative_sum() {
        let phis = vec![DMatrix::from_element(1, 1, 0.5)];
        let psis = var_to_vma(&phis, 50);
        let t0 = impulse_transfer(&psis, 0.0);
        let expected: f64 = (0..50).map(|h| 0.5f64.powi(h)).sum();
        assert_relative_eq!(t0[(0, 0)].re, expected, epsilon = 1e-12);
        assert_relative_eq!(t0[(0, 0)].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transfer_of_white_noise_is_identity() {
        let phis = vec![DMatrix::<f64>::zeros(2, 2)];
        let psis = var_to_vma(&phis, 16);
        for omega in [0.0, 0.5, 1.5, std::f64::consts::PI] {
            let t = impulse_transfer(&psis, omega);
            for i in 0..2 {
                for j in 0..2 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(t[(i, j)].re, expected, epsilon = 1e-12);
                    assert_relative_eq!(t[(i, j)].im, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_ar1_spectrum_closed_form() {
        // |Psi(w)|^2 -> 1 / (1.25 - cos w) for phi = 0.5 as H grows.
        let phis = vec![DMatrix::from_element(1, 1, 0.5)];
        let psis = var_to_vma(&phis, 400);
        for omega in [0.1, 0.7, 1.3, 2.2, 3.0] {
            let t = impulse_transfer(&psis, omega);
            let spec = t[(0, 0)].norm_sqr();
            let expected = 1.0 / (1.25 - omega.cos());
            assert!(
                (spec - expected).abs() < 1e-6,
                "spectrum {spec} vs {expected} at {omega}"
            );
        }
    }

    #[test]
    fn band_assignment_h100() {
        let bands = HorizonBands::default();
        let grid = frequency_grid(100);
        assert_eq!(grid.len(), 51);
        // j=0 -> L, j=5 period 20 -> M, j=20 period 5 -> S, j=50 period 2 -> S.
        assert_eq!(bands.band_of(grid[0].0), Band::Long);
        assert_eq!(bands.band_of(grid[4].0), Band::Long); // period 25
        assert_eq!(bands.band_of(grid[5].0), Band::Medium); // period 20
        assert_eq!(bands.band_of(grid[19].0), Band::Medium); // period ~5.26
        assert_eq!(bands.band_of(grid[20].0), Band::Short); // period 5
        assert_eq!(bands.band_of(grid[50].0), Band::Short);
        // Endpoint weights 1, interior 2.
        assert_eq!(grid[0].1, 1.0);
        assert_eq!(grid[50].1, 1.0);
        assert!(grid[1..50].iter().all(|g| g.1 == 2.0));
    }

    #[test]
    fn diagonal_system_has_no_cross_shares() {
        let phis = vec![DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            &[0.5, 0.3],
        ))];
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 2.0]));
        for mode in NetworkMode::BOTH {
            let adjs = fevd_adjacency(date(), &phis, &sigma, &HorizonBands::default(), mode, &ccys(2));
            let mut total_diag = DMatrix::<f64>::zeros(2, 2);
            for adj in &adjs {
                for i in 0..2 {
                    for j in 0..2 {
                        if i != j {
                            assert!(adj.raw[(i, j)].abs() < 1e-14);
                        }
                    }
                }
                total_diag += &adj.raw;
            }
            // Normalized matrices of nonempty bands are the identity.
            for adj in &adjs {
                if let Some(nm) = &adj.normalized {
                    assert_relative_eq!(nm[(0, 0)], 1.0, epsilon = 1e-12);
                    assert_relative_eq!(nm[(1, 1)], 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn aggregate_equals_causal_for_diagonal_sigma() {
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 0.5])];
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 0.7]));
        let a = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Aggregate,
            &ccys(2),
        );
        let c = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Causal,
            &ccys(2),
        );
        for (x, y) in a.iter().zip(&c) {
            assert!((&x.raw - &y.raw).abs().max() < 1e-12);
        }
    }

    #[test]
    fn triangular_var_shares_respect_structure() {
        // Phi = [[0.5, 0.3], [0, 0.5]], Sigma = I: variable 1 receives from 2,
        // variable 2 receives nothing from 1, and the band sum matches the
        // time-domain oracle.
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 0.5])];
        let sigma = DMatrix::<f64>::identity(2, 2);
        let bands = HorizonBands::default();
        let adjs = fevd_adjacency(date(), &phis, &sigma, &bands, NetworkMode::Aggregate, &ccys(2));
        let mut total = DMatrix::<f64>::zeros(2, 2);
        for adj in &adjs {
            total += &adj.raw;
        }
        assert!(total[(0, 1)] > 1e-4, "row 1 must receive from variable 2");
        assert!(total[(1, 0)].abs() < 1e-14, "row 2 must not receive from 1");
        let oracle = time_domain_gfevd(&phis, &sigma, bands.horizon);
        assert!((&total - &oracle).abs().max() < 1e-6);
        // Normalized versions share the structure.
        for adj in &adjs {
            let nm = adj.normalized.as_ref().unwrap();
            assert!(nm[(1, 0)].abs() < 1e-14);
        }
    }

    #[test]
    fn frequency_time_fevd_equivalence_random_systems() {
        // Master oracle: band-summed spectral FEVD == H=100 time-domain
        // generalized FEVD, 50 random stable systems of size 2 and 3.
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let bands = HorizonBands::default();
        let mut tested = 0;
        while tested < 50 {
            let n = if tested % 2 == 0 { 2 } else { 3 };
            let phi = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.45..0.45));
            let params = vec![phi];
            // Random SPD covariance.
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let sigma = &a * a.transpose() + DMatrix::<f64>::identity(n, n) * 0.5;
            let radius = crate::tvp_var::VarParams {
                intercept: nalgebra::DVector::zeros(n),
                coefficients: params.clone(),
                sigma: sigma.clone(),
            }
            .spectral_radius();
            if radius >= 0.95 {
                continue;
            }
            tested += 1;
            let adjs = fevd_adjacency(date(), &params, &sigma, &bands, NetworkMode::Aggregate, &ccys(n));
            let mut total = DMatrix::<f64>::zeros(n, n);
            for adj in &adjs {
                total += &adj.raw;
            }
            let oracle = time_domain_gfevd(&params, &sigma, bands.horizon);
            let err = (&total - &oracle).abs().max();
            assert!(err < 1e-6, "system {tested}: max error {err}");
        }
    }

    #[test]
    fn causal_mode_ignores_off_diagonal_sigma() {
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.2, 0.1, 0.3])];
        let sigma1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let sigma2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.9, -0.9, 2.0]);
        let bands = HorizonBands::default();
        let a = fevd_adjacency(date(), &phis, &sigma1, &bands, NetworkMode::Causal, &ccys(2));
        let b = fevd_adjacency(date(), &phis, &sigma2, &bands, NetworkMode::Causal, &ccys(2));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.raw, y.raw, "causal adjacency must be bit-identical");
        }
    }

    #[test]
    fn causal_rows_sum_to_one_across_bands() {
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.2, 0.1, 0.3])];
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let adjs = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Causal,
            &ccys(2),
        );
        let mut total = DMatrix::<f64>::zeros(2, 2);
        for adj in &adjs {
            total += &adj.raw;
        }
        for i in 0..2 {
            let row: f64 = total.row(i).iter().sum();
            assert_relative_eq!(row, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn fixed_parameter_scale_invariance() {
        // Rescaling Sigma -> D Sigma D with diagonal D leaves rows invariant.
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.2, 0.1, 0.3])];
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.5]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[3.0, 0.25]));
        let scaled = &d * &sigma * &d;
        let bands = HorizonBands::default();
        // Under joint data rescaling the VAR coefficients transform too:
        // Phi -> D Phi D^{-1}.
        let d_inv = d.clone().try_inverse().unwrap();
        let phis_scaled = vec![&d * &phis[0] * &d_inv];
        let base = fevd_adjacency(date(), &phis, &sigma, &bands, NetworkMode::Aggregate, &ccys(2));
        let resc = fevd_adjacency(
            date(),
            &phis_scaled,
            &scaled,
            &bands,
            NetworkMode::Aggregate,
            &ccys(2),
        );
        for (x, y) in base.iter().zip(&resc) {
            assert!((&x.raw - &y.raw).abs().max() < 1e-10);
        }
    }

    #[test]
    fn directional_measures_identity_matrix() {
        let phis = vec![DMatrix::<f64>::zeros(3, 3)];
        let sigma = DMatrix::<f64>::identity(3, 3);
        let adjs = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Aggregate,
            &ccys(3),
        );
        let dm = directional_measures(&adjs, false).unwrap();
        for b in 0..4 {
            for i in 0..3 {
                assert_relative_eq!(dm.from[b][i], 0.0, epsilon = 1e-12);
                assert_relative_eq!(dm.to[b][i], 0.0, epsilon = 1e-12);
                assert_relative_eq!(dm.net[b][i], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn net_flows_cancel_system_wide() {
        let phis = vec![DMatrix::from_row_slice(
            3,
            3,
            &[0.4, 0.2, 0.0, 0.1, 0.3, 0.1, 0.05, 0.0, 0.3],
        )];
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 0.8]);
        let sigma = (&a + a.transpose()) * 0.5 + DMatrix::<f64>::identity(3, 3);
        let adjs = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Aggregate,
            &ccys(3),
        );
        let dm = directional_measures(&adjs, false).unwrap();
        for b in 0..4 {
            let total: f64 = dm.net[b].iter().sum();
            assert!(total.abs() < 1e-10, "net must cancel, got {total}");
        }
    }

    #[test]
    fn pure_transmitter_fixture() {
        // Hand-built normalized adjacency with node 0 a pure transmitter.
        let theta = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.4, 0.6, 0.0, 0.5, 0.0, 0.5],
        );
        let adj = |band| BandAdjacency {
            date: date(),
            band,
            mode: NetworkMode::Causal,
            raw: theta.clone(),
            normalized: Some(theta.clone()),
            degenerate_rows: vec![],
            currencies: ccys(3),
        };
        let adjs = vec![adj(Band::Short), adj(Band::Medium), adj(Band::Long)];
        let dm = directional_measures(&adjs, false).unwrap();
        let b = DirectionalMeasures::band_index(Band::Short);
        assert!(dm.to[b][0] > 0.0);
        assert_eq!(dm.from[b][0], 0.0);
        assert!(dm.net[b][0] > 0.0);
    }

    #[test]
    fn degenerate_row_flagged_and_rejected() {
        let raw = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.3, 0.2]);
        let degenerate = BandAdjacency {
            date: date(),
            band: Band::Short,
            mode: NetworkMode::Causal,
            raw: raw.clone(),
            normalized: None,
            degenerate_rows: vec![0],
            currencies: ccys(2),
        };
        let fine = |band| BandAdjacency {
            date: date(),
            band,
            mode: NetworkMode::Causal,
            raw: DMatrix::identity(2, 2),
            normalized: Some(DMatrix::identity(2, 2)),
            degenerate_rows: vec![],
            currencies: ccys(2),
        };
        let adjs = vec![degenerate.clone(), fine(Band::Medium), fine(Band::Long)];
        assert!(matches!(
            directional_measures(&adjs, false),
            Err(crate::error::Error::DegenerateRow { row: 0, .. })
        ));
        // Absolute mode works off the raw shares and stays defined.
        let dm = directional_measures(&adjs, true).unwrap();
        let b = DirectionalMeasures::band_index(Band::Short);
        assert_relative_eq!(dm.from[b][1], 0.3, epsilon = 1e-15);
        assert_relative_eq!(dm.to[b][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn absolute_measures_use_raw_shares() {
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.2, 0.1, 0.3])];
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let adjs = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Aggregate,
            &ccys(2),
        );
        let dm = directional_measures(&adjs, true).unwrap();
        let b = DirectionalMeasures::band_index(Band::Short);
        assert_relative_eq!(dm.from[b][0], adjs[0].raw[(0, 1)], epsilon = 1e-15);
        assert_relative_eq!(dm.to[b][0], adjs[0].raw[(1, 0)], epsilon = 1e-15);
        // Net cancellation holds for raw-based measures too.
        for band in 0..4 {
            let s: f64 = dm.net[band].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn graph_export_thresholds_and_round_trips() {
        let phis = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.1, 0.4])];
        let sigma = DMatrix::<f64>::identity(2, 2);
        let adjs = fevd_adjacency(
            date(),
            &phis,
            &sigma,
            &HorizonBands::default(),
            NetworkMode::Aggregate,
            &ccys(2),
        );
        let dm = directional_measures(&adjs, false).unwrap();
        let adj = &adjs[0];
        let dir = tempfile::tempdir().unwrap();

        // Threshold above maximum: nodes only.
        let p0 = dir.path().join("empty.graphml");
        export_graphml(adj, &dm.net[0], 2.0, &p0).unwrap();
        let text = std::fs::read_to_string(&p0).unwrap();
        assert_eq!(parse_graphml_edges(&text).len(), 0);
        assert_eq!(text.matches("<node ").count(), 2);

        // Threshold zero: N(N-1) edges.
        let p1 = dir.path().join("full.graphml");
        export_graphml(adj, &dm.net[0], 0.0, &p1).unwrap();
        let text = std::fs::read_to_string(&p1).unwrap();
        let edges = parse_graphml_edges(&text);
        assert_eq!(edges.len(), 2);

        // Weights round-trip exactly (shortest float repr).
        let nm = adj.normalized.as_ref().unwrap();
        for (src, dst, w) in &edges {
            let i = adj.currencies.iter().position(|c| c == dst).unwrap();
            let j = adj.currencies.iter().position(|c| c == src).unwrap();
            assert_eq!(*w, nm[(i, j)], "weight mismatch for {src}->{dst}");
        }

        let p2 = dir.path().join("g.dot");
        export_dot(adj, &dm.net[0], 0.0, &p2).unwrap();
        let dot = std::fs::read_to_string(&p2).unwrap();
        assert!(dot.contains("->"));
    }
}
