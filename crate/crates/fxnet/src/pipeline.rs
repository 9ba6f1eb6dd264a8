//! End-to-end pipeline: synthetic data (optional), variance synthesis,
//! network estimation, backtests, pricing tests, and a merged report.
//!
//! Configuration is a plain-text `[section]` / `key = value` file (see
//! [`PipelineConfig::parse`]). Every stage writes its outputs into the run
//! directory together with a `<stage>.key` fingerprint (SHA-256 over input
//! bytes, the stage's config subset, and the crate version). A rerun skips
//! stages whose fingerprints match, so identical configs are byte-identical
//! and a config change recomputes only the affected stages and their
//! downstream dependents.
//!
//! All randomness flows from the single `seed` key: the generator, posterior
//! sampling, and simulated p-values each derive their streams from it, so a
//! `(config, seed)` pair fully determines the artifact directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::asset_pricing::{self, BetaRegression, FitStats, PcaResult};
use crate::connectedness::{
    directional_measures, fevd_adjacency, Band, DirectionalMeasures, HorizonBands, MeasureKind,
    NetworkMode,
};
use crate::error::{Error, Result};
use crate::implied_variance::{build_smile, compute_civ, CivGrid};
use crate::market_data::{
    align, load_fx_panel, load_option_surface, AlignedDataset, Frequency,
    ONE_MONTH,
};
use crate::panel::{load_civ_panel, save_civ_panel, CivPanel};
use crate::strategy::{
    allocation_report, apply_transaction_costs, benchmark_signal, combine_portfolios,
    dollar_factor, long_short_returns, performance_stats, sort_quintiles, spanning_regression,
    BenchmarkKind, CostModel, FactorSeries, LongLeg, SignalContext,
    SpanningResult, StrategyTrack, SummaryStats,
};
use crate::synthetic::SyntheticConfig;
use crate::tvp_var::{estimate_path, PosteriorMode, QbllConfig, VarParams};

/// A strategy the backtest stage should run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategySpec {
    Network {
        measure: MeasureKind,
        mode: NetworkMode,
        band: Band,
    },
    Benchmark(BenchmarkKind),
}

impl StrategySpec {
    pub fn parse(token: &str) -> Result<StrategySpec> {
        if let Some(kind) = BenchmarkKind::parse(token) {
            return Ok(StrategySpec::Benchmark(kind));
        }
        let parts: Vec<&str> = token.split(':').collect();
        if parts.len() == 3 {
            if let (Some(measure), Some(mode), Some(band)) = (
                MeasureKind::parse(parts[0]),
                NetworkMode::parse(parts[1]),
                Band::parse(parts[2]),
            ) {
                return Ok(StrategySpec::Network {
                    measure,
                    mode,
                    band,
                });
            }
        }
        Err(Error::Config(format!(
            "unknown strategy {token:?}; expected dol|car|vol|vrp|mom or <net|to|from>:<aggregate|causal>:<S|M|L|T>"
        )))
    }

    pub fn name(&self) -> String {
        match self {
            StrategySpec::Network {
                measure,
                mode,
                band,
            } => format!("{}-{}-{}", measure.as_str(), mode.as_str(), band.as_str()),
            StrategySpec::Benchmark(kind) => kind.as_str().to_string(),
        }
    }
}

/// Parsed pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Generator settings; `None` means surface/fx paths must be given.
    pub generate: Option<SyntheticConfig>,
    pub surface_path: Option<PathBuf>,
    pub fx_path: Option<PathBuf>,
    pub tenor: f64,
    pub civ_grid: CivGrid,
    pub qbll: QbllConfig,
    pub bands: HorizonBands,
    /// Use raw (absolute) shares for directional measures.
    pub absolute: bool,
    /// Export GraphML/DOT for these dates.
    pub graph_dates: Vec<NaiveDate>,
    pub graph_threshold: f64,
    pub frequency: Frequency,
    /// Cost fraction of the quoted half-spread (0, 0.25, 0.5, 1.0).
    pub cost_fraction: f64,
    pub strategies: Vec<StrategySpec>,
    /// SDF factor batteries: each entry like "dol+car" or "dol+car+net".
    pub models: Vec<Vec<String>>,
    /// Cross-sections to price: network modes of the net short-band sort.
    pub pricing_modes: Vec<NetworkMode>,
    pub hj_sims: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            generate: Some(SyntheticConfig::default()),
            surface_path: None,
            fx_path: None,
            tenor: ONE_MONTH,
            civ_grid: CivGrid::default(),
            qbll: QbllConfig::default(),
            bands: HorizonBands::default(),
            absolute: false,
            graph_dates: Vec::new(),
            graph_threshold: 0.05,
            frequency: Frequency::Monthly,
            cost_fraction: 0.5,
            strategies: default_strategies(),
            models: default_models(),
            pricing_modes: vec![NetworkMode::Aggregate, NetworkMode::Causal],
            hj_sims: 5000,
            out_dir: PathBuf::from("out"),
            seed: 42,
            threads: 0,
        }
    }
}

fn default_strategies() -> Vec<StrategySpec> {
    let mut out = Vec::new();
    for mode in NetworkMode::BOTH {
        for band in Band::ALL {
            out.push(StrategySpec::Network {
                measure: MeasureKind::Net,
                mode,
                band,
            });
        }
    }
    for band in Band::ALL {
        out.push(StrategySpec::Network {
            measure: MeasureKind::To,
            mode: NetworkMode::Causal,
            band,
        });
        out.push(StrategySpec::Network {
            measure: MeasureKind::From,
            mode: NetworkMode::Causal,
            band,
        });
    }
    for kind in [
        BenchmarkKind::Car,
        BenchmarkKind::Vol,
        BenchmarkKind::Vrp,
        BenchmarkKind::Mom,
    ] {
        out.push(StrategySpec::Benchmark(kind));
    }
    out
}

fn default_models() -> Vec<Vec<String>> {
    let mut models = Vec::new();
    for second in ["car", "vol", "vrp", "mom", "net"] {
        models.push(vec!["dol".to_string(), second.to_string()]);
    }
    for third in ["car", "vol", "vrp", "mom"] {
        models.push(vec!["dol".to_string(), third.to_string(), "net".to_string()]);
    }
    models
}

impl PipelineConfig {
    /// Parse the `[section]` / `key = value` format. Unknown keys are
    /// rejected so typos fail loudly.
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut config = PipelineConfig {
            generate: None,
            ..Default::default()
        };
        let mut gen: Option<SyntheticConfig> = None;
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                if section == "generate" && gen.is_none() {
                    gen = Some(SyntheticConfig::default());
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", ln + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let fail = |what: &str| Error::Config(format!("line {}: bad {what}: {value:?}", ln + 1));
            macro_rules! num {
                ($ty:ty, $what:expr) => {
                    value.parse::<$ty>().map_err(|_| fail($what))?
                };
            }
            match (section.as_str(), key) {
                ("generate", "currencies") => {
                    gen.as_mut().unwrap().n_currencies = num!(usize, "currencies")
                }
                ("generate", "days") => gen.as_mut().unwrap().n_days = num!(usize, "days"),
                ("generate", "transmitter_strength") => {
                    gen.as_mut().unwrap().transmitter_strength = num!(f64, "transmitter_strength")
                }
                ("generate", "persistence") => {
                    gen.as_mut().unwrap().persistence = num!(f64, "persistence")
                }
                ("generate", "civ_innovation_sd") => {
                    gen.as_mut().unwrap().civ_innovation_sd = num!(f64, "civ_innovation_sd")
                }
                ("generate", "innovation_correlation") => {
                    gen.as_mut().unwrap().innovation_correlation =
                        num!(f64, "innovation_correlation")
                }
                ("generate", "base_vol") => gen.as_mut().unwrap().base_vol = num!(f64, "base_vol"),
                ("generate", "carry_spread_max") => {
                    gen.as_mut().unwrap().carry_spread_max = num!(f64, "carry_spread_max")
                }
                ("generate", "spot_vol") => gen.as_mut().unwrap().spot_vol = num!(f64, "spot_vol"),
                ("generate", "full_spread") => {
                    gen.as_mut().unwrap().full_spread = num!(f64, "full_spread")
                }
                ("generate", "start_date") => {
                    gen.as_mut().unwrap().start_date =
                        NaiveDate::parse_from_str(value, "%Y-%m-%d")
                            .map_err(|_| fail("start_date"))?
                }
                ("data", "surface") => config.surface_path = Some(PathBuf::from(value)),
                ("data", "fx") => config.fx_path = Some(PathBuf::from(value)),
                ("civ", "tenor") => config.tenor = num!(f64, "tenor"),
                ("civ", "n_grid") => config.civ_grid.n_grid = num!(usize, "n_grid"),
                ("civ", "range_mult") => config.civ_grid.range_mult = num!(f64, "range_mult"),
                ("network", "lags") => config.qbll.lags = num!(usize, "lags"),
                ("network", "shrinkage") => config.qbll.shrinkage = num!(f64, "shrinkage"),
                ("network", "first_lag_center") => {
                    config.qbll.first_lag_center = num!(f64, "first_lag_center")
                }
                ("network", "n_draws") => config.qbll.n_draws = num!(usize, "n_draws"),
                ("network", "bandwidth") => {
                    config.qbll.bandwidth = if value == "auto" {
                        None
                    } else {
                        Some(num!(usize, "bandwidth"))
                    }
                }
                ("network", "log_civ") => {
                    config.qbll.log_civ = value.parse::<bool>().map_err(|_| fail("log_civ"))?
                }
                ("network", "mode") => {
                    config.qbll.mode = match value {
                        "point" => PosteriorMode::Point,
                        "draws" => PosteriorMode::Draws,
                        _ => return Err(fail("mode (point|draws)")),
                    }
                }
                ("network", "horizon") => config.bands.horizon = num!(usize, "horizon"),
                ("network", "short_edge") => config.bands.short_edge = num!(f64, "short_edge"),
                ("network", "medium_edge") => config.bands.medium_edge = num!(f64, "medium_edge"),
                ("network", "absolute") => {
                    config.absolute = value.parse::<bool>().map_err(|_| fail("absolute"))?
                }
                ("network", "graph_threshold") => {
                    config.graph_threshold = num!(f64, "graph_threshold")
                }
                ("network", "graph_dates") => {
                    config.graph_dates = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                                .map_err(|_| fail("graph_dates"))
                        })
                        .collect::<Result<_>>()?
                }
                ("backtest", "frequency") => {
                    config.frequency =
                        Frequency::parse(value).ok_or_else(|| fail("frequency (d|w|m)"))?
                }
                ("backtest", "cost") => config.cost_fraction = num!(f64, "cost"),
                ("backtest", "strategies") => {
                    config.strategies = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| StrategySpec::parse(s.trim()))
                        .collect::<Result<_>>()?
                }
                ("pricing", "models") => {
                    config.models = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|m| m.trim().split('+').map(|f| f.trim().to_string()).collect())
                        .collect()
                }
                ("pricing", "modes") => {
                    config.pricing_modes = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            NetworkMode::parse(s.trim())
                                .ok_or_else(|| fail("modes (aggregate|causal)"))
                        })
                        .collect::<Result<_>>()?
                }
                ("pricing", "hj_sims") => config.hj_sims = num!(usize, "hj_sims"),
                ("output", "dir") => config.out_dir = PathBuf::from(value),
                ("output", "seed") => config.seed = num!(u64, "seed"),
                ("output", "threads") => config.threads = num!(usize, "threads"),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {key:?} in section [{section}]",
                        ln + 1
                    )))
                }
            }
        }
        if let Some(mut g) = gen {
            g.seed = config.seed;
            config.generate = Some(g);
        }
        if config.generate.is_none() && (config.surface_path.is_none() || config.fx_path.is_none())
        {
            return Err(Error::Config(
                "need either a [generate] section or [data] surface/fx paths".into(),
            ));
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        // Relative data paths resolve against the config file location.
        if let Some(base) = path.parent() {
            for pb in [&mut config.surface_path, &mut config.fx_path].into_iter().flatten() {
                if pb.is_relative() {
                    *pb = base.join(&pb);
                }
            }
        }
        Ok(config)
    }
}

/// Short hash of the network-stage configuration, used to key the posterior
/// summary cache filename.
pub fn network_config_hash(config: &PipelineConfig) -> String {
    let cfg = format!(
        "{:?};{:?};absolute={}",
        config.qbll, config.bands, config.absolute
    );
    cache_key(&[b"network-config", cfg.as_bytes()])[..12].to_string()
}

/// Stage cache: fingerprint inputs + config subset + code version.
fn cache_key(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// True when the stage's stored key matches and all outputs exist.
fn stage_cached(out_dir: &Path, stage: &str, key: &str, outputs: &[&Path]) -> bool {
    let key_path = out_dir.join(format!("{stage}.key"));
    match std::fs::read_to_string(&key_path) {
        Ok(stored) if stored == key => outputs.iter().all(|p| p.exists()),
        _ => false,
    }
}

fn store_stage_key(out_dir: &Path, stage: &str, key: &str) -> Result<()> {
    write_text(&out_dir.join(format!("{stage}.key")), key)
}

/// Exclusive-run guard: `.lock` in the output directory.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Which stages ran (false = cache hit).
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub ran_generate: bool,
    pub ran_civ: bool,
    pub ran_network: bool,
    pub ran_backtest: bool,
    pub ran_pricing: bool,
    pub ran_report: bool,
    pub out_dir: PathBuf,
}

/// Run every stage (respecting the cache). Returns what actually executed.
pub fn run(config: &PipelineConfig) -> Result<RunSummary> {
    if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(config))
    } else {
        run_inner(config)
    }
}

fn run_inner(config: &PipelineConfig) -> Result<RunSummary> {
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let _lock = DirLock::acquire(out)?;
    let mut summary = RunSummary {
        out_dir: out.clone(),
        ..Default::default()
    };

    // Stage 1: synthetic inputs (optional).
    let (surface_path, fx_path) = match &config.generate {
        Some(gen) => {
            let sp = out.join("surface.csv");
            let fp = out.join("fx.csv");
            let tp = out.join("truth.json");
            let gen_cfg = format!("{gen:?}");
            let key = cache_key(&[b"generate", gen_cfg.as_bytes()]);
            if !stage_cached(out, "generate", &key, &[&sp, &fp, &tp]) {
                crate::synthetic::write_files(gen, &sp, &fp, &tp)?;
                store_stage_key(out, "generate", &key)?;
                summary.ran_generate = true;
            }
            (sp, fp)
        }
        None => (
            config.surface_path.clone().expect("validated"),
            config.fx_path.clone().expect("validated"),
        ),
    };

    // Stage 2: implied variances.
    let civ_path = out.join("civ.csv");
    let surface_bytes = read_bytes(&surface_path)?;
    let fx_bytes = read_bytes(&fx_path)?;
    let civ_cfg = format!(
        "tenor={};n_grid={};range={}",
        config.tenor, config.civ_grid.n_grid, config.civ_grid.range_mult
    );
    let civ_key = cache_key(&[b"civ", &surface_bytes, &fx_bytes, civ_cfg.as_bytes()]);
    if !stage_cached(out, "civ", &civ_key, &[&civ_path]) {
        let surface = load_option_surface(&surface_path)?;
        let fx = load_fx_panel(&fx_path)?;
        let ds = align(&surface, &fx, config.tenor)?;
        let panel = synthesize_civ(&ds, config.tenor, config.civ_grid)?;
        save_civ_panel(&panel, &civ_path)?;
        store_stage_key(out, "civ", &civ_key)?;
        summary.ran_civ = true;
    }

    // Stage 3: network estimation.
    let civ_bytes = read_bytes(&civ_path)?;
    let net_cfg = format!(
        "{:?};{:?};absolute={}",
        config.qbll, config.bands, config.absolute
    );
    let net_key = cache_key(&[b"network", &civ_bytes, net_cfg.as_bytes()]);
    let measures_path = out.join("network_measures.csv");
    let posterior_path = out.join(format!("posterior_summary_{}.csv", &net_key[..12]));
    if !stage_cached(out, "network", &net_key, &[&measures_path, &posterior_path]) {
        let panel = load_civ_panel(&civ_path)?;
        let network = estimate_network(&panel, config)?;
        write_text(&measures_path, &network.measures_csv)?;
        write_text(&posterior_path, &network.posterior_csv)?;
        export_graphs(config, &network, out)?;
        store_stage_key(out, "network", &net_key)?;
        summary.ran_network = true;
    }

    // Stage 4: backtests.
    let measures_bytes = read_bytes(&measures_path)?;
    let bt_cfg = format!(
        "freq={};cost={};strategies={:?}",
        config.frequency.as_str(),
        config.cost_fraction,
        config.strategies.iter().map(|s| s.name()).collect::<Vec<_>>()
    );
    let bt_key = cache_key(&[b"backtest", &surface_bytes, &fx_bytes, &civ_bytes, &measures_bytes, bt_cfg.as_bytes()]);
    let stats_path = out.join("stats.json");
    let returns_path = out.join("strategy_returns.csv");
    if !stage_cached(out, "backtest", &bt_key, &[&stats_path, &returns_path]) {
        let bt = run_backtests(config, &surface_path, &fx_path, &civ_path, &measures_path)?;
        write_text(&stats_path, &serde_json::to_string_pretty(&bt.stats).unwrap())?;
        write_text(&returns_path, &bt.returns_csv)?;
        store_stage_key(out, "backtest", &bt_key)?;
        summary.ran_backtest = true;
    }

    // Stage 5: pricing tests. Keyed on the gross return series only, so a
    // cost-fraction change recomputes the backtest and report but leaves the
    // (gross-based) pricing untouched.
    let stats_bytes = read_bytes(&stats_path)?;
    let gross_canonical = {
        let rows = load_returns_csv(&returns_path)?;
        let mut s = String::new();
        for (name, (dates, vals)) in &rows {
            for (d, v) in dates.iter().zip(vals) {
                let _ = writeln!(
                    s,
                    "{name},{d},{},{},{},{},{},{}",
                    v[0], v[1], v[2], v[3], v[4], v[5]
                );
            }
        }
        s
    };
    let pr_cfg = format!(
        "models={:?};modes={:?};sims={};seed={}",
        config.models,
        config
            .pricing_modes
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>(),
        config.hj_sims,
        config.seed
    );
    let pr_key = cache_key(&[b"pricing", gross_canonical.as_bytes(), pr_cfg.as_bytes()]);
    let pricing_path = out.join("pricing.json");
    if !stage_cached(out, "pricing", &pr_key, &[&pricing_path]) {
        let pricing = run_pricing(config, &returns_path)?;
        write_text(&pricing_path, &serde_json::to_string_pretty(&pricing).unwrap())?;
        store_stage_key(out, "pricing", &pr_key)?;
        summary.ran_pricing = true;
    }

    // Stage 6: merged report.
    let pricing_bytes = read_bytes(&pricing_path)?;
    let rp_key = cache_key(&[b"report", &stats_bytes, &pricing_bytes]);
    let report_path = out.join("report.json");
    if !stage_cached(out, "report", &rp_key, &[&report_path]) {
        let stats: serde_json::Value = serde_json::from_slice(&stats_bytes)
            .map_err(|e| Error::Config(format!("stats.json: {e}")))?;
        let pricing: serde_json::Value = serde_json::from_slice(&pricing_bytes)
            .map_err(|e| Error::Config(format!("pricing.json: {e}")))?;
        let report = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": config.seed,
            "frequency": config.frequency.as_str(),
            "backtests": stats,
            "pricing": pricing,
        });
        write_text(&report_path, &serde_json::to_string_pretty(&report).unwrap())?;
        store_stage_key(out, "report", &rp_key)?;
        summary.ran_report = true;
    }

    Ok(summary)
}

/// Synthesize the daily CIV panel from the aligned dataset.
pub fn synthesize_civ(ds: &AlignedDataset, tenor: f64, grid: CivGrid) -> Result<CivPanel> {
    let cells: Vec<(usize, usize)> = (0..ds.n_dates())
        .flat_map(|di| (0..ds.n_currencies()).map(move |ci| (di, ci)))
        .filter(|&(di, ci)| ds.available(di, ci))
        .collect();
    let values: Vec<Result<(usize, usize, f64)>> = cells
        .par_iter()
        .map(|&(di, ci)| {
            let date = ds.dates[di];
            let ccy = &ds.currencies[ci];
            let vols = ds.smile_vols(date, ccy).expect("masked cell has smile");
            let rec = ds.fx(date, ccy).expect("masked cell has fx");
            let forward = rec.fwd_mid;
            let bond = 1.0 / (1.0 + rec.rate_dom * tenor);
            let smile = build_smile(vols, forward, bond, tenor, &format!("{ccy}@{date}"))?;
            let civ = compute_civ(&smile, grid).civ;
            Ok((di, ci, civ))
        })
        .collect();
    let mut panel = CivPanel::new(ds.dates.clone(), ds.currencies.clone());
    for v in values {
        let (di, ci, civ) = v?;
        panel.set(di, ci, civ);
    }
    Ok(panel)
}

/// Estimated network output for the pipeline.
pub struct NetworkOutput {
    pub measures: Vec<DirectionalMeasures>,
    pub measures_csv: String,
    pub posterior_csv: String,
    /// Per-date adjacency (point estimates) for graph export.
    pub adjacency: Vec<(NaiveDate, Vec<crate::connectedness::BandAdjacency>)>,
}

/// Median across draws, component-wise.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Estimate the TVP-VAR on every panel date and derive directional measures
/// for both modes. In draws mode, measures are posterior medians over stable
/// draws (unstable draws counted and excluded).
pub fn estimate_network(panel: &CivPanel, config: &PipelineConfig) -> Result<NetworkOutput> {
    config.bands.validate()?;
    let path = estimate_path(panel, &panel.dates, &config.qbll)?;
    let bands = config.bands;
    let absolute = config.absolute;

    struct DateOut {
        date: NaiveDate,
        measures: Vec<DirectionalMeasures>,
        adjacency: Vec<crate::connectedness::BandAdjacency>,
        spectral_radius: f64,
        alpha: f64,
        n_currencies: usize,
        unstable_draws: usize,
    }

    let outputs: Vec<Result<DateOut>> = path
        .entries
        .par_iter()
        .map(|entry| {
            let mut measures = Vec::new();
            let mut adjacency = Vec::new();
            let mut unstable = 0usize;
            for mode in NetworkMode::BOTH {
                match &entry.draws {
                    None => {
                        let adjs = fevd_adjacency(
                            entry.date,
                            &entry.point.coefficients,
                            &entry.point.sigma,
                            &bands,
                            mode,
                            &entry.currencies,
                        );
                        measures.push(directional_measures(&adjs, absolute)?);
                        adjacency.extend(adjs);
                    }
                    Some(draws) => {
                        let stable: Vec<&VarParams> = draws
                            .iter()
                            .filter(|d| d.spectral_radius() < 1.0)
                            .collect();
                        unstable = draws.len() - stable.len();
                        if stable.is_empty() {
                            let adjs = fevd_adjacency(
                                entry.date,
                                &entry.point.coefficients,
                                &entry.point.sigma,
                                &bands,
                                mode,
                                &entry.currencies,
                            );
                            measures.push(directional_measures(&adjs, absolute)?);
                            adjacency.extend(adjs);
                            continue;
                        }
                        let per_draw: Vec<DirectionalMeasures> = stable
                            .iter()
                            .map(|d| {
                                let adjs = fevd_adjacency(
                                    entry.date,
                                    &d.coefficients,
                                    &d.sigma,
                                    &bands,
                                    mode,
                                    &entry.currencies,
                                );
                                directional_measures(&adjs, absolute)
                            })
                            .collect::<Result<_>>()?;
                        let n = entry.currencies.len();
                        let mut agg = DirectionalMeasures {
                            date: entry.date,
                            mode,
                            currencies: entry.currencies.clone(),
                            from: vec![vec![0.0; n]; 4],
                            to: vec![vec![0.0; n]; 4],
                            net: vec![vec![0.0; n]; 4],
                        };
                        for b in 0..4 {
                            for ci in 0..n {
                                let mut f: Vec<f64> =
                                    per_draw.iter().map(|m| m.from[b][ci]).collect();
                                let mut t: Vec<f64> =
                                    per_draw.iter().map(|m| m.to[b][ci]).collect();
                                let mut nn: Vec<f64> =
                                    per_draw.iter().map(|m| m.net[b][ci]).collect();
                                agg.from[b][ci] = median(&mut f);
                                agg.to[b][ci] = median(&mut t);
                                agg.net[b][ci] = median(&mut nn);
                            }
                        }
                        measures.push(agg);
                        // Point adjacency still exported for graphs.
                        adjacency.extend(fevd_adjacency(
                            entry.date,
                            &entry.point.coefficients,
                            &entry.point.sigma,
                            &bands,
                            mode,
                            &entry.currencies,
                        ));
                    }
                }
            }
            Ok(DateOut {
                date: entry.date,
                measures,
                adjacency,
                spectral_radius: entry.spectral_radius,
                alpha: entry.state.alpha,
                n_currencies: entry.currencies.len(),
                unstable_draws: unstable,
            })
        })
        .collect();

    let mut measures = Vec::new();
    let mut adjacency = Vec::new();
    let mut measures_csv = String::from("date,currency,band,mode,from,to,net\n");
    let mut posterior_csv = String::from("date,n_currencies,spectral_radius,alpha,unstable_draws\n");
    for out in outputs {
        let out = out?;
        let _ = writeln!(
            posterior_csv,
            "{},{},{},{},{}",
            out.date, out.n_currencies, out.spectral_radius, out.alpha, out.unstable_draws
        );
        for m in &out.measures {
            for band in Band::ALL {
                let b = DirectionalMeasures::band_index(band);
                for (ci, ccy) in m.currencies.iter().enumerate() {
                    let _ = writeln!(
                        measures_csv,
                        "{},{},{},{},{},{},{}",
                        m.date,
                        ccy,
                        band.as_str(),
                        m.mode.as_str(),
                        m.from[b][ci],
                        m.to[b][ci],
                        m.net[b][ci]
                    );
                }
            }
        }
        measures.extend(out.measures);
        adjacency.push((out.date, out.adjacency));
    }
    Ok(NetworkOutput {
        measures,
        measures_csv,
        posterior_csv,
        adjacency,
    })
}

/// Write GraphML/DOT snapshots for the configured dates.
pub fn export_graphs(config: &PipelineConfig, network: &NetworkOutput, out: &Path) -> Result<()> {
    for date in &config.graph_dates {
        let Some((_, adjs)) = network.adjacency.iter().find(|(d, _)| d == date) else {
            continue;
        };
        for adj in adjs {
            let Some(m) = network
                .measures
                .iter()
                .find(|m| m.date == *date && m.mode == adj.mode)
            else {
                continue;
            };
            let b = DirectionalMeasures::band_index(adj.band);
            let stem = format!("graph_{}_{}_{}", date, adj.mode.as_str(), adj.band.as_str());
            crate::connectedness::export_graphml(
                adj,
                &m.net[b],
                config.graph_threshold,
                out.join(format!("{stem}.graphml")),
            )?;
            crate::connectedness::export_dot(
                adj,
                &m.net[b],
                config.graph_threshold,
                out.join(format!("{stem}.dot")),
            )?;
        }
    }
    Ok(())
}

/// Parsed network measures: (mode, band, kind) -> date -> currency -> value.
pub type MeasureTable = BTreeMap<(String, String, String), BTreeMap<NaiveDate, BTreeMap<String, f64>>>;

/// Load the `date,currency,band,mode,from,to,net` CSV.
pub fn load_measures(path: &Path) -> Result<MeasureTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut table: MeasureTable = BTreeMap::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::MalformedRow {
                line: ln + 1,
                reason: format!("expected 7 fields, found {}", f.len()),
            });
        }
        let date = NaiveDate::parse_from_str(f[0], "%Y-%m-%d").map_err(|_| Error::MalformedRow {
            line: ln + 1,
            reason: format!("bad date {:?}", f[0]),
        })?;
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::MalformedRow {
                line: ln + 1,
                reason: format!("bad number {s:?}"),
            })
        };
        let (ccy, band, mode) = (f[1].to_string(), f[2].to_string(), f[3].to_string());
        for (kind, v) in [("from", f[4]), ("to", f[5]), ("net", f[6])] {
            table
                .entry((mode.clone(), band.clone(), kind.to_string()))
                .or_default()
                .entry(date)
                .or_default()
                .insert(ccy.clone(), parse(v)?);
        }
    }
    Ok(table)
}

/// Per-strategy backtest results (serialized to stats.json).
#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub name: String,
    pub long_leg: String,
    pub gross: SummaryStats,
    pub net_of_costs: Option<SummaryStats>,
    pub quintile_stats: Vec<SummaryStats>,
    pub fx_means_annual_pct: Vec<f64>,
    pub ir_means_annual_pct: Vec<f64>,
    pub signal_means: Vec<f64>,
    pub spanning_vs_benchmarks: Option<SpanningResult>,
    pub spanning_with_dollar: Option<SpanningResult>,
    pub benchmark_correlations: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComboReport {
    pub benchmark: String,
    pub stats: SummaryStats,
    pub sharpe_gain_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub frequency: String,
    pub cost_fraction: f64,
    pub strategies: Vec<StrategyReport>,
    pub dollar: Option<SummaryStats>,
    /// 50-50 combinations of the causal net short-band strategy with each
    /// benchmark, plus the equal-weight pool.
    pub combos: Vec<ComboReport>,
    pub one_over_n: Option<ComboReport>,
    pub allocation_vs_benchmarks: BTreeMap<String, crate::strategy::AllocationReport>,
}

pub struct BacktestOutput {
    pub stats: BacktestReport,
    pub returns_csv: String,
    pub tracks: BTreeMap<String, StrategyTrack>,
    pub dollar: FactorSeries,
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        f64::NAN
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Align several (dates, values) series on their common dates.
fn align_on_dates(series: &[(&[NaiveDate], &[f64])]) -> (Vec<NaiveDate>, Vec<Vec<f64>>) {
    let mut common: Vec<NaiveDate> = series
        .first()
        .map(|(d, _)| d.to_vec())
        .unwrap_or_default();
    for (dates, _) in series.iter().skip(1) {
        common.retain(|d| dates.contains(d));
    }
    let aligned = series
        .iter()
        .map(|(dates, values)| {
            common
                .iter()
                .map(|d| {
                    let idx = dates.iter().position(|x| x == d).expect("common date");
                    values[idx]
                })
                .collect()
        })
        .collect();
    (common, aligned)
}

/// Run every configured strategy.
pub fn run_backtests(
    config: &PipelineConfig,
    surface_path: &Path,
    fx_path: &Path,
    civ_path: &Path,
    measures_path: &Path,
) -> Result<BacktestOutput> {
    let surface = load_option_surface(surface_path)?;
    let fx = load_fx_panel(fx_path)?;
    let ds = align(&surface, &fx, config.tenor)?;
    let civ = load_civ_panel(civ_path)?;
    let measures = load_measures(measures_path)?;
    let rx_panel = crate::strategy::excess_returns(&ds, config.frequency);
    let ctx = SignalContext {
        dataset: &ds,
        civ: Some(&civ),
        rx_panel: &rx_panel,
    };

    let mut tracks: BTreeMap<String, StrategyTrack> = BTreeMap::new();
    let mut net_tracks: BTreeMap<String, StrategyTrack> = BTreeMap::new();
    for spec in &config.strategies {
        let name = spec.name();
        let (assignments, long_leg) = match spec {
            StrategySpec::Benchmark(BenchmarkKind::Dol) => continue,
            StrategySpec::Benchmark(kind) => {
                let mut asg = Vec::new();
                for p in &rx_panel.periods {
                    match benchmark_signal(*kind, &ctx, p.signal_date) {
                        Ok(sig) => {
                            let universe: BTreeMap<String, f64> = sig
                                .into_iter()
                                .filter(|(c, _)| p.returns.contains_key(c))
                                .collect();
                            if let Ok(a) = sort_quintiles(&universe, p.signal_date, &name) {
                                asg.push(a);
                            }
                        }
                        Err(Error::InsufficientHistory { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                (asg, LongLeg::P1)
            }
            StrategySpec::Network {
                measure,
                mode,
                band,
            } => {
                let key = (
                    mode.as_str().to_string(),
                    band.as_str().to_string(),
                    measure.as_str().to_string(),
                );
                let by_date = measures.get(&key).ok_or_else(|| {
                    Error::Config(format!("no network measures for strategy {name}"))
                })?;
                let mut asg = Vec::new();
                for p in &rx_panel.periods {
                    let Some(sig) = by_date.get(&p.signal_date) else {
                        continue;
                    };
                    let universe: BTreeMap<String, f64> = sig
                        .iter()
                        .filter(|(c, _)| p.returns.contains_key(*c))
                        .map(|(c, v)| (c.clone(), *v))
                        .collect();
                    if let Ok(a) = sort_quintiles(&universe, p.signal_date, &name) {
                        asg.push(a);
                    }
                }
                (asg, LongLeg::P5)
            }
        };
        let track = long_short_returns(&assignments, &rx_panel, long_leg, &name);
        if config.cost_fraction > 0.0 {
            let net = apply_transaction_costs(
                &track,
                &ds,
                &rx_panel,
                CostModel {
                    spread_fraction: config.cost_fraction,
                },
            )?;
            net_tracks.insert(name.clone(), net);
        }
        tracks.insert(name, track);
    }
    let dollar = dollar_factor(&rx_panel);

    // Assemble the report.
    let freq = config.frequency;
    let a_year = freq.periods_per_year();
    let benchmark_names: Vec<String> = ["car", "vol", "vrp", "mom"]
        .iter()
        .filter(|n| tracks.contains_key(**n))
        .map(|n| n.to_string())
        .collect();

    let mut strategies = Vec::new();
    for (name, track) in &tracks {
        let gross = performance_stats(&track.long_short, freq);
        let gross = match gross {
            Ok(g) => g,
            Err(Error::TooShort { .. }) | Err(Error::DegenerateSeries) => continue,
            Err(e) => return Err(e),
        };
        let quintile_stats: Vec<SummaryStats> = track
            .quintile_returns
            .iter()
            .filter_map(|q| performance_stats(q, freq).ok())
            .collect();
        let net_of_costs = net_tracks
            .get(name)
            .and_then(|t| performance_stats(&t.long_short, freq).ok());

        // Spanning regressions against the benchmarks (exclude self).
        let mut spanning_vs_benchmarks = None;
        let mut spanning_with_dollar = None;
        let mut benchmark_correlations = BTreeMap::new();
        let mut factor_list: Vec<(&str, &StrategyTrack)> = Vec::new();
        for bn in &benchmark_names {
            if bn != name {
                factor_list.push((bn.as_str(), &tracks[bn]));
            }
        }
        if !factor_list.is_empty() {
            let mut series: Vec<(&[NaiveDate], &[f64])> =
                vec![(&track.realize_dates, &track.long_short)];
            for (_, t) in &factor_list {
                series.push((&t.realize_dates, &t.long_short));
            }
            series.push((&dollar.dates, &dollar.values));
            let (_, aligned) = align_on_dates(&series);
            if aligned[0].len() >= 24 {
                let y = &aligned[0];
                let names: Vec<&str> = factor_list.iter().map(|(n, _)| *n).collect();
                let mut fs: Vec<(&str, &[f64])> = names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (*n, aligned[i + 1].as_slice()))
                    .collect();
                spanning_vs_benchmarks = spanning_regression(y, &fs, freq).ok();
                for (i, n) in names.iter().enumerate() {
                    benchmark_correlations.insert(n.to_string(), corr(y, &aligned[i + 1]));
                }
                let dol_slice = aligned.last().unwrap().as_slice();
                benchmark_correlations.insert("dol".into(), corr(y, dol_slice));
                fs.insert(0, ("dol", dol_slice));
                spanning_with_dollar = spanning_regression(y, &fs, freq).ok();
            }
        }

        strategies.push(StrategyReport {
            name: name.clone(),
            long_leg: match track.long_leg {
                LongLeg::P5 => "P5".into(),
                LongLeg::P1 => "P1".into(),
            },
            gross,
            net_of_costs,
            quintile_stats,
            fx_means_annual_pct: track.fx_means.iter().map(|v| v * a_year * 100.0).collect(),
            ir_means_annual_pct: track.ir_means.iter().map(|v| v * a_year * 100.0).collect(),
            signal_means: track.signal_means.to_vec(),
            spanning_vs_benchmarks,
            spanning_with_dollar,
            benchmark_correlations,
        });
    }

    // Diversification combos: causal net short-band strategy + benchmarks.
    let anchor_name = "net-causal-S";
    let mut combos = Vec::new();
    let mut one_over_n = None;
    let mut allocation_vs_benchmarks = BTreeMap::new();
    if let Some(anchor) = tracks.get(anchor_name) {
        for bn in &benchmark_names {
            let bench = &tracks[bn];
            let (_, aligned) = align_on_dates(&[
                (&anchor.realize_dates, &anchor.long_short),
                (&bench.realize_dates, &bench.long_short),
            ]);
            if aligned[0].len() < 24 {
                continue;
            }
            let combo = combine_portfolios(
                &[aligned[0].as_slice(), aligned[1].as_slice()],
                &[0.5, 0.5],
            )?;
            if let (Ok(stats), Ok(bench_stats)) = (
                performance_stats(&combo, freq),
                performance_stats(&aligned[1], freq),
            ) {
                let gain = if bench_stats.ann_sharpe != 0.0 {
                    (stats.ann_sharpe / bench_stats.ann_sharpe - 1.0) * 100.0
                } else {
                    f64::NAN
                };
                combos.push(ComboReport {
                    benchmark: bn.clone(),
                    stats,
                    sharpe_gain_pct: gain,
                });
            }
            allocation_vs_benchmarks.insert(bn.clone(), allocation_report(anchor, bench));
        }
        // Equal-weight pool of the anchor and all benchmarks.
        let mut series: Vec<(&[NaiveDate], &[f64])> =
            vec![(&anchor.realize_dates, &anchor.long_short)];
        for bn in &benchmark_names {
            series.push((&tracks[bn].realize_dates, &tracks[bn].long_short));
        }
        let (_, aligned) = align_on_dates(&series);
        if aligned[0].len() >= 24 {
            let slices: Vec<&[f64]> = aligned.iter().map(|v| v.as_slice()).collect();
            let w = vec![1.0 / slices.len() as f64; slices.len()];
            let pooled = combine_portfolios(&slices, &w)?;
            if let Ok(stats) = performance_stats(&pooled, freq) {
                one_over_n = Some(ComboReport {
                    benchmark: "1/N".into(),
                    stats,
                    sharpe_gain_pct: f64::NAN,
                });
            }
        }
    }

    // Per-strategy return series CSV (gross and net LS plus quintiles).
    let mut returns_csv = String::from("strategy,date,p1,p2,p3,p4,p5,long_short,long_short_net\n");
    for (name, track) in &tracks {
        let net = net_tracks.get(name);
        for (i, date) in track.realize_dates.iter().enumerate() {
            let net_v = net
                .map(|t| t.long_short[i].to_string())
                .unwrap_or_default();
            let _ = writeln!(
                returns_csv,
                "{name},{date},{},{},{},{},{},{},{net_v}",
                track.quintile_returns[0][i],
                track.quintile_returns[1][i],
                track.quintile_returns[2][i],
                track.quintile_returns[3][i],
                track.quintile_returns[4][i],
                track.long_short[i],
            );
        }
    }
    for (i, date) in dollar.dates.iter().enumerate() {
        let _ = writeln!(returns_csv, "dol,{date},,,,,,{},", dollar.values[i]);
    }

    let stats = BacktestReport {
        frequency: freq.as_str().to_string(),
        cost_fraction: config.cost_fraction,
        strategies,
        dollar: performance_stats(&dollar.values, freq).ok(),
        combos,
        one_over_n,
        allocation_vs_benchmarks,
    };
    Ok(BacktestOutput {
        stats,
        returns_csv,
        tracks,
        dollar,
    })
}

/// One SDF battery row (Table-style output).
#[derive(Debug, Clone, Serialize)]
pub struct SdfRow {
    pub factors: Vec<String>,
    pub b: Vec<f64>,
    pub b_t: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_t: Vec<f64>,
    pub r_squared_pct: f64,
    pub rmse_pct: f64,
    pub hj_distance: f64,
    pub hj_p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossSectionPricing {
    pub mode: String,
    pub portfolio_names: Vec<String>,
    pub models: Vec<SdfRow>,
    pub pca: PcaResult,
    pub factor_betas_two: Vec<BetaRegression>,
    pub factor_betas_three: Vec<BetaRegression>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PricingReport {
    pub cross_sections: Vec<CrossSectionPricing>,
}

/// Per-strategy (dates, [p1..p5, long_short] rows) parsed from the returns CSV.
type StrategyReturnRows = BTreeMap<String, (Vec<NaiveDate>, Vec<[f64; 6]>)>;

/// Parse the strategy returns CSV back into per-strategy series.
fn load_returns_csv(path: &Path) -> Result<StrategyReturnRows> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out: StrategyReturnRows = BTreeMap::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::MalformedRow {
                line: ln + 1,
                reason: format!("expected 9 fields, found {}", f.len()),
            });
        }
        let date = NaiveDate::parse_from_str(f[1], "%Y-%m-%d").map_err(|_| Error::MalformedRow {
            line: ln + 1,
            reason: format!("bad date {:?}", f[1]),
        })?;
        let mut row = [f64::NAN; 6];
        for (i, s) in f[2..8].iter().enumerate() {
            if !s.is_empty() {
                row[i] = s.parse().map_err(|_| Error::MalformedRow {
                    line: ln + 1,
                    reason: format!("bad number {s:?}"),
                })?;
            }
        }
        let entry = out.entry(f[0].to_string()).or_default();
        entry.0.push(date);
        entry.1.push(row);
    }
    Ok(out)
}

/// Price the short-band net-directional cross-sections.
pub fn run_pricing(config: &PipelineConfig, returns_path: &Path) -> Result<PricingReport> {
    let returns = load_returns_csv(returns_path)?;
    let get = |name: &str| -> Result<&(Vec<NaiveDate>, Vec<[f64; 6]>)> {
        returns
            .get(name)
            .ok_or_else(|| Error::Config(format!("pricing needs strategy {name} in the backtest")))
    };
    let mut cross_sections = Vec::new();
    for mode in &config.pricing_modes {
        let cs_name = format!("net-{}-S", mode.as_str());
        let (cs_dates, cs_rows) = get(&cs_name)?;
        let dol = get("dol")?;

        // Factor pool: dol, benchmarks, and the cross-section's own LS.
        let mut factor_pool: BTreeMap<String, (&[NaiveDate], Vec<f64>)> = BTreeMap::new();
        factor_pool.insert(
            "dol".into(),
            (&dol.0, dol.1.iter().map(|r| r[5]).collect()),
        );
        for bn in ["car", "vol", "vrp", "mom"] {
            if let Ok((d, rows)) = get(bn) {
                factor_pool.insert(bn.into(), (d, rows.iter().map(|r| r[5]).collect()));
            }
        }
        factor_pool.insert(
            "net".into(),
            (cs_dates, cs_rows.iter().map(|r| r[5]).collect()),
        );

        // Align the quintile matrix with every factor in the pool.
        let mut series: Vec<(&[NaiveDate], &[f64])> = Vec::new();
        let q_cols: Vec<Vec<f64>> = (0..5)
            .map(|q| cs_rows.iter().map(|r| r[q]).collect())
            .collect();
        for q in &q_cols {
            series.push((cs_dates, q));
        }
        let pool_names: Vec<String> = factor_pool.keys().cloned().collect();
        for name in &pool_names {
            let (d, v) = &factor_pool[name];
            series.push((d, v.as_slice()));
        }
        let (common_dates, aligned) = align_on_dates(&series);
        let t_len = common_dates.len();
        if t_len < 24 {
            return Err(Error::TooShort { n: t_len, min: 24 });
        }
        let rx = DMatrix::from_fn(t_len, 5, |i, j| aligned[j][i]);
        let factor_series: BTreeMap<String, Vec<f64>> = pool_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), aligned[5 + i].clone()))
            .collect();

        let mut models = Vec::new();
        for battery in &config.models {
            let mut names = Vec::new();
            let mut cols = Vec::new();
            let mut ok = true;
            for f in battery {
                match factor_series.get(f) {
                    Some(v) => {
                        names.push(f.clone());
                        cols.push(v.clone());
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let fmat = DMatrix::from_fn(t_len, cols.len(), |i, j| cols[j][i]);
            let model = asset_pricing::gmm_estimate(&rx, &fmat, &names)?;
            let stats: FitStats =
                asset_pricing::fit_stats(&model, false, config.hj_sims, config.seed)?;
            models.push(SdfRow {
                factors: names,
                b: model.b.clone(),
                b_t: model.b_t_stats.clone(),
                lambda: model.lambda.clone(),
                lambda_t: model.lambda_t_stats.clone(),
                r_squared_pct: stats.r_squared_pct,
                rmse_pct: stats.rmse_pct,
                hj_distance: stats.hj_distance,
                hj_p_value: stats.hj_p_value,
            });
        }

        let aux: Vec<(&str, &[f64])> = pool_names
            .iter()
            .map(|n| (n.as_str(), factor_series[n].as_slice()))
            .collect();
        let pca = asset_pricing::pca_decomposition(&rx, &aux);

        let portfolio_names: Vec<String> = (1..=5).map(|i| format!("P{i}")).collect();
        let two = DMatrix::from_fn(t_len, 2, |i, j| {
            factor_series[if j == 0 { "dol" } else { "net" }][i]
        });
        let factor_betas_two = asset_pricing::factor_betas(
            &rx,
            &portfolio_names,
            &two,
            &["dol".into(), "net".into()],
            config.frequency,
        )?;
        let factor_betas_three = if factor_series.contains_key("car") {
            let three = DMatrix::from_fn(t_len, 3, |i, j| {
                factor_series[match j {
                    0 => "dol",
                    1 => "car",
                    _ => "net",
                }][i]
            });
            asset_pricing::factor_betas(
                &rx,
                &portfolio_names,
                &three,
                &["dol".into(), "car".into(), "net".into()],
                config.frequency,
            )?
        } else {
            Vec::new()
        };

        cross_sections.push(CrossSectionPricing {
            mode: mode.as_str().to_string(),
            portfolio_names,
            models,
            pca,
            factor_betas_two,
            factor_betas_three,
        });
    }
    Ok(PricingReport { cross_sections })
}
