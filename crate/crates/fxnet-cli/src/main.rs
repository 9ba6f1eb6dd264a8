//! `fxnet` command line: run the currency-network pipeline end to end or
//! drive individual stages.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use fxnet::connectedness::{Band, NetworkMode};
use fxnet::error::Error;
use fxnet::market_data::{align, load_fx_panel, load_option_surface, Frequency};
use fxnet::panel::{load_civ_panel, save_civ_panel};
use fxnet::pipeline::{self, PipelineConfig, StrategySpec};
use fxnet::synthetic::SyntheticConfig;

#[derive(Parser)]
#[command(
    name = "fxnet",
    version,
    about = "Option-implied FX volatility networks: estimation, backtests, pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            if let Some(gen) = config.generate.as_mut() {
                gen.seed = seed;
            }
        }
        if self.threads > 0 {
            config.threads = self.threads;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic option/FX panels with planted structure.
    GenData {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for surface.csv, fx.csv, truth.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        currencies: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
    },
    /// Synthesize model-free implied variances from quoted smiles.
    SynthIv {
        /// Option surface CSV (date,currency,tenor,bucket,vol).
        #[arg(long = "in")]
        input: PathBuf,
        /// FX panel CSV.
        #[arg(long)]
        fx: PathBuf,
        /// Output CSV (date,currency,civ).
        #[arg(long, default_value = "civ.csv")]
        out: PathBuf,
        /// Tenor in years.
        #[arg(long, default_value_t = fxnet::market_data::ONE_MONTH)]
        tenor: f64,
        /// Integration grid size.
        #[arg(long, default_value_t = 2000)]
        n_grid: usize,
    },
    /// Estimate the time-varying network from a CIV panel.
    EstimateNetwork {
        #[command(flatten)]
        common: ConfigArgs,
        /// CIV panel (date,currency,civ); defaults to <out>/civ.csv.
        #[arg(long)]
        civ: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit raw (absolute) shares instead of within-band normalized ones.
        #[arg(long)]
        absolute: bool,
        /// Export GraphML/DOT networks for these dates (repeatable).
        #[arg(long = "graph-date")]
        graph_dates: Vec<NaiveDate>,
        /// Minimum edge weight drawn in exported graphs.
        #[arg(long)]
        graph_threshold: Option<f64>,
    },
    /// Backtest network and benchmark strategies.
    Backtest {
        #[command(flatten)]
        common: ConfigArgs,
        /// Run a single signal instead of the configured list:
        /// net|to|from (network) or dol|car|vol|vrp|mom.
        #[arg(long)]
        signal: Option<String>,
        /// Network mode for --signal.
        #[arg(long, default_value = "causal")]
        mode: String,
        /// Horizon band for --signal.
        #[arg(long, default_value = "S")]
        band: String,
        /// Rebalancing frequency d|w|m.
        #[arg(long)]
        freq: Option<String>,
        /// Cost fraction of the quoted half-spread (0, 0.25, 0.5, 1.0).
        #[arg(long)]
        costs: Option<f64>,
    },
    /// Cross-sectional SDF pricing tests on portfolio/factor CSVs.
    Price {
        /// Test portfolio returns: date,<name>,… wide CSV.
        #[arg(long)]
        portfolios: PathBuf,
        /// Factor returns: date,<name>,… wide CSV.
        #[arg(long)]
        factors: PathBuf,
        /// Model file: one battery per line, factors joined by '+'.
        #[arg(long)]
        models: PathBuf,
        /// Output JSON path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        hj_sims: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Demean the cross-sectional R-squared denominator.
        #[arg(long)]
        r2_demeaned: bool,
    },
    /// Rebuild the merged report from existing stage outputs.
    Report {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run every stage with caching.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            common,
            out,
            currencies,
            days,
        } => {
            let config = common.load()?;
            let mut gen = config.generate.unwrap_or_else(|| SyntheticConfig {
                seed: config.seed,
                ..Default::default()
            });
            if let Some(n) = currencies {
                gen.n_currencies = n;
            }
            if let Some(t) = days {
                gen.n_days = t;
            }
            std::fs::create_dir_all(&out).map_err(io_err(&out))?;
            fxnet::synthetic::write_files(
                &gen,
                out.join("surface.csv"),
                out.join("fx.csv"),
                out.join("truth.json"),
            )?;
            println!(
                "wrote surface.csv, fx.csv, truth.json ({} currencies x {} days, seed {}) to {}",
                gen.n_currencies,
                gen.n_days,
                gen.seed,
                out.display()
            );
            Ok(())
        }
        Command::SynthIv {
            input,
            fx,
            out,
            tenor,
            n_grid,
        } => {
            let surface = load_option_surface(&input)?;
            let fx_records = load_fx_panel(&fx)?;
            let ds = align(&surface, &fx_records, tenor)?;
            let grid = fxnet::implied_variance::CivGrid {
                n_grid,
                ..Default::default()
            };
            let panel = pipeline::synthesize_civ(&ds, tenor, grid)?;
            save_civ_panel(&panel, &out)?;
            println!(
                "wrote {} ({} dates x {} currencies)",
                out.display(),
                panel.n_dates(),
                panel.n_currencies()
            );
            Ok(())
        }
        Command::EstimateNetwork {
            common,
            civ,
            out,
            absolute,
            graph_dates,
            graph_threshold,
        } => {
            let mut config = common.load()?;
            if let Some(dir) = out {
                config.out_dir = dir;
            }
            if absolute {
                config.absolute = true;
            }
            if !graph_dates.is_empty() {
                config.graph_dates = graph_dates;
            }
            if let Some(th) = graph_threshold {
                config.graph_threshold = th;
            }
            let civ_path = civ.unwrap_or_else(|| config.out_dir.join("civ.csv"));
            let panel = load_civ_panel(&civ_path)?;
            let network = pipeline::estimate_network(&panel, &config)?;
            std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
            let measures = config.out_dir.join("network_measures.csv");
            std::fs::write(&measures, &network.measures_csv).map_err(io_err(&measures))?;
            let posterior = config.out_dir.join(format!(
                "posterior_summary_{}.csv",
                pipeline::network_config_hash(&config)
            ));
            std::fs::write(&posterior, &network.posterior_csv).map_err(io_err(&posterior))?;
            pipeline::export_graphs(&config, &network, &config.out_dir)?;
            println!("wrote {} and {}", measures.display(), posterior.display());
            Ok(())
        }
        Command::Backtest {
            common,
            signal,
            mode,
            band,
            freq,
            costs,
        } => {
            let mut config = common.load()?;
            if let Some(f) = freq {
                config.frequency =
                    Frequency::parse(&f).ok_or_else(|| Error::Config(format!("bad freq {f:?}")))?;
            }
            if let Some(c) = costs {
                config.cost_fraction = c;
            }
            if let Some(sig) = signal {
                let spec = if let Ok(spec) = StrategySpec::parse(&sig) {
                    spec
                } else {
                    let m = NetworkMode::parse(&mode)
                        .ok_or_else(|| Error::Config(format!("bad mode {mode:?}")))?;
                    let b = Band::parse(&band)
                        .ok_or_else(|| Error::Config(format!("bad band {band:?}")))?;
                    StrategySpec::parse(&format!("{sig}:{}:{}", m.as_str(), b.as_str()))?
                };
                config.strategies = vec![spec];
            }
            let out = config.out_dir.clone();
            let surface = out.join("surface.csv");
            let fx = out.join("fx.csv");
            let civ = out.join("civ.csv");
            let measures = out.join("network_measures.csv");
            for p in [&surface, &fx, &civ, &measures] {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{} missing; run `fxnet run --config …` (or the earlier stages) first",
                        p.display()
                    )));
                }
            }
            let bt = pipeline::run_backtests(&config, &surface, &fx, &civ, &measures)?;
            let stats_path = out.join("stats.json");
            std::fs::write(
                &stats_path,
                serde_json::to_string_pretty(&bt.stats).expect("stats serialize"),
            )
            .map_err(io_err(&stats_path))?;
            let returns_path = out.join("strategy_returns.csv");
            std::fs::write(&returns_path, &bt.returns_csv).map_err(io_err(&returns_path))?;
            println!(
                "wrote {} and {}",
                stats_path.display(),
                returns_path.display()
            );
            Ok(())
        }
        Command::Price {
            portfolios,
            factors,
            models,
            out,
            hj_sims,
            seed,
            r2_demeaned,
        } => {
            let report = price_files(&portfolios, &factors, &models, hj_sims, seed, r2_demeaned)?;
            let json = serde_json::to_string_pretty(&report).expect("report serialize");
            match out {
                Some(path) => {
                    std::fs::write(&path, json).map_err(io_err(&path))?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Report { common } => {
            let config = common.load()?;
            let summary = pipeline::run(&config)?;
            println!("report at {}", summary.out_dir.join("report.json").display());
            Ok(())
        }
        Command::Run { common } => {
            let config = common.load()?;
            let summary = pipeline::run(&config)?;
            let stage = |ran: bool| if ran { "ran" } else { "cached" };
            println!(
                "generate: {}, civ: {}, network: {}, backtest: {}, pricing: {}, report: {}",
                stage(summary.ran_generate),
                stage(summary.ran_civ),
                stage(summary.ran_network),
                stage(summary.ran_backtest),
                stage(summary.ran_pricing),
                stage(summary.ran_report)
            );
            println!("artifacts in {}", summary.out_dir.display());
            Ok(())
        }
    }
}

/// Columns of a wide CSV: (names, dates, per-name value columns).
type WideCsv = (Vec<String>, Vec<NaiveDate>, Vec<Vec<f64>>);

/// Wide CSV: `date,<name>,<name>,…`.
fn load_wide_csv(path: &PathBuf) -> Result<WideCsv, Error> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyFile(path.display().to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "date" {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "expected header date,<name>,…".into(),
        });
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.trim().to_string()).collect();
    let mut dates = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != names.len() + 1 {
            return Err(Error::MalformedRow {
                line: ln + 1,
                reason: format!("expected {} fields", names.len() + 1),
            });
        }
        dates.push(
            NaiveDate::parse_from_str(f[0], "%Y-%m-%d").map_err(|_| Error::MalformedRow {
                line: ln + 1,
                reason: format!("bad date {:?}", f[0]),
            })?,
        );
        for (j, s) in f[1..].iter().enumerate() {
            values[j].push(s.parse().map_err(|_| Error::MalformedRow {
                line: ln + 1,
                reason: format!("bad number {s:?}"),
            })?);
        }
    }
    Ok((names, dates, values))
}

fn price_files(
    portfolios: &PathBuf,
    factors: &PathBuf,
    models: &PathBuf,
    hj_sims: usize,
    seed: u64,
    r2_demeaned: bool,
) -> Result<serde_json::Value, Error> {
    let (p_names, p_dates, p_cols) = load_wide_csv(portfolios)?;
    let (f_names, f_dates, f_cols) = load_wide_csv(factors)?;
    let common: Vec<NaiveDate> = p_dates
        .iter()
        .copied()
        .filter(|d| f_dates.contains(d))
        .collect();
    let pick = |dates: &[NaiveDate], col: &[f64]| -> Vec<f64> {
        common
            .iter()
            .map(|d| col[dates.iter().position(|x| x == d).unwrap()])
            .collect()
    };
    let t_len = common.len();
    let rx =
        nalgebra::DMatrix::from_fn(t_len, p_names.len(), |i, j| pick(&p_dates, &p_cols[j])[i]);
    let factor_map: BTreeMap<String, Vec<f64>> = f_names
        .iter()
        .enumerate()
        .map(|(j, n)| (n.clone(), pick(&f_dates, &f_cols[j])))
        .collect();

    let model_text = std::fs::read_to_string(models).map_err(io_err(models))?;
    let mut rows = Vec::new();
    for line in model_text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let names: Vec<String> = line.split('+').map(|s| s.trim().to_string()).collect();
        let mut cols = Vec::new();
        for n in &names {
            cols.push(factor_map.get(n).ok_or_else(|| {
                Error::Config(format!("model factor {n:?} not in the factors CSV"))
            })?);
        }
        let fmat = nalgebra::DMatrix::from_fn(t_len, cols.len(), |i, j| cols[j][i]);
        let model = fxnet::asset_pricing::gmm_estimate(&rx, &fmat, &names)?;
        let stats = fxnet::asset_pricing::fit_stats(&model, r2_demeaned, hj_sims, seed)?;
        rows.push(serde_json::json!({
            "factors": names,
            "b": model.b,
            "t_b": model.b_t_stats,
            "lambda": model.lambda,
            "t_lambda": model.lambda_t_stats,
            "r2_pct": stats.r_squared_pct,
            "rmse_pct": stats.rmse_pct,
            "hj_dist": stats.hj_distance,
            "hj_p": stats.hj_p_value,
        }));
    }
    Ok(serde_json::json!({
        "portfolios": p_names,
        "n_obs": t_len,
        "models": rows,
    }))
}
