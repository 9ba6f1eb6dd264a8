//! Stage-cache behavior: reruns hit every cache, a cost-only change
//! recomputes only the backtest and report, and deleting a mid-pipeline
//! artifact recomputes that stage without touching upstream ones.

use fxnet::connectedness::NetworkMode;
use fxnet::market_data::Frequency;
use fxnet::pipeline::{run, PipelineConfig, StrategySpec};
use fxnet::synthetic::SyntheticConfig;

fn small_config(out_dir: std::path::PathBuf, cost: f64) -> PipelineConfig {
    PipelineConfig {
        generate: Some(SyntheticConfig {
            n_currencies: 6,
            n_days: 700,
            seed: 21,
            ..Default::default()
        }),
        frequency: Frequency::Monthly,
        cost_fraction: cost,
        strategies: vec![StrategySpec::parse("net:causal:S").unwrap()],
        models: vec![vec!["dol".into(), "net".into()]],
        pricing_modes: vec![NetworkMode::Causal],
        hj_sims: 500,
        out_dir,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn cache_isolation_across_config_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    // First run computes everything.
    let s1 = run(&small_config(out.clone(), 0.5)).unwrap();
    assert!(s1.ran_generate && s1.ran_civ && s1.ran_network && s1.ran_backtest);
    assert!(s1.ran_pricing && s1.ran_report);

    // Identical config: every stage cached.
    let s2 = run(&small_config(out.clone(), 0.5)).unwrap();
    assert!(!s2.ran_generate && !s2.ran_civ && !s2.ran_network);
    assert!(!s2.ran_backtest && !s2.ran_pricing && !s2.ran_report);

    // Cost-only change: upstream cached, backtest + report recompute,
    // pricing (gross-based) stays cached.
    let s3 = run(&small_config(out.clone(), 0.25)).unwrap();
    assert!(!s3.ran_generate && !s3.ran_civ && !s3.ran_network);
    assert!(s3.ran_backtest, "backtest must recompute on a cost change");
    assert!(!s3.ran_pricing, "pricing keys on gross series only");
    assert!(s3.ran_report, "report must pick up the new stats");

    // Deleting a mid-pipeline artifact recomputes that stage only;
    // upstream stays cached and downstream is reproduced or reused.
    std::fs::remove_file(out.join("network_measures.csv")).unwrap();
    let s4 = run(&small_config(out.clone(), 0.25)).unwrap();
    assert!(!s4.ran_generate && !s4.ran_civ, "upstream must stay cached");
    assert!(s4.ran_network, "deleted stage must recompute");
    assert!(
        !s4.ran_backtest && !s4.ran_pricing && !s4.ran_report,
        "identical recomputed bytes keep downstream cached"
    );
}
