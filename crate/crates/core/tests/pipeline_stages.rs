//! Pipeline-level behavior that the acceptance suite does not pin down:
//! artifact layout, stage-tagged failures, and config handling.

mod common;

use bems_core::error::Error;
use bems_core::pipeline::{run_pipeline, AgentConfig, CorpusConfig, ForecasterConfig, RunConfig, ScenarioConfig};

fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        corpus: CorpusConfig {
            n_buildings: 8,
            hours: 480,
            archetypes: 3,
            ..Default::default()
        },
        forecaster: ForecasterConfig {
            enabled: false,
            ..Default::default()
        },
        agent: AgentConfig {
            episodes: 3,
            episode_hours: 240,
            normalization_steps: 1000,
            minibatch_size: 128,
            ..Default::default()
        },
        scenarios: ScenarioConfig {
            count: 1,
            ..Default::default()
        },
        classify_window_hours: 96,
        ..Default::default()
    }
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(909);
    let artifacts = run_pipeline::<f64>(&config, dir.path()).unwrap();

    for name in [
        "config.json",
        "tariff_nominal.csv",
        "distance_matrix.csv",
        "dendrogram.json",
        "dendrogram.svg",
        "silhouette.csv",
        "inconsistency.csv",
        "cluster_model.json",
        "assignments.csv",
        "cluster_profiles.svg",
        "classification.csv",
        "trace_trained.csv",
        "trace_trained.svg",
        "evaluation.csv",
        "evaluation.json",
        "table_policies.csv",
        "table_scenarios.csv",
        "normalized_costs.svg",
        "scenarios/sc00.csv",
        "scenarios/sc00.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    for c in 0..config.w {
        assert!(dir
            .path()
            .join(format!("policy_cluster{c}.json"))
            .is_file());
        assert!(dir
            .path()
            .join(format!("learning_curve_cluster{c}.csv"))
            .is_file());
    }
    // one corpus csv per building
    let corpus_files = std::fs::read_dir(dir.path().join("corpus")).unwrap().count();
    assert_eq!(corpus_files, config.corpus.n_buildings);

    // rows: held-out buildings x (4 nominal policies + scenarios)
    let held = config.corpus.n_buildings.div_ceil(config.holdout_every);
    assert_eq!(artifacts.rows.len(), held * 4 + held * config.scenarios.count);

    // forecaster disabled: no forecast artifacts
    assert!(!dir.path().join("forecast_report.csv").exists());
}

#[test]
fn failures_carry_stage_tags() {
    let dir = tempfile::tempdir().unwrap();

    // unloadable corpus directory fails in the synthesize stage
    let empty = tempfile::tempdir().unwrap();
    let mut config = small_config(1);
    config.corpus.data_dir = Some(empty.path().display().to_string());
    let err = run_pipeline::<f64>(&config, dir.path()).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "synthesize"),
        other => panic!("expected stage-tagged error, got {other}"),
    }

    // a tariff that cannot cover the horizon also fails in synthesize
    let short_tariff = dir.path().join("short.csv");
    std::fs::write(
        &short_tariff,
        "price_usd_per_kwh,carbon_cost_per_kwh\n0.1,0.05\n0.1,0.05\n",
    )
    .unwrap();
    let mut config = small_config(2);
    config.tariff.csv_path = Some(short_tariff.display().to_string());
    let err = run_pipeline::<f64>(&config, dir.path()).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("synthesize"), "unexpected error {text}");
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut config = small_config(3);
    config.w = 0;
    assert!(matches!(config.validate(), Err(Error::Config(_))));

    let mut config = small_config(4);
    config.corpus.data_dir = Some("/definitely/not/a/dir".into());
    assert!(config.validate().is_err());
}
