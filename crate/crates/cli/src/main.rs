//! Command-line harness for the bems pipeline.
//!
//! Stage subcommands rebuild their inputs deterministically from the config
//! (the corpus and split are seed-determined), so they can run standalone;
//! `pipeline` chains everything.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bems_core::classify::{assign_cluster, dissimilarity_vector, Metric};
use bems_core::data::load_building_csv;
use bems_core::pipeline::{
    classify_stage, cluster_stage, evaluate_stage, forecast_stage, holdout_mask, run_pipeline,
    synthesize_stage, train_stage, Forecasters, RunConfig,
};
use bems_core::report::emit_report;
use bems_core::{ClusterModel, EvaluationRow, PolicyBundle, Real};

#[derive(Parser)]
#[command(
    name = "bems",
    about = "Cluster building load profiles, train masked storage-control policies per cluster, and evaluate them under nominal and stochastic tariffs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or re-export) the building corpus and nominal tariff.
    Synthesize(Common),
    /// Build the distance matrix, dendrogram, and cluster model.
    Cluster(Common),
    /// Map a building CSV onto a saved cluster model.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Building CSV to classify.
        #[arg(long)]
        building: PathBuf,
        /// Saved cluster model (defaults to <out-dir>/cluster_model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dissimilarity metric: dtw or euclidean.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Train per-cluster policies (runs the pipeline up to training).
    Train(Common),
    /// Evaluate saved policies on held-out buildings and scenarios.
    Evaluate(Common),
    /// Write perturbed tariff scenario files.
    Tariffs(Common),
    /// Run every stage end to end.
    Pipeline(Common),
    /// Re-emit report tables from <out-dir>/evaluation.json.
    Report(Common),
}

fn load_config(common: &Common) -> Result<RunConfig, bems_core::Error> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

type CoreResult<T> = Result<T, bems_core::Error>;
type Corpus = Vec<(bems_core::BuildingSpec, Option<usize>)>;

fn prepared(
    config: &RunConfig,
    out_dir: &Path,
) -> CoreResult<(Corpus, bems_core::TariffSchedule)> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| bems_core::Error::io(out_dir.display().to_string(), e))?;
    synthesize_stage::<Real>(config, out_dir)
}

fn split(config: &RunConfig, corpus: &Corpus) -> (Vec<usize>, Vec<usize>) {
    let mask = holdout_mask(config, corpus.len());
    let train = (0..corpus.len()).filter(|&i| !mask[i]).collect();
    let held = (0..corpus.len()).filter(|&i| mask[i]).collect();
    (train, held)
}

fn run(cli: Cli) -> CoreResult<()> {
    match cli.command {
        Command::Synthesize(common) => {
            let config = load_config(&common)?;
            let (corpus, tariff) = prepared(&config, &common.out_dir)?;
            println!(
                "wrote {} buildings ({} hours each) and a {}-hour tariff under {}",
                corpus.len(),
                corpus[0].0.horizon(),
                tariff.len(),
                common.out_dir.display()
            );
            Ok(())
        }
        Command::Cluster(common) => {
            let config = load_config(&common)?;
            let (corpus, _) = prepared(&config, &common.out_dir)?;
            let (train_idx, _) = split(&config, &corpus);
            let train: Vec<&bems_core::BuildingSpec> =
                train_idx.iter().map(|&i| &corpus[i].0).collect();
            let model = cluster_stage(&config, &common.out_dir, &train)?;
            println!(
                "clustered {} buildings into w={} groups; model at {}",
                train.len(),
                model.w,
                common.out_dir.join("cluster_model.json").display()
            );
            Ok(())
        }
        Command::Classify {
            common,
            building,
            model,
            metric,
        } => {
            let config = load_config(&common)?;
            let model_path = model.unwrap_or_else(|| common.out_dir.join("cluster_model.json"));
            let model: ClusterModel = ClusterModel::load(&model_path)?;
            let spec: bems_core::BuildingSpec = load_building_csv(&building)?;
            let metric = match metric.as_deref() {
                None => config.classify_metric,
                Some("dtw") => Metric::Dtw,
                Some("euclidean") => Metric::Euclidean,
                Some(other) => {
                    return Err(bems_core::Error::Config(format!(
                        "unknown metric {other:?} (expected dtw or euclidean)"
                    )))
                }
            };
            let window_len = config.classify_window_hours.min(spec.load.len()).max(2);
            let window = spec.load.slice_window(0, window_len)?;
            let v = dissimilarity_vector(&window, &model, metric)?;
            let cluster = assign_cluster(&v);
            println!("cluster: {cluster}");
            println!(
                "dissimilarity: [{}]",
                v.values
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "policy: {}",
                common
                    .out_dir
                    .join(format!("policy_cluster{cluster}.json"))
                    .display()
            );
            Ok(())
        }
        Command::Train(common) => {
            let config = load_config(&common)?;
            let (corpus, tariff) = prepared(&config, &common.out_dir)?;
            let (train_idx, _) = split(&config, &corpus);
            let train: Vec<&bems_core::BuildingSpec> =
                train_idx.iter().map(|&i| &corpus[i].0).collect();
            let model = cluster_stage(&config, &common.out_dir, &train)?;
            let forecasters = forecast_stage(&config, &common.out_dir, &train, &tariff)?;
            let bundles = train_stage(
                &config,
                &common.out_dir,
                &model,
                &train,
                &tariff,
                forecasters.as_ref(),
            )?;
            println!("trained {} cluster policies", bundles.len());
            Ok(())
        }
        Command::Evaluate(common) => {
            let config = load_config(&common)?;
            let (corpus, tariff) = prepared(&config, &common.out_dir)?;
            let (_, held_idx) = split(&config, &corpus);
            let held: Vec<&bems_core::BuildingSpec> =
                held_idx.iter().map(|&i| &corpus[i].0).collect();
            let model: ClusterModel =
                ClusterModel::load(common.out_dir.join("cluster_model.json"))?;
            let bundles: Vec<PolicyBundle> = (0..config.w)
                .map(|c| PolicyBundle::load(common.out_dir.join(format!("policy_cluster{c}.json"))))
                .collect::<CoreResult<_>>()?;
            let forecasters = if config.forecaster.enabled {
                Some(Forecasters::<Real>::load(&common.out_dir)?)
            } else {
                None
            };
            let classified = classify_stage(&config, &common.out_dir, &model, &held)?;
            let rows = evaluate_stage(
                &config,
                &common.out_dir,
                &bundles,
                &classified,
                &tariff,
                forecasters.as_ref(),
            )?;
            println!("evaluated {} rows; report under {}", rows.len(), common.out_dir.display());
            Ok(())
        }
        Command::Tariffs(common) => {
            let config = load_config(&common)?;
            let (_, tariff) = prepared(&config, &common.out_dir)?;
            let mean_price: f64 =
                tariff.price.iter().sum::<f64>() / tariff.len() as f64;
            let dir = common.out_dir.join("scenarios");
            std::fs::create_dir_all(&dir)
                .map_err(|e| bems_core::Error::io(dir.display().to_string(), e))?;
            for s in 0..config.scenarios.count {
                let seed = config.seed.wrapping_add(9000 + s as u64);
                let (scenario, manifest) =
                    bems_core::pipeline::build_scenario(&config, &tariff, mean_price, seed, s)?;
                bems_core::data::write_tariff_csv(&scenario, dir.join(format!("sc{s:02}.csv")))?;
                std::fs::write(
                    dir.join(format!("sc{s:02}.json")),
                    serde_json::to_string_pretty(&manifest)
                        .map_err(|e| bems_core::Error::Serialization(e.to_string()))?,
                )
                .map_err(|e| bems_core::Error::io(dir.display().to_string(), e))?;
            }
            println!("wrote {} scenarios under {}", config.scenarios.count, dir.display());
            Ok(())
        }
        Command::Pipeline(common) => {
            let config = load_config(&common)?;
            let artifacts = run_pipeline::<Real>(&config, &common.out_dir)?;
            println!(
                "pipeline done: {} evaluation rows, model {}, {} policies under {}",
                artifacts.rows.len(),
                artifacts.model_path.display(),
                artifacts.policy_paths.len(),
                artifacts.out_dir.display()
            );
            Ok(())
        }
        Command::Report(common) => {
            let path = common.out_dir.join("evaluation.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| bems_core::Error::io(path.display().to_string(), e))?;
            let rows: Vec<EvaluationRow> = serde_json::from_str(&text)
                .map_err(|e| bems_core::Error::Serialization(e.to_string()))?;
            let written = emit_report(&rows, &common.out_dir)?;
            println!("re-emitted {} report files", written.len());
            Ok(())
        }
    }
}
