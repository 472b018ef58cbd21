//! End-to-end orchestration: synthesize or load a corpus, cluster it, train
//! per-cluster policies, classify held-out buildings, and evaluate under the
//! nominal and perturbed tariffs, writing every artifact under one output
//! directory.
//!
//! Each stage is callable on its own (the CLI maps subcommands onto them);
//! [`run_pipeline`] chains them. With a fixed config and seed every stage is
//! deterministic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{assign_cluster, dissimilarity_vector, Metric};
use crate::cluster::{agglomerate, cut, inconsistency, silhouette, ClusterModel};
use crate::data::{
    generate_synthetic_corpus, load_building_csv, write_building_csv, write_tariff_csv,
    BuildingSpec, CorpusParams, LoadSeries, TariffSchedule, Temporal,
};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::features::corpus_distance_matrix;
use crate::forecast::{
    build_dataset, evaluate_forecasts, lag_baseline, next_step_forecasts, train as train_forecaster,
    ForecastModel, ForecastScore, ForecastTarget, ForecastTrainConfig,
};
use crate::plot::{dendrogram_svg, line_chart, write_svg};
use crate::ppo::{train_cluster_policy, ClusterTrainConfig, CurvePoint, PpoConfig};
use crate::report::{emit_report, evaluate, trace_to_csv, EvalOptions, EvalPolicy, EvaluationRow};
use crate::scalar::Scalar;
use crate::tariff::{make_scenario, NoiseSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_buildings: usize,
    pub hours: usize,
    pub archetypes: usize,
    pub params: CorpusParams,
    /// Load building CSVs from this directory instead of synthesizing.
    pub data_dir: Option<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_buildings: 30,
            hours: 8760,
            archetypes: 3,
            params: CorpusParams::default(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TariffConfig {
    pub csv_path: Option<String>,
    pub off_price: f64,
    pub peak_price: f64,
    pub off_carbon: f64,
    pub peak_carbon: f64,
    pub peak_start: u8,
    pub peak_end: u8,
}

impl Default for TariffConfig {
    fn default() -> Self {
        TariffConfig {
            csv_path: None,
            off_price: 0.10,
            peak_price: 0.60,
            off_carbon: 0.04,
            peak_carbon: 0.08,
            peak_start: 17,
            peak_end: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub enabled: bool,
    pub window: usize,
    pub n_ahead: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hours of each series used for training samples.
    pub train_hours: usize,
    /// Fraction of samples held out for the evaluation report.
    pub eval_fraction: f64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            enabled: true,
            window: 24,
            n_ahead: 1,
            hidden_dim: 50,
            n_layers: 2,
            epochs: 12,
            batch_size: 64,
            train_hours: 2190,
            eval_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub episodes: usize,
    pub episode_hours: usize,
    pub normalization_steps: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            episodes: 400,
            episode_hours: 2190,
            normalization_steps: 8760 * 5,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            lr: 5e-4,
            update_epochs: 4,
            minibatch_size: 256,
            value_coef: 0.5,
            entropy_coef: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub count: usize,
    /// Noise mean bounds as fractions of the nominal mean price.
    pub mu_frac: f64,
    /// Noise deviation upper bound as a fraction of the nominal mean price.
    pub sigma_frac: f64,
    pub peak_hours_per_day: usize,
    pub peak_multiplier: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            count: 20,
            mu_frac: 0.10,
            sigma_frac: 0.20,
            peak_hours_per_day: 4,
            peak_multiplier: 4.0,
        }
    }
}

/// Full pipeline configuration; serialized as a single JSON document with a
/// schema version field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub tariff: TariffConfig,
    pub forecaster: ForecasterConfig,
    pub agent: AgentConfig,
    pub scenarios: ScenarioConfig,
    /// Cluster count (the human-chosen cut).
    pub w: usize,
    /// Action steps per direction (2l+1 actions).
    pub l: usize,
    pub zeta: f64,
    pub alpha: f64,
    /// Every k-th building is held out for classification + evaluation.
    pub holdout_every: usize,
    pub classify_window_hours: usize,
    pub classify_metric: Metric,
    /// Evaluation horizon; None = full data length.
    pub eval_horizon: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 7,
            corpus: CorpusConfig::default(),
            tariff: TariffConfig::default(),
            forecaster: ForecasterConfig::default(),
            agent: AgentConfig::default(),
            scenarios: ScenarioConfig::default(),
            w: 3,
            l: 10,
            zeta: 0.8,
            alpha: 0.0,
            holdout_every: 5,
            classify_window_hours: 168,
            classify_metric: Metric::Dtw,
            eval_horizon: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} != {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.w == 0 {
            return Err(Error::Config("w must be >= 1".into()));
        }
        if self.l == 0 {
            return Err(Error::Config("l must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::Config("zeta must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must be in [0, 1)".into()));
        }
        if self.holdout_every < 2 {
            return Err(Error::Config("holdout_every must be >= 2".into()));
        }
        if let Some(dir) = &self.corpus.data_dir {
            if !Path::new(dir).is_dir() {
                return Err(Error::Config(format!("data_dir {dir} does not exist")));
            }
        }
        if let Some(path) = &self.tariff.csv_path {
            if !Path::new(path).is_file() {
                return Err(Error::Config(format!("tariff csv {path} does not exist")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn env_config<T: Scalar>(&self) -> EnvConfig<T> {
        EnvConfig {
            zeta: T::lit(self.zeta),
            alpha: T::lit(self.alpha),
            episode_hours: self.agent.episode_hours,
        }
    }

    pub fn ppo_config<T: Scalar>(&self) -> PpoConfig<T> {
        PpoConfig {
            gamma: T::lit(self.agent.gamma),
            lambda: T::lit(self.agent.lambda),
            clip_eps: T::lit(self.agent.clip_eps),
            lr: T::lit(self.agent.lr),
            update_epochs: self.agent.update_epochs,
            minibatch_size: self.agent.minibatch_size,
            value_coef: T::lit(self.agent.value_coef),
            entropy_coef: T::lit(self.agent.entropy_coef),
            ..PpoConfig::default()
        }
    }

    pub fn train_config<T: Scalar>(&self) -> ClusterTrainConfig<T> {
        ClusterTrainConfig {
            episodes: self.agent.episodes,
            episode_hours: self.agent.episode_hours,
            env: self.env_config(),
            normalization_steps: self.agent.normalization_steps,
            l: self.l,
        }
    }
}

fn write_file(path: &Path, data: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, data).map_err(|e| Error::io(path.display().to_string(), e))
}

/// A building with its ground-truth archetype (synthetic corpora only).
pub type LabeledCorpus<T> = Vec<(BuildingSpec<T>, Option<usize>)>;

/// Synthesize (or load) the corpus and the nominal tariff, writing both
/// under `out_dir`.
pub fn synthesize_stage<T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
) -> Result<(LabeledCorpus<T>, TariffSchedule<T>)> {
    let stage = "synthesize";
    let corpus: LabeledCorpus<T> = match &config.corpus.data_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir.clone(), e).in_stage(stage))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
                .collect();
            paths.sort();
            if paths.len() < 2 {
                return Err(Error::Config(format!(
                    "data_dir {dir} holds {} csv files; need at least 2",
                    paths.len()
                ))
                .in_stage(stage));
            }
            paths
                .iter()
                .map(|p| load_building_csv(p).map(|b| (b, None)))
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage(stage))?
        }
        None => generate_synthetic_corpus(
            config.corpus.n_buildings,
            config.corpus.hours,
            config.corpus.archetypes,
            config.seed,
            &config.corpus.params,
        )
        .map_err(|e| e.in_stage(stage))?
        .into_iter()
        .map(|(b, label)| (b, Some(label)))
        .collect(),
    };

    let corpus_dir = out_dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir)
        .map_err(|e| Error::io(corpus_dir.display().to_string(), e).in_stage(stage))?;
    for (b, _) in &corpus {
        write_building_csv(b, corpus_dir.join(format!("{}.csv", b.id())))
            .map_err(|e| e.in_stage(stage))?;
    }

    let hours = corpus[0].0.horizon();
    let tariff: TariffSchedule<T> = match &config.tariff.csv_path {
        Some(path) => crate::data::load_tariff_csv(path).map_err(|e| e.in_stage(stage))?,
        None => TariffSchedule::time_of_use(
            hours.div_ceil(24),
            T::lit(config.tariff.off_price),
            T::lit(config.tariff.peak_price),
            T::lit(config.tariff.off_carbon),
            T::lit(config.tariff.peak_carbon),
            config.tariff.peak_start,
            config.tariff.peak_end,
        )
        .map_err(|e| e.in_stage(stage))?,
    };
    if tariff.len() < hours {
        return Err(Error::Config(format!(
            "tariff covers {} hours but buildings have {hours}",
            tariff.len()
        ))
        .in_stage(stage));
    }
    write_tariff_csv(&tariff, out_dir.join("tariff_nominal.csv"))
        .map_err(|e| e.in_stage(stage))?;
    Ok((corpus, tariff))
}

/// Indices held out for classification + evaluation (every k-th building).
pub fn holdout_mask(config: &RunConfig, n: usize) -> Vec<bool> {
    (0..n).map(|i| i % config.holdout_every == 0).collect()
}

/// Cluster the training split: distance matrix, dendrogram, diagnostics,
/// the w-cut model, and the reference-profile plot.
pub fn cluster_stage<T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    train_buildings: &[&BuildingSpec<T>],
) -> Result<ClusterModel<T>> {
    let stage = "cluster";
    let raw: Vec<Vec<T>> = train_buildings.iter().map(|b| b.load.values.clone()).collect();
    let ids: Vec<String> = train_buildings.iter().map(|b| b.id().to_string()).collect();
    let matrix = corpus_distance_matrix(&raw, ids).map_err(|e| e.in_stage(stage))?;
    write_file(&out_dir.join("distance_matrix.csv"), &matrix.to_csv())
        .map_err(|e| e.in_stage(stage))?;

    let dendrogram = agglomerate(&matrix).map_err(|e| e.in_stage(stage))?;
    write_file(&out_dir.join("dendrogram.json"), &dendrogram.to_json())
        .map_err(|e| e.in_stage(stage))?;
    write_svg(out_dir.join("dendrogram.svg"), &dendrogram_svg(&dendrogram))
        .map_err(|e| e.in_stage(stage))?;

    let mut curve_csv = String::from("w,silhouette\n");
    let max_w = 6.min(matrix.n() - 1);
    for w in 2..=max_w {
        let assignments = cut(&dendrogram, w).map_err(|e| e.in_stage(stage))?;
        let s = silhouette(&matrix, &assignments).map_err(|e| e.in_stage(stage))?;
        curve_csv.push_str(&format!("{w},{s}\n"));
    }
    write_file(&out_dir.join("silhouette.csv"), &curve_csv).map_err(|e| e.in_stage(stage))?;

    let scores = inconsistency(&dendrogram, 2).map_err(|e| e.in_stage(stage))?;
    let mut inc_csv = String::from("merge,inconsistency\n");
    for (k, s) in scores.iter().enumerate() {
        inc_csv.push_str(&format!("{k},{s}\n"));
    }
    write_file(&out_dir.join("inconsistency.csv"), &inc_csv).map_err(|e| e.in_stage(stage))?;

    let train_series: Vec<LoadSeries<T>> =
        train_buildings.iter().map(|b| b.load.clone()).collect();
    let model =
        ClusterModel::fit(&matrix, &train_series, config.w).map_err(|e| e.in_stage(stage))?;
    model
        .save(out_dir.join("cluster_model.json"))
        .map_err(|e| e.in_stage(stage))?;
    write_file(&out_dir.join("assignments.csv"), &model.assignments_csv())
        .map_err(|e| e.in_stage(stage))?;

    let profile_series: Vec<(String, Vec<(f64, f64)>)> = model
        .reference_series
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let days = (r.len() / 24).max(1);
            let pts = (0..24.min(r.len()))
                .map(|h| {
                    let mut acc = 0.0;
                    for d in 0..days {
                        acc += r.values[(d * 24 + h).min(r.len() - 1)].to_f64_lossy();
                    }
                    (h as f64, acc / days as f64)
                })
                .collect();
            (format!("cluster {k}"), pts)
        })
        .collect();
    write_svg(
        out_dir.join("cluster_profiles.svg"),
        &line_chart("mean daily load profile per cluster", "hour", "kWh", &profile_series),
    )
    .map_err(|e| e.in_stage(stage))?;
    Ok(model)
}

/// The three trained forecasters.
pub struct Forecasters<T: Scalar> {
    pub price: ForecastModel<T>,
    pub solar: ForecastModel<T>,
    pub nsl: ForecastModel<T>,
}

impl<T: Scalar> Forecasters<T> {
    pub fn load(out_dir: &Path) -> Result<Self> {
        Ok(Forecasters {
            price: ForecastModel::load(out_dir.join("forecaster_price.json"))?,
            solar: ForecastModel::load(out_dir.join("forecaster_solar.json"))?,
            nsl: ForecastModel::load(out_dir.join("forecaster_nsl.json"))?,
        })
    }

    /// Per-hour next-step (price, solar, load) forecasts for one building.
    pub fn for_building(
        &self,
        prices: &[T],
        building: &BuildingSpec<T>,
    ) -> Vec<[T; 3]> {
        next_step_forecasts(
            &self.price,
            &self.solar,
            &self.nsl,
            prices,
            &building.solar,
            &building.load,
        )
    }

    /// Rolling next-step price forecasts for one tariff; the expensive,
    /// tariff-dependent half of the observation extension.
    pub fn price_series(&self, prices: &[T], start: Temporal) -> Vec<T> {
        self.price.rolling_forecast(prices, start)
    }

    /// Rolling next-step (solar, load) forecasts for one building; these do
    /// not depend on the tariff and can be cached across scenarios.
    pub fn building_series(&self, building: &BuildingSpec<T>) -> (Vec<T>, Vec<T>) {
        let start = building.load.start();
        (
            self.solar.rolling_forecast(&building.solar.values, start),
            self.nsl.rolling_forecast(&building.load.values, start),
        )
    }

    pub fn combine(price: &[T], solar: &[T], load: &[T]) -> Vec<[T; 3]> {
        price
            .iter()
            .zip(solar.iter().zip(load))
            .map(|(&p, (&s, &l))| [p, s, l])
            .collect()
    }
}

fn mean_series<T: Scalar>(series: Vec<&LoadSeries<T>>) -> Vec<T> {
    let m = series[0].len();
    let n = T::from_usize(series.len()).unwrap();
    let mut mean = vec![T::zero(); m];
    for s in &series {
        for (acc, &v) in mean.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= n;
    }
    mean
}

fn train_one_forecaster<T: Scalar>(
    target: ForecastTarget,
    values: &[T],
    start: Temporal,
    config: &RunConfig,
    seed: u64,
) -> Result<(ForecastModel<T>, ForecastScore<T>, ForecastScore<T>)> {
    let fc = &config.forecaster;
    let horizon = values.len().min(fc.train_hours.max(fc.window + fc.n_ahead + 8));
    let samples = build_dataset(&values[..horizon], start, fc.window, fc.n_ahead)?;
    let split = ((samples.len() as f64) * (1.0 - fc.eval_fraction)).ceil() as usize;
    let split = split.clamp(1, samples.len() - 1);
    let (train_split, eval_split) = samples.split_at(split);

    let train_cfg = ForecastTrainConfig::<T> {
        hidden_dim: fc.hidden_dim,
        n_layers: fc.n_layers,
        epochs: fc.epochs,
        batch_size: fc.batch_size,
        seed,
        ..Default::default()
    };
    let (model, _history) =
        train_forecaster(target, train_split, fc.window, fc.n_ahead, &train_cfg)?;

    let preds: Vec<T> = eval_split.iter().map(|s| model.predict(s)[0]).collect();
    let targets: Vec<T> = eval_split.iter().map(|s| s.target[0]).collect();
    let lstm_score = evaluate_forecasts(&preds, &targets)?;
    let lag_preds: Vec<T> = (split..samples.len())
        .map(|k| lag_baseline(values, k + fc.window).unwrap())
        .collect();
    let lag_score = evaluate_forecasts(&lag_preds, &targets)?;
    Ok((model, lstm_score, lag_score))
}

/// Train the price/solar/load forecasters and write the comparison report
/// (LSTM vs. 1-hour lag). Returns `None` when the forecaster is disabled.
pub fn forecast_stage<T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    train_buildings: &[&BuildingSpec<T>],
    tariff: &TariffSchedule<T>,
) -> Result<Option<Forecasters<T>>> {
    if !config.forecaster.enabled {
        return Ok(None);
    }
    let stage = "forecast";
    let start = train_buildings[0].load.start();
    let mean_load = mean_series(train_buildings.iter().map(|b| &b.load).collect());
    let mean_solar = mean_series(train_buildings.iter().map(|b| &b.solar).collect());

    let (price, price_lstm, price_lag) =
        train_one_forecaster(ForecastTarget::Price, &tariff.price, start, config, config.seed ^ 0x01)
            .map_err(|e| e.in_stage(stage))?;
    let (solar, solar_lstm, solar_lag) =
        train_one_forecaster(ForecastTarget::Solar, &mean_solar, start, config, config.seed ^ 0x02)
            .map_err(|e| e.in_stage(stage))?;
    let (nsl, nsl_lstm, nsl_lag) =
        train_one_forecaster(ForecastTarget::Nsl, &mean_load, start, config, config.seed ^ 0x03)
            .map_err(|e| e.in_stage(stage))?;

    let fmt_r2 =
        |r2: Option<T>| r2.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
    let mut report_csv = String::from("target,lstm_rmse,lstm_r2,base_rmse,base_r2\n");
    for (name, lstm, lag) in [
        ("price", price_lstm, price_lag),
        ("solar", solar_lstm, solar_lag),
        ("nsl", nsl_lstm, nsl_lag),
    ] {
        report_csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            lstm.rmse,
            fmt_r2(lstm.r2),
            lag.rmse,
            fmt_r2(lag.r2)
        ));
    }
    write_file(&out_dir.join("forecast_report.csv"), &report_csv)
        .map_err(|e| e.in_stage(stage))?;

    let fs = Forecasters { price, solar, nsl };
    fs.price
        .save(out_dir.join("forecaster_price.json"))
        .map_err(|e| e.in_stage(stage))?;
    fs.solar
        .save(out_dir.join("forecaster_solar.json"))
        .map_err(|e| e.in_stage(stage))?;
    fs.nsl
        .save(out_dir.join("forecaster_nsl.json"))
        .map_err(|e| e.in_stage(stage))?;
    Ok(Some(fs))
}

/// Train one policy per cluster and write bundles plus learning curves.
pub fn train_stage<T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    model: &ClusterModel<T>,
    train_buildings: &[&BuildingSpec<T>],
    tariff: &TariffSchedule<T>,
    forecasters: Option<&Forecasters<T>>,
) -> Result<Vec<crate::agent::PolicyBundle<T>>> {
    let stage = "train";
    let mut bundles = Vec::with_capacity(config.w);
    for cluster in 0..config.w {
        let members: Vec<BuildingSpec<T>> = train_buildings
            .iter()
            .zip(model.assignments.iter())
            .filter(|(_, (_, c))| *c == cluster)
            .map(|(b, _)| (*b).clone())
            .collect();
        let member_forecasts: Option<Vec<Vec<[T; 3]>>> = forecasters.map(|f| {
            let price_fc = f.price_series(&tariff.price, members[0].load.start());
            members
                .iter()
                .map(|b| {
                    let (solar_fc, load_fc) = f.building_series(b);
                    Forecasters::combine(&price_fc, &solar_fc, &load_fc)
                })
                .collect()
        });
        let (bundle, curve) = train_cluster_policy(
            cluster,
            &members,
            tariff,
            member_forecasts.as_deref(),
            config.ppo_config(),
            &config.train_config(),
            config.seed.wrapping_add(cluster as u64),
        )
        .map_err(|e| e.in_stage(stage))?;

        bundle
            .save(out_dir.join(format!("policy_cluster{cluster}.json")))
            .map_err(|e| e.in_stage(stage))?;
        write_learning_curve(out_dir, cluster, &curve).map_err(|e| e.in_stage(stage))?;
        bundles.push(bundle);
    }
    Ok(bundles)
}

/// Classify held-out buildings from a short observation window.
pub fn classify_stage<'a, T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    model: &ClusterModel<T>,
    held_out: &[&'a BuildingSpec<T>],
) -> Result<Vec<(&'a BuildingSpec<T>, usize)>> {
    let stage = "classify";
    let mut classified = Vec::with_capacity(held_out.len());
    let mut csv = String::from("building_id,assigned_cluster,dissimilarities,policy_file\n");
    for b in held_out {
        let window_len = config.classify_window_hours.min(b.load.len()).max(2);
        let window = b
            .load
            .slice_window(0, window_len)
            .map_err(|e| e.in_stage(stage))?;
        let v = dissimilarity_vector(&window, model, config.classify_metric)
            .map_err(|e| e.in_stage(stage))?;
        let cluster = assign_cluster(&v);
        csv.push_str(&format!(
            "{},{},{},policy_cluster{}.json\n",
            b.id(),
            cluster,
            v.values
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            cluster
        ));
        classified.push((*b, cluster));
    }
    write_file(&out_dir.join("classification.csv"), &csv).map_err(|e| e.in_stage(stage))?;
    Ok(classified)
}

/// Evaluate trained + baseline policies on the nominal tariff and the
/// trained policy on perturbed scenarios; writes scenario files, traces,
/// and the report tables.
pub fn evaluate_stage<T: Scalar>(
    config: &RunConfig,
    out_dir: &Path,
    bundles: &[crate::agent::PolicyBundle<T>],
    classified: &[(&BuildingSpec<T>, usize)],
    tariff: &TariffSchedule<T>,
    forecasters: Option<&Forecasters<T>>,
) -> Result<Vec<EvaluationRow<T>>> {
    let stage = "evaluate";
    let mut rows: Vec<EvaluationRow<T>> = Vec::new();
    let base_opts = EvalOptions::<T> {
        horizon: config.eval_horizon,
        env: config.env_config(),
        l: config.l,
        ..Default::default()
    };

    // solar/load forecasts per building are tariff-independent: compute once
    let cached_building_fc: Option<Vec<(Vec<T>, Vec<T>)>> =
        forecasters.map(|f| classified.iter().map(|(b, _)| f.building_series(b)).collect());
    let nominal_price_fc = forecasters.map(|f| {
        f.price_series(
            &tariff.price,
            classified
                .first()
                .map(|(b, _)| b.load.start())
                .unwrap_or(crate::data::Temporal {
                    month: 1,
                    day_type: 1,
                    hour: 0,
                }),
        )
    });

    let mut trace_written = false;
    for (i, (b, cluster)) in classified.iter().enumerate() {
        let bundle = bundles.get(*cluster).ok_or_else(|| {
            Error::InvalidArgument(format!("no policy for cluster {cluster}")).in_stage(stage)
        })?;
        let fc = nominal_price_fc.as_ref().map(|price_fc| {
            let (solar_fc, load_fc) = &cached_building_fc.as_ref().unwrap()[i];
            Forecasters::combine(price_fc, solar_fc, load_fc)
        });
        let opts = EvalOptions {
            cluster: Some(*cluster),
            ..base_opts.clone()
        };
        let (row, trace) = evaluate(&EvalPolicy::Trained(bundle), b, tariff, fc.as_ref(), &opts)
            .map_err(|e| e.in_stage(stage))?;
        rows.push(row);
        if !trace_written {
            write_file(&out_dir.join("trace_trained.csv"), &trace_to_csv(&trace))
                .map_err(|e| e.in_stage(stage))?;
            let span = trace.len().min(14 * 24);
            let soc: Vec<(f64, f64)> = trace[..span]
                .iter()
                .map(|r| (r.t as f64, r.soc_kwh.to_f64_lossy()))
                .collect();
            let net: Vec<(f64, f64)> = trace[..span]
                .iter()
                .map(|r| (r.t as f64, r.grid.to_f64_lossy()))
                .collect();
            write_svg(
                out_dir.join("trace_trained.svg"),
                &line_chart(
                    "state of charge vs net consumption",
                    "hour",
                    "kWh",
                    &[("soc".into(), soc), ("net grid".into(), net)],
                ),
            )
            .map_err(|e| e.in_stage(stage))?;
            trace_written = true;
        }

        for policy in [
            EvalPolicy::Random {
                seed: config.seed.wrapping_add(1000 + i as u64),
            },
            EvalPolicy::Rbc(Default::default()),
            EvalPolicy::Idle,
        ] {
            let (row, _) =
                evaluate(&policy, b, tariff, None, &opts).map_err(|e| e.in_stage(stage))?;
            rows.push(row);
        }
    }

    let stage = "tariffs";
    let mean_price = tariff.price.iter().copied().sum::<T>().to_f64_lossy() / tariff.len() as f64;
    let scenario_dir = out_dir.join("scenarios");
    if config.scenarios.count > 0 {
        std::fs::create_dir_all(&scenario_dir)
            .map_err(|e| Error::io(scenario_dir.display().to_string(), e).in_stage(stage))?;
    }
    for s in 0..config.scenarios.count {
        let seed = config.seed.wrapping_add(9000 + s as u64);
        let (scenario, manifest) = build_scenario(config, tariff, mean_price, seed, s)?;
        write_tariff_csv(&scenario, scenario_dir.join(format!("sc{s:02}.csv")))
            .map_err(|e| e.in_stage(stage))?;
        write_file(
            &scenario_dir.join(format!("sc{s:02}.json")),
            &serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::Serialization(e.to_string()))?,
        )
        .map_err(|e| e.in_stage(stage))?;

        let scenario_price_fc = forecasters.map(|f| {
            f.price_series(
                &scenario.price,
                classified
                    .first()
                    .map(|(b, _)| b.load.start())
                    .unwrap_or(crate::data::Temporal {
                        month: 1,
                        day_type: 1,
                        hour: 0,
                    }),
            )
        });
        for (i, (b, cluster)) in classified.iter().enumerate() {
            let bundle = &bundles[*cluster];
            let fc = scenario_price_fc.as_ref().map(|price_fc| {
                let (solar_fc, load_fc) = &cached_building_fc.as_ref().unwrap()[i];
                Forecasters::combine(price_fc, solar_fc, load_fc)
            });
            let opts = EvalOptions {
                cluster: Some(*cluster),
                scenario_id: manifest.scenario_id.clone(),
                ..base_opts.clone()
            };
            let (row, _) = evaluate(&EvalPolicy::Trained(bundle), b, &scenario, fc.as_ref(), &opts)
                .map_err(|e| e.in_stage(stage))?;
            rows.push(row);
        }
    }

    emit_report(&rows, out_dir).map_err(|e| e.in_stage("report"))?;
    Ok(rows)
}

/// One perturbed scenario from the nominal schedule.
pub fn build_scenario<T: Scalar>(
    config: &RunConfig,
    tariff: &TariffSchedule<T>,
    mean_price: f64,
    seed: u64,
    index: usize,
) -> Result<(TariffSchedule<T>, crate::tariff::ScenarioManifest)> {
    let price_noise = NoiseSpec {
        mu_bounds: (
            -config.scenarios.mu_frac * mean_price,
            config.scenarios.mu_frac * mean_price,
        ),
        sigma_bounds: (0.0, config.scenarios.sigma_frac * mean_price),
        seed,
    };
    let carbon_noise = NoiseSpec {
        mu_bounds: price_noise.mu_bounds,
        sigma_bounds: (0.0, 0.5 * config.scenarios.sigma_frac * mean_price),
        seed: seed ^ 0xc0,
    };
    make_scenario(
        tariff,
        &price_noise,
        &carbon_noise,
        config.scenarios.peak_hours_per_day,
        T::lit(config.scenarios.peak_multiplier),
        seed ^ 0x9e,
        format!("sc{index:02}"),
    )
    .map_err(|e| e.in_stage("tariffs"))
}

/// Outcome of a pipeline run.
#[derive(Debug)]
pub struct PipelineArtifacts<T: Scalar> {
    pub out_dir: PathBuf,
    pub model_path: PathBuf,
    pub policy_paths: Vec<PathBuf>,
    pub rows: Vec<EvaluationRow<T>>,
}

/// Run every stage under `out_dir`.
pub fn run_pipeline<T: Scalar>(config: &RunConfig, out_dir: &Path) -> Result<PipelineArtifacts<T>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_file(
        &out_dir.join("config.json"),
        &serde_json::to_string_pretty(config).map_err(|e| Error::Serialization(e.to_string()))?,
    )?;

    let (corpus, tariff) = synthesize_stage::<T>(config, out_dir)?;
    let holdout = holdout_mask(config, corpus.len());
    let train_buildings: Vec<&BuildingSpec<T>> = corpus
        .iter()
        .zip(&holdout)
        .filter(|(_, &h)| !h)
        .map(|((b, _), _)| b)
        .collect();
    let held_out: Vec<&BuildingSpec<T>> = corpus
        .iter()
        .zip(&holdout)
        .filter(|(_, &h)| h)
        .map(|((b, _), _)| b)
        .collect();

    let model = cluster_stage(config, out_dir, &train_buildings)?;
    let forecasters = forecast_stage(config, out_dir, &train_buildings, &tariff)?;
    let bundles = train_stage(
        config,
        out_dir,
        &model,
        &train_buildings,
        &tariff,
        forecasters.as_ref(),
    )?;
    let classified = classify_stage(config, out_dir, &model, &held_out)?;
    let rows = evaluate_stage(
        config,
        out_dir,
        &bundles,
        &classified,
        &tariff,
        forecasters.as_ref(),
    )?;

    Ok(PipelineArtifacts {
        out_dir: out_dir.to_path_buf(),
        model_path: out_dir.join("cluster_model.json"),
        policy_paths: (0..config.w)
            .map(|c| out_dir.join(format!("policy_cluster{c}.json")))
            .collect(),
        rows,
    })
}

fn write_learning_curve<T: Scalar>(
    out_dir: &Path,
    cluster: usize,
    curve: &[CurvePoint<T>],
) -> Result<()> {
    let mut csv = String::from("episode,total_reward,normalized_price_cost\n");
    for p in curve {
        csv.push_str(&format!(
            "{},{},{}\n",
            p.episode, p.total_reward, p.normalized_price_cost
        ));
    }
    write_file(&out_dir.join(format!("learning_curve_cluster{cluster}.csv")), &csv)?;
    let reward: Vec<(f64, f64)> = curve
        .iter()
        .map(|p| (p.episode as f64, p.total_reward.to_f64_lossy()))
        .collect();
    let cost: Vec<(f64, f64)> = curve
        .iter()
        .map(|p| (p.episode as f64, p.normalized_price_cost.to_f64_lossy()))
        .collect();
    write_svg(
        out_dir.join(format!("learning_curve_cluster{cluster}.svg")),
        &line_chart(
            &format!("cluster {cluster} training"),
            "episode",
            "value",
            &[("total reward".into(), reward), ("normalized cost".into(), cost)],
        ),
    )
}
