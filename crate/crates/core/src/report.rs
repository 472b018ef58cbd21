//! Policy evaluation and report emission: normalized cost metrics against the
//! no-storage baseline, episode traces, and the CSV/JSON/SVG artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{mask_from_bounds, ActionTable, PolicyBundle};
use crate::baselines::{random_action, rbc_action, RbcConfig};
use crate::data::{BuildingSpec, TariffSchedule};
use crate::env::{BuildingEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::plot::{line_chart, write_svg};
use crate::scalar::Scalar;

/// Policy under evaluation.
pub enum EvalPolicy<'a, T: Scalar> {
    Trained(&'a PolicyBundle<T>),
    Rbc(RbcConfig<T>),
    Random { seed: u64 },
    Idle,
}

impl<T: Scalar> EvalPolicy<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::Trained(_) => "trained",
            EvalPolicy::Rbc(_) => "rbc",
            EvalPolicy::Random { .. } => "random",
            EvalPolicy::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions<T: Scalar> {
    /// Episode length; defaults to the full data horizon.
    pub horizon: Option<usize>,
    pub env: EnvConfig<T>,
    /// Action discretization for non-trained policies.
    pub l: usize,
    pub disable_storage: bool,
    pub disable_pv: bool,
    pub scenario_id: String,
    pub cluster: Option<usize>,
}

impl<T: Scalar> Default for EvalOptions<T> {
    fn default() -> Self {
        EvalOptions {
            horizon: None,
            env: EnvConfig::default(),
            l: 10,
            disable_storage: false,
            disable_pv: false,
            scenario_id: "nominal".into(),
            cluster: None,
        }
    }
}

/// One evaluated (building, policy, scenario) combination. Normalized
/// metrics divide the agent's cost by the same building's no-storage,
/// no-generation baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvaluationRow<T: Scalar> {
    pub building_id: String,
    pub cluster: Option<usize>,
    pub policy: String,
    pub scenario: String,
    pub normalized_price: T,
    pub normalized_carbon: T,
    pub agent_price: T,
    pub agent_carbon: T,
    pub baseline_price: T,
    pub baseline_carbon: T,
}

/// Hourly trace of one evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TraceRow<T: Scalar> {
    pub t: usize,
    pub load: T,
    pub solar: T,
    pub fraction: T,
    pub e_esu: T,
    pub soc_kwh: T,
    pub grid: T,
    pub reward: T,
    pub price: T,
    pub carbon: T,
}

/// Run one deterministic evaluation episode from hour 0. Trained policies
/// act greedily (masked argmax); the random baseline is seeded.
pub fn evaluate<T: Scalar>(
    policy: &EvalPolicy<'_, T>,
    building: &BuildingSpec<T>,
    tariff: &TariffSchedule<T>,
    forecasts: Option<&Vec<[T; 3]>>,
    opts: &EvalOptions<T>,
) -> Result<(EvaluationRow<T>, Vec<TraceRow<T>>)> {
    let horizon = opts.horizon.unwrap_or_else(|| building.horizon());
    if horizon > building.horizon() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds data length {}",
            building.horizon()
        )));
    }
    let mut env_cfg = opts.env;
    env_cfg.episode_hours = horizon;

    let table = match policy {
        EvalPolicy::Trained(bundle) => bundle.table.clone(),
        _ => ActionTable::new(opts.l),
    };
    let mut env = BuildingEnv::new(building.clone(), tariff.clone(), env_cfg)?;
    if let EvalPolicy::Trained(bundle) = policy {
        if bundle.forecast_enabled {
            let f = forecasts.ok_or_else(|| {
                Error::InvalidArgument(
                    "policy was trained with forecast features but none were supplied".into(),
                )
            })?;
            env = env.with_forecasts(f.clone())?;
        }
    }
    if opts.disable_storage {
        env = env.with_storage_disabled();
    }
    if opts.disable_pv {
        env = env.with_pv_disabled();
    }

    let mut rng = match policy {
        EvalPolicy::Random { seed } => ChaCha20Rng::seed_from_u64(*seed),
        _ => ChaCha20Rng::seed_from_u64(0),
    };

    let mut state = env.reset(0)?;
    let mut trace = Vec::with_capacity(horizon);
    while !env.is_terminal() {
        let t = env.t();
        let mask = mask_from_bounds(&env.bounds(), &table);
        let action = match policy {
            EvalPolicy::Trained(bundle) => bundle.act_greedy(&state.to_observation(), &mask),
            EvalPolicy::Rbc(cfg) => rbc_action(
                tariff.is_peak(t),
                env.esu().soc_kwh,
                &mask,
                &table,
                cfg,
            ),
            EvalPolicy::Random { .. } => random_action(&mask, &mut rng),
            EvalPolicy::Idle => table.idle_index(),
        };
        let fraction = table.fraction(action);
        let out = env.step_fraction(fraction)?;
        let esu = env.building().esu;
        let e_esu = if out.info.applied_fraction >= T::zero() {
            out.info.applied_fraction * esu.capacity_kwh
        } else {
            out.info.applied_fraction * esu.capacity_kwh * esu.efficiency
        };
        trace.push(TraceRow {
            t,
            load: state.load,
            solar: state.solar,
            fraction: out.info.applied_fraction,
            e_esu,
            soc_kwh: env.esu().soc_kwh,
            grid: out.grid_energy,
            reward: out.reward,
            price: state.price,
            carbon: state.carbon,
        });
        state = out.next_state;
    }

    let costs = env.costs();
    if !(costs.baseline_price > T::zero()) || !(costs.baseline_carbon > T::zero()) {
        return Err(Error::Environment(
            "baseline cost is zero; normalized metrics undefined".into(),
        ));
    }
    let row = EvaluationRow {
        building_id: building.id().to_string(),
        cluster: opts.cluster,
        policy: policy.name().to_string(),
        scenario: opts.scenario_id.clone(),
        normalized_price: costs.agent_price / costs.baseline_price,
        normalized_carbon: costs.agent_carbon / costs.baseline_carbon,
        agent_price: costs.agent_price,
        agent_carbon: costs.agent_carbon,
        baseline_price: costs.baseline_price,
        baseline_carbon: costs.baseline_carbon,
    };
    Ok((row, trace))
}

fn opt_cluster(c: Option<usize>) -> String {
    c.map(|v| v.to_string()).unwrap_or_default()
}

pub fn rows_to_csv<T: Scalar>(rows: &[EvaluationRow<T>]) -> String {
    let mut out = String::from(
        "building_id,cluster,policy,scenario,normalized_price,normalized_carbon,agent_price,agent_carbon,baseline_price,baseline_carbon\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.building_id,
            opt_cluster(r.cluster),
            r.policy,
            r.scenario,
            r.normalized_price,
            r.normalized_carbon,
            r.agent_price,
            r.agent_carbon,
            r.baseline_price,
            r.baseline_carbon
        );
    }
    out
}

pub fn trace_to_csv<T: Scalar>(trace: &[TraceRow<T>]) -> String {
    let mut out =
        String::from("t,load_kwh,solar_kwh,action_fraction,e_esu_kwh,soc_kwh,grid_kwh,reward,price,carbon\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t, r.load, r.solar, r.fraction, r.e_esu, r.soc_kwh, r.grid, r.reward, r.price, r.carbon
        );
    }
    out
}

fn mean_std<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::from_usize(values.len().max(1)).unwrap();
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Per-cluster, per-policy normalized means over nominal-scenario rows
/// (carbon first, price second, matching the objective pair).
pub fn cluster_policy_table<T: Scalar>(rows: &[EvaluationRow<T>]) -> String {
    let mut clusters: Vec<usize> = rows.iter().filter_map(|r| r.cluster).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let policies = ["trained", "rbc", "random", "idle"];
    let mut out = String::from("cluster");
    for p in policies {
        let _ = write!(out, ",{p}_carbon,{p}_price");
    }
    out.push('\n');
    for c in clusters {
        let _ = write!(out, "{c}");
        for p in policies {
            let sel: Vec<&EvaluationRow<T>> = rows
                .iter()
                .filter(|r| r.cluster == Some(c) && r.policy == p && r.scenario == "nominal")
                .collect();
            if sel.is_empty() {
                out.push_str(",,");
            } else {
                let (mc, _) = mean_std(&sel.iter().map(|r| r.normalized_carbon).collect::<Vec<_>>());
                let (mp, _) = mean_std(&sel.iter().map(|r| r.normalized_price).collect::<Vec<_>>());
                let _ = write!(out, ",{mc},{mp}");
            }
        }
        out.push('\n');
    }
    out
}

/// Per-cluster mean and deviation of the trained policy's normalized costs
/// over the perturbed-tariff scenarios.
pub fn scenario_table<T: Scalar>(rows: &[EvaluationRow<T>]) -> String {
    let mut clusters: Vec<usize> = rows.iter().filter_map(|r| r.cluster).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let mut out = String::from(
        "cluster,scenarios,financial_mean,financial_std,carbon_mean,carbon_std\n",
    );
    for c in clusters {
        let sel: Vec<&EvaluationRow<T>> = rows
            .iter()
            .filter(|r| r.cluster == Some(c) && r.policy == "trained" && r.scenario != "nominal")
            .collect();
        if sel.is_empty() {
            continue;
        }
        let (fp, sp) = mean_std(&sel.iter().map(|r| r.normalized_price).collect::<Vec<_>>());
        let (fc, sc) = mean_std(&sel.iter().map(|r| r.normalized_carbon).collect::<Vec<_>>());
        let _ = writeln!(out, "{c},{},{fp},{sp},{fc},{sc}", sel.len());
    }
    out
}

/// Write the evaluation artifacts: full rows as CSV and JSON, the
/// cluster-by-policy table, the scenario-spread table, and a normalized-cost
/// chart. Returns the written paths.
pub fn emit_report<T: Scalar>(rows: &[EvaluationRow<T>], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no evaluation rows".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut written = Vec::new();

    let csv_path = dir.join("evaluation.csv");
    std::fs::write(&csv_path, rows_to_csv(rows))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    written.push(csv_path);

    let json_path = dir.join("evaluation.json");
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    written.push(json_path);

    let t1 = dir.join("table_policies.csv");
    std::fs::write(&t1, cluster_policy_table(rows))
        .map_err(|e| Error::io(t1.display().to_string(), e))?;
    written.push(t1);

    if rows.iter().any(|r| r.scenario != "nominal") {
        let t3 = dir.join("table_scenarios.csv");
        std::fs::write(&t3, scenario_table(rows))
            .map_err(|e| Error::io(t3.display().to_string(), e))?;
        written.push(t3);
    }

    // normalized price per building, one series per policy
    let mut policies: Vec<String> = rows.iter().map(|r| r.policy.clone()).collect();
    policies.sort();
    policies.dedup();
    let mut series = Vec::new();
    for p in policies {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.policy == p && r.scenario == "nominal")
            .enumerate()
            .map(|(i, r)| (i as f64, r.normalized_price.to_f64_lossy()))
            .collect();
        if !pts.is_empty() {
            series.push((p, pts));
        }
    }
    if !series.is_empty() {
        let svg_path = dir.join("normalized_costs.svg");
        write_svg(
            &svg_path,
            &line_chart("normalized financial cost", "building", "cost / baseline", &series),
        )?;
        written.push(svg_path);
    }
    Ok(written)
}
