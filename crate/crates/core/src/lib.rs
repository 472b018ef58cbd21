//! Cluster-mapped storage control for building energy management.
//!
//! The library covers the full pipeline: ingesting or synthesizing building
//! load/generation data, clustering buildings by consumption pattern
//! (derivative -> spectrum -> DTW -> Ward), classifying new buildings onto
//! clusters, simulating an hourly building + storage environment with safe
//! action masking, LSTM load/price/solar forecasting, masked-PPO policy
//! training per cluster, and evaluation under nominal and stochastically
//! perturbed tariffs.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! pipeline and CLI run at [`Real`].

// `!(x > 0)` rejects NaN along with the out-of-range values; `x <= 0` would
// accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod baselines;
pub mod classify;
pub mod cluster;
pub mod data;
pub mod env;
pub mod error;
pub mod features;
pub mod forecast;
pub mod lstm;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod ppo;
pub mod report;
pub mod scalar;
pub mod tariff;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for pipelines, the CLI, and serialized artifacts.
pub type Real = f64;

/// Concrete aliases at the default precision.
pub type LoadSeries = data::LoadSeries<Real>;
pub type TariffSchedule = data::TariffSchedule<Real>;
pub type BuildingSpec = data::BuildingSpec<Real>;
pub type DistanceMatrix = features::DistanceMatrix<Real>;
pub type Dendrogram = cluster::Dendrogram<Real>;
pub type ClusterModel = cluster::ClusterModel<Real>;
pub type EsuState = env::EsuState<Real>;
pub type BuildingEnv = env::BuildingEnv<Real>;
pub type EnvConfig = env::EnvConfig<Real>;
pub type ForecastModel = forecast::ForecastModel<Real>;
pub type ActionTable = agent::ActionTable<Real>;
pub type PolicyBundle = agent::PolicyBundle<Real>;
pub type EvaluationRow = report::EvaluationRow<Real>;
