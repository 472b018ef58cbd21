//! Discrete-time (hourly) building + storage environment: state assembly,
//! energy balance, safe action bounds, ESU dynamics, and the two reward
//! regimes.
//!
//! Sign conventions: a positive action fraction charges (grid-side intake
//! `a*z`, stored `a*z*eta`), a negative one discharges (state of charge drops
//! by `|a|*z`, delivered `|a|*z*eta`). Solar generation offsets demand; the
//! grid never absorbs exports, surplus is curtailed.

use serde::{Deserialize, Serialize};

use crate::data::{BuildingSpec, TariffSchedule, Temporal};
use crate::error::{Error, Result};
use crate::forecast::temporal_features;
use crate::scalar::Scalar;

/// Storage device state. `capacity_kwh == 0` models a building without
/// storage (bounds collapse to idle); `unit_cost` is the running $/kWh value
/// of the energy currently stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EsuState<T: Scalar> {
    pub soc_kwh: T,
    pub capacity_kwh: T,
    pub efficiency: T,
    pub power_limit_kw: T,
    pub unit_cost: T,
}

impl<T: Scalar> EsuState<T> {
    pub fn empty(capacity_kwh: T, efficiency: T, power_limit_kw: T) -> Result<Self> {
        if !(capacity_kwh >= T::zero()) {
            return Err(Error::InvalidArgument("capacity must be >= 0".into()));
        }
        if !(efficiency > T::zero() && efficiency <= T::one()) {
            return Err(Error::InvalidArgument("efficiency must be in (0, 1]".into()));
        }
        if !(power_limit_kw > T::zero()) {
            return Err(Error::InvalidArgument("power limit must be > 0".into()));
        }
        Ok(EsuState {
            soc_kwh: T::zero(),
            capacity_kwh,
            efficiency,
            power_limit_kw,
            unit_cost: T::zero(),
        })
    }

    pub fn soc_fraction(&self) -> T {
        if self.capacity_kwh > T::zero() {
            self.soc_kwh / self.capacity_kwh
        } else {
            T::zero()
        }
    }
}

/// Per-step action-fraction bounds, `low <= 0 <= high`, both in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ActionBounds<T: Scalar> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> ActionBounds<T> {
    pub fn contains(&self, fraction: T) -> bool {
        fraction >= self.low && fraction <= self.high
    }

    pub fn project(&self, fraction: T) -> T {
        fraction.max(self.low).min(self.high)
    }
}

/// Grid draw after balancing demand against storage transfer and generation:
/// `max(0, load + e_esu - e_pv)`.
pub fn energy_balance<T: Scalar>(load: T, e_esu: T, e_pv: T) -> T {
    (load + e_esu - e_pv).max(T::zero())
}

/// Safe action-fraction bounds for the current step.
///
/// Discharge is capped by the power limit, the deliverable stored energy
/// `eta * H`, and the step demand; it is disabled entirely when generation
/// already covers demand. Charge is capped by the power limit, the headroom
/// `(z - H) / eta`, and the source's spare power.
pub fn action_bounds<T: Scalar>(
    esu: &EsuState<T>,
    demand: T,
    source_power_limit: T,
    e_pv: T,
) -> ActionBounds<T> {
    let z = esu.capacity_kwh;
    if !(z > T::zero()) {
        return ActionBounds {
            low: T::zero(),
            high: T::zero(),
        };
    }
    let low = if e_pv >= demand {
        T::zero()
    } else {
        (-(esu.power_limit_kw
            .min(esu.efficiency * esu.soc_kwh)
            .min(demand))
            / z)
            .max(-T::one())
            .min(T::zero())
    };
    let high = (esu
        .power_limit_kw
        .min((z - esu.soc_kwh) / esu.efficiency)
        .min(source_power_limit - demand)
        / z)
        .max(T::zero())
        .min(T::one());
    ActionBounds { low, high }
}

/// Unit-cost recurrence for stored energy: a charge of `e_in` (grid side) at
/// grid cost `grid_cost` is averaged into the stock; an empty device resets
/// to zero.
pub fn update_storage_cost<T: Scalar>(
    unit_cost_prev: T,
    soc_prev: T,
    e_in: T,
    grid_cost: T,
    soc_new: T,
) -> T {
    if soc_new <= T::zero() {
        T::zero()
    } else if e_in > T::zero() {
        (unit_cost_prev * soc_prev + e_in * grid_cost) / soc_new
    } else {
        unit_cost_prev
    }
}

/// Apply an action fraction to the device for one hour. Returns the new
/// device state and the signed grid-side energy transfer (positive intake
/// when charging, negative delivery when discharging).
pub fn esu_step<T: Scalar>(esu: &EsuState<T>, fraction: T, grid_cost: T) -> (EsuState<T>, T) {
    let z = esu.capacity_kwh;
    let mut next = *esu;
    if !(z > T::zero()) || fraction == T::zero() {
        return (next, T::zero());
    }
    if fraction > T::zero() {
        let intake = fraction * z;
        let stored = intake * esu.efficiency;
        next.soc_kwh = (esu.soc_kwh + stored).min(z).max(T::zero());
        next.unit_cost =
            update_storage_cost(esu.unit_cost, esu.soc_kwh, intake, grid_cost, next.soc_kwh);
        (next, intake)
    } else {
        let drawn = -fraction * z; // state-of-charge side
        let delivered = drawn * esu.efficiency;
        next.soc_kwh = (esu.soc_kwh - drawn).max(T::zero()).min(z);
        if next.soc_kwh <= T::zero() {
            next.soc_kwh = T::zero();
            next.unit_cost = T::zero();
        }
        (next, -delivered)
    }
}

/// Surplus-generation reward: grid cost times how far the agent's draw beats
/// the no-storage/no-generation baseline draw.
pub fn reward_pv<T: Scalar>(grid_cost: T, grid_baseline: T, grid_agent: T) -> T {
    grid_cost * (grid_baseline - grid_agent)
}

/// Storage-management penalty: the cost of the stored energy used this step
/// blended with the cost of grid usage, weighted by `zeta`.
pub fn reward_storage<T: Scalar>(
    zeta: T,
    unit_cost: T,
    soc_prev: T,
    soc_now: T,
    grid_cost: T,
    grid_term: T,
    alpha: T,
) -> T {
    let discharged = (soc_prev - soc_now).max(T::zero());
    (T::one() - zeta) * unit_cost * discharged * (T::one() - alpha) + zeta * grid_cost * grid_term
}

/// Environment knobs: reward blend `zeta`, stored-cost discount `alpha`, and
/// the episode horizon in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnvConfig<T: Scalar> {
    pub zeta: T,
    pub alpha: T,
    pub episode_hours: usize,
}

impl<T: Scalar> Default for EnvConfig<T> {
    fn default() -> Self {
        EnvConfig {
            zeta: T::lit(0.8),
            alpha: T::zero(),
            episode_hours: 8760,
        }
    }
}

/// Observable state at one step: grid costs, storage levels, generation,
/// load, calendar features, and optionally the forecaster's next-step
/// predictions of (price, solar, load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnvState<T: Scalar> {
    pub price: T,
    pub carbon: T,
    pub soc: Vec<T>,
    pub solar: T,
    pub load: T,
    pub temporal: Temporal,
    pub forecast: Option<[T; 3]>,
}

impl<T: Scalar> EnvState<T> {
    /// Flat feature vector in a fixed layout: costs, SoC fractions, solar,
    /// load, sine-cosine calendar encoding, then any forecast extension.
    pub fn to_observation(&self) -> Vec<T> {
        let mut obs = Vec::with_capacity(5 + self.soc.len() + 6 + 3);
        obs.push(self.price);
        obs.push(self.carbon);
        obs.extend_from_slice(&self.soc);
        obs.push(self.solar);
        obs.push(self.load);
        obs.extend_from_slice(&temporal_features::<T>(self.temporal));
        if let Some(f) = self.forecast {
            obs.extend_from_slice(&f);
        }
        obs
    }

    pub fn observation_dim(soc_count: usize, with_forecast: bool) -> usize {
        4 + soc_count + 6 + if with_forecast { 3 } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepInfo<T: Scalar> {
    /// Grid draw of the no-storage / no-generation baseline this step.
    pub baseline_grid: T,
    /// Action fraction actually applied (after any projection).
    pub applied_fraction: T,
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepOutcome<T: Scalar> {
    pub next_state: EnvState<T>,
    pub reward: T,
    pub grid_energy: T,
    pub info: StepInfo<T>,
}

/// Accumulated episode costs, agent vs. baseline, split by objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpisodeCosts<T: Scalar> {
    pub agent_price: T,
    pub agent_carbon: T,
    pub baseline_price: T,
    pub baseline_carbon: T,
}

/// One building's hourly simulation. Instances are cheap to clone and own
/// all mutable state; run one per rollout worker.
#[derive(Debug, Clone)]
pub struct BuildingEnv<T: Scalar> {
    building: BuildingSpec<T>,
    tariff: TariffSchedule<T>,
    /// Per-step next-hour forecasts of (price, solar, load), if enabled.
    forecasts: Option<Vec<[T; 3]>>,
    config: EnvConfig<T>,
    disable_pv: bool,
    esu: EsuState<T>,
    t: usize,
    steps_taken: usize,
    horizon: usize,
    terminal: bool,
    costs: EpisodeCosts<T>,
}

impl<T: Scalar> BuildingEnv<T> {
    pub fn new(
        building: BuildingSpec<T>,
        tariff: TariffSchedule<T>,
        config: EnvConfig<T>,
    ) -> Result<Self> {
        if tariff.len() < building.horizon() {
            return Err(Error::Environment(format!(
                "tariff covers {} hours but the building has {}",
                tariff.len(),
                building.horizon()
            )));
        }
        let esu = EsuState::empty(
            building.esu.capacity_kwh,
            building.esu.efficiency,
            building.esu.power_limit_kw,
        )?;
        Ok(BuildingEnv {
            building,
            tariff,
            forecasts: None,
            config,
            disable_pv: false,
            esu,
            t: 0,
            steps_taken: 0,
            horizon: 0,
            terminal: true,
            costs: EpisodeCosts::default(),
        })
    }

    /// Attach precomputed next-step forecasts (one entry per absolute hour).
    pub fn with_forecasts(mut self, forecasts: Vec<[T; 3]>) -> Result<Self> {
        if forecasts.len() < self.building.horizon() {
            return Err(Error::Environment(format!(
                "{} forecast entries for {} hours",
                forecasts.len(),
                self.building.horizon()
            )));
        }
        self.forecasts = Some(forecasts);
        Ok(self)
    }

    /// Zero out solar generation (baseline evaluations).
    pub fn with_pv_disabled(mut self) -> Self {
        self.disable_pv = true;
        self
    }

    /// Replace the storage device with a zero-capacity one (baselines).
    pub fn with_storage_disabled(mut self) -> Self {
        self.esu.capacity_kwh = T::zero();
        self
    }

    pub fn building(&self) -> &BuildingSpec<T> {
        &self.building
    }

    pub fn esu(&self) -> &EsuState<T> {
        &self.esu
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn costs(&self) -> EpisodeCosts<T> {
        self.costs
    }

    pub fn config(&self) -> EnvConfig<T> {
        self.config
    }

    fn solar_at(&self, t: usize) -> T {
        if self.disable_pv {
            T::zero()
        } else {
            self.building.solar.values[t]
        }
    }

    fn state_at(&self, t: usize) -> EnvState<T> {
        let t = t.min(self.building.horizon() - 1);
        EnvState {
            price: self.tariff.price[t],
            carbon: self.tariff.carbon[t],
            soc: vec![self.esu.soc_fraction()],
            solar: self.solar_at(t),
            load: self.building.load.values[t],
            temporal: self.building.load.temporal_at(t),
            forecast: self.forecasts.as_ref().map(|f| f[t]),
        }
    }

    /// Start an episode at absolute hour `t0` with an empty, zero-cost device.
    pub fn reset(&mut self, t0: usize) -> Result<EnvState<T>> {
        if t0 >= self.building.horizon() {
            return Err(Error::Environment(format!(
                "t0 = {t0} out of range (horizon {})",
                self.building.horizon()
            )));
        }
        self.esu.soc_kwh = T::zero();
        self.esu.unit_cost = T::zero();
        self.t = t0;
        self.steps_taken = 0;
        self.horizon = self.config.episode_hours.min(self.building.horizon() - t0);
        self.terminal = false;
        self.costs = EpisodeCosts::default();
        Ok(self.state_at(t0))
    }

    /// Bounds for the current step.
    pub fn bounds(&self) -> ActionBounds<T> {
        let demand = self.building.load.values[self.t];
        action_bounds(
            &self.esu,
            demand,
            self.building.source_power_limit_kw,
            self.solar_at(self.t),
        )
    }

    /// Apply an action fraction. Fractions outside the safe bounds are
    /// projected onto the nearest bound and flagged in the outcome.
    pub fn step_fraction(&mut self, fraction: T) -> Result<StepOutcome<T>> {
        if self.terminal {
            return Err(Error::Environment("episode already terminal".into()));
        }
        let t = self.t;
        let load = self.building.load.values[t];
        let solar = self.solar_at(t);
        let price = self.tariff.price[t];
        let carbon = self.tariff.carbon[t];
        let grid_cost = price + carbon;

        let bounds = self.bounds();
        let applied = bounds.project(fraction);
        let projected = applied != fraction;

        let soc_prev = self.esu.soc_kwh;
        let unit_cost_prev = self.esu.unit_cost;
        let (esu_next, e_esu) = esu_step(&self.esu, applied, grid_cost);
        let grid = energy_balance(load, e_esu, solar);
        let baseline_grid = load; // no storage, no generation

        let reward = if solar >= load {
            reward_pv(grid_cost, baseline_grid, grid)
        } else {
            let grid_term = grid + e_esu.max(T::zero());
            -reward_storage(
                self.config.zeta,
                unit_cost_prev,
                soc_prev,
                esu_next.soc_kwh,
                grid_cost,
                grid_term,
                self.config.alpha,
            )
        };

        self.esu = esu_next;
        self.costs.agent_price += grid * price;
        self.costs.agent_carbon += grid * carbon;
        self.costs.baseline_price += baseline_grid * price;
        self.costs.baseline_carbon += baseline_grid * carbon;

        self.t += 1;
        self.steps_taken += 1;
        if self.steps_taken >= self.horizon {
            self.terminal = true;
        }
        Ok(StepOutcome {
            next_state: self.state_at(self.t),
            reward,
            grid_energy: grid,
            info: StepInfo {
                baseline_grid,
                applied_fraction: applied,
                projected,
            },
        })
    }
}
