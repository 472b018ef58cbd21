//! Building load/generation series, tariff schedules, and the on-disk CSV
//! formats.
//!
//! Two CSV schemas are canonical (UTF-8, header row required, `.` decimal
//! separator):
//!
//! - building file: `month,day_type,hour,non_shiftable_load_kwh,solar_generation_kwh`
//! - tariff file:   `price_usd_per_kwh,carbon_cost_per_kwh`
//!
//! Thermal demand is folded into the non-shiftable load column; the simulator
//! does not model a separate thermal chain.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Non-leap month lengths, January first.
pub const MONTH_DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Calendar position of one hourly sample: month 1–12, day type 1–7, hour 0–23.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Temporal {
    pub month: u8,
    pub day_type: u8,
    pub hour: u8,
}

impl Temporal {
    pub fn new(month: u8, day_type: u8, hour: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} not in 1..=12")));
        }
        if !(1..=7).contains(&day_type) {
            return Err(Error::InvalidArgument(format!(
                "day_type {day_type} not in 1..=7"
            )));
        }
        if hour > 23 {
            return Err(Error::InvalidArgument(format!("hour {hour} not in 0..=23")));
        }
        Ok(Temporal {
            month,
            day_type,
            hour,
        })
    }

    /// Calendar position `offset` hours later. The series is anchored to day 1
    /// of its start month; months follow the non-leap calendar and wrap after
    /// December.
    pub fn advance(&self, offset: usize) -> Temporal {
        let total = self.hour as usize + offset;
        let hour = (total % 24) as u8;
        let days = total / 24;
        let day_type = (((self.day_type as usize - 1) + days) % 7 + 1) as u8;

        let mut month_idx = self.month as usize - 1;
        let mut remaining = days as u32;
        let mut day_in_month = 0u32;
        loop {
            let left = MONTH_DAYS[month_idx] - day_in_month;
            if remaining < left {
                break;
            }
            remaining -= left;
            day_in_month = 0;
            month_idx = (month_idx + 1) % 12;
        }
        Temporal {
            month: (month_idx + 1) as u8,
            day_type,
            hour,
        }
    }
}

/// Hourly series of one building signal (non-shiftable load or solar
/// generation) with its calendar start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LoadSeries<T: Scalar> {
    pub values: Vec<T>,
    pub start_month: u8,
    pub start_hour: u8,
    pub start_day_type: u8,
    pub building_id: String,
}

impl<T: Scalar> LoadSeries<T> {
    pub fn new(
        values: Vec<T>,
        start_month: u8,
        start_day_type: u8,
        start_hour: u8,
        building_id: impl Into<String>,
    ) -> Result<Self> {
        Temporal::new(start_month, start_day_type, start_hour)?;
        if values.len() < 2 {
            return Err(Error::InvalidSeries(format!(
                "series requires at least 2 samples, got {}",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < T::zero() {
                return Err(Error::InvalidSeries(format!(
                    "value {v} at index {i} is negative or non-finite"
                )));
            }
        }
        Ok(LoadSeries {
            values,
            start_month,
            start_hour,
            start_day_type,
            building_id: building_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> Temporal {
        Temporal {
            month: self.start_month,
            day_type: self.start_day_type,
            hour: self.start_hour,
        }
    }

    /// Calendar position of sample `t`.
    pub fn temporal_at(&self, t: usize) -> Temporal {
        self.start().advance(t)
    }

    /// Contiguous sub-series with the temporal index advanced by `offset`.
    ///
    /// `start_hour` and `start_day_type` advance exactly; `start_month` keeps
    /// the parent's label. Month granularity is coarser than slicing (the day
    /// of month is not part of the series index), and keeping the label is the
    /// only rule under which two slices compose into one.
    pub fn slice_window(&self, offset: usize, length: usize) -> Result<LoadSeries<T>> {
        if offset + length > self.len() {
            return Err(Error::WindowOutOfRange {
                offset,
                length,
                len: self.len(),
            });
        }
        let total = self.start_hour as usize + offset;
        let days = total / 24;
        Ok(LoadSeries {
            values: self.values[offset..offset + length].to_vec(),
            start_month: self.start_month,
            start_hour: (total % 24) as u8,
            start_day_type: (((self.start_day_type as usize - 1) + days) % 7 + 1) as u8,
            building_id: self.building_id.clone(),
        })
    }
}

/// A contiguous high-cost interval: hours `start_hour..end_hour` of day `day`
/// (0-based day index from the start of the schedule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakWindow {
    pub day: usize,
    pub start_hour: u8,
    pub end_hour: u8,
}

impl PeakWindow {
    pub fn contains(&self, t: usize) -> bool {
        let day = t / 24;
        let hour = (t % 24) as u8;
        day == self.day && (self.start_hour..self.end_hour).contains(&hour)
    }
}

/// Paired hourly series of financial and CO2-equivalent cost per kWh of grid
/// energy, plus the declared high-cost intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TariffSchedule<T: Scalar> {
    pub price: Vec<T>,
    pub carbon: Vec<T>,
    pub peak_hours: Vec<PeakWindow>,
}

impl<T: Scalar> TariffSchedule<T> {
    pub fn new(price: Vec<T>, carbon: Vec<T>, peak_hours: Vec<PeakWindow>) -> Result<Self> {
        if price.is_empty() {
            return Err(Error::InvalidSeries("empty schedule".into()));
        }
        if price.len() != carbon.len() {
            return Err(Error::InvalidSeries(format!(
                "price length {} != carbon length {}",
                price.len(),
                carbon.len()
            )));
        }
        for (name, series) in [("price", &price), ("carbon", &carbon)] {
            for (i, v) in series.iter().enumerate() {
                if !v.is_finite() || *v < T::zero() {
                    return Err(Error::InvalidSeries(format!(
                        "{name} value {v} at index {i} is negative or non-finite"
                    )));
                }
            }
        }
        Ok(TariffSchedule {
            price,
            carbon,
            peak_hours,
        })
    }

    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    pub fn is_peak(&self, t: usize) -> bool {
        self.peak_hours.iter().any(|w| w.contains(t))
    }

    /// Flat time-of-use schedule: `peak` prices during
    /// `peak_start..peak_end` every day, `off` prices elsewhere.
    pub fn time_of_use(
        days: usize,
        off_price: T,
        peak_price: T,
        off_carbon: T,
        peak_carbon: T,
        peak_start: u8,
        peak_end: u8,
    ) -> Result<Self> {
        if days == 0 {
            return Err(Error::InvalidArgument("days must be >= 1".into()));
        }
        if peak_end > 24 || peak_start >= peak_end {
            return Err(Error::InvalidArgument(format!(
                "invalid peak interval {peak_start}..{peak_end}"
            )));
        }
        let mut price = Vec::with_capacity(days * 24);
        let mut carbon = Vec::with_capacity(days * 24);
        let mut peaks = Vec::with_capacity(days);
        for day in 0..days {
            peaks.push(PeakWindow {
                day,
                start_hour: peak_start,
                end_hour: peak_end,
            });
            for hour in 0..24u8 {
                if (peak_start..peak_end).contains(&hour) {
                    price.push(peak_price);
                    carbon.push(peak_carbon);
                } else {
                    price.push(off_price);
                    carbon.push(off_carbon);
                }
            }
        }
        TariffSchedule::new(price, carbon, peaks)
    }
}

/// Energy storage unit ratings. Capacity `z` in kWh, efficiency in (0,1]
/// applied symmetrically on intake and delivery, power limit in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EsuParams<T: Scalar> {
    pub capacity_kwh: T,
    pub efficiency: T,
    pub power_limit_kw: T,
}

/// One building: aligned load and solar series, ESU ratings, and the maximum
/// power of the source feeding the ESU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BuildingSpec<T: Scalar> {
    pub load: LoadSeries<T>,
    pub solar: LoadSeries<T>,
    pub esu: EsuParams<T>,
    pub source_power_limit_kw: T,
}

pub const DEFAULT_ESU_CAPACITY_KWH: f64 = 12.0;
pub const DEFAULT_ESU_EFFICIENCY: f64 = 0.68;
pub const DEFAULT_ESU_POWER_LIMIT_KW: f64 = 4.8;
pub const DEFAULT_SOURCE_POWER_LIMIT_KW: f64 = 8.0;

impl<T: Scalar> BuildingSpec<T> {
    pub fn new(
        load: LoadSeries<T>,
        solar: LoadSeries<T>,
        esu: EsuParams<T>,
        source_power_limit_kw: T,
    ) -> Result<Self> {
        if load.len() != solar.len() {
            return Err(Error::InvalidSeries(format!(
                "load length {} != solar length {} (misaligned series)",
                load.len(),
                solar.len()
            )));
        }
        if load.start() != solar.start() {
            return Err(Error::InvalidSeries(
                "load and solar series have different calendar starts".into(),
            ));
        }
        if !(esu.capacity_kwh > T::zero()) {
            return Err(Error::InvalidArgument("ESU capacity must be > 0".into()));
        }
        if !(esu.efficiency > T::zero() && esu.efficiency <= T::one()) {
            return Err(Error::InvalidArgument(
                "ESU efficiency must be in (0, 1]".into(),
            ));
        }
        if !(esu.power_limit_kw > T::zero()) {
            return Err(Error::InvalidArgument("ESU power limit must be > 0".into()));
        }
        if !(source_power_limit_kw > T::zero()) {
            return Err(Error::InvalidArgument(
                "source power limit must be > 0".into(),
            ));
        }
        Ok(BuildingSpec {
            load,
            solar,
            esu,
            source_power_limit_kw,
        })
    }

    pub fn id(&self) -> &str {
        &self.load.building_id
    }

    pub fn horizon(&self) -> usize {
        self.load.len()
    }

    fn default_esu() -> (EsuParams<T>, T) {
        (
            EsuParams {
                capacity_kwh: T::lit(DEFAULT_ESU_CAPACITY_KWH),
                efficiency: T::lit(DEFAULT_ESU_EFFICIENCY),
                power_limit_kw: T::lit(DEFAULT_ESU_POWER_LIMIT_KW),
            },
            T::lit(DEFAULT_SOURCE_POWER_LIMIT_KW),
        )
    }
}

const BUILDING_HEADER: [&str; 5] = [
    "month",
    "day_type",
    "hour",
    "non_shiftable_load_kwh",
    "solar_generation_kwh",
];
const TARIFF_HEADER: [&str; 2] = ["price_usd_per_kwh", "carbon_cost_per_kwh"];

fn parse_cell<T: Scalar>(path: &str, row: usize, column: &str, raw: &str) -> Result<T> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::CsvRow {
        path: path.into(),
        row,
        message: format!("non-numeric {column} value {raw:?}"),
    })?;
    T::from_f64(v).ok_or_else(|| Error::CsvRow {
        path: path.into(),
        row,
        message: format!("{column} value {raw:?} not representable"),
    })
}

fn parse_int(path: &str, row: usize, column: &str, raw: &str) -> Result<u8> {
    raw.trim().parse().map_err(|_| Error::CsvRow {
        path: path.into(),
        row,
        message: format!("non-integer {column} value {raw:?}"),
    })
}

/// Load a building CSV. The calendar start is taken from the first data row;
/// later temporal columns are range-checked but otherwise informational. ESU
/// ratings are not part of the file format and default to the crate constants.
pub fn load_building_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<BuildingSpec<T>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            message: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            message: e.to_string(),
        })?
        .clone();
    for want in BUILDING_HEADER {
        if !headers.iter().any(|h| h == want) {
            return Err(Error::Csv {
                path: shown,
                message: format!("missing column {want:?}"),
            });
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let cols: Vec<usize> = BUILDING_HEADER.iter().map(|h| col(h)).collect();

    let mut load = Vec::new();
    let mut solar = Vec::new();
    let mut start: Option<Temporal> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::CsvRow {
            path: shown.clone(),
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let month = parse_int(&shown, row, "month", field(cols[0]))?;
        let day_type = parse_int(&shown, row, "day_type", field(cols[1]))?;
        let hour = parse_int(&shown, row, "hour", field(cols[2]))?;
        Temporal::new(month, day_type, hour).map_err(|e| Error::CsvRow {
            path: shown.clone(),
            row,
            message: e.to_string(),
        })?;
        if start.is_none() {
            start = Some(Temporal {
                month,
                day_type,
                hour,
            });
        }
        for (name, c, out) in [
            ("non_shiftable_load_kwh", cols[3], &mut load),
            ("solar_generation_kwh", cols[4], &mut solar),
        ] {
            let v: T = parse_cell(&shown, row, name, field(c))?;
            if !v.is_finite() || v < T::zero() {
                return Err(Error::CsvRow {
                    path: shown.clone(),
                    row,
                    message: format!("negative or non-finite {name} value {v}"),
                });
            }
            out.push(v);
        }
    }
    let start = start.ok_or_else(|| Error::Csv {
        path: shown.clone(),
        message: "empty building file".into(),
    })?;

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "building".into());
    let mk = |values: Vec<T>| {
        LoadSeries::new(values, start.month, start.day_type, start.hour, id.clone())
    };
    let (esu, source_limit) = BuildingSpec::<T>::default_esu();
    BuildingSpec::new(mk(load)?, mk(solar)?, esu, source_limit)
}

/// Write a building CSV in the canonical schema. Temporal columns are derived
/// from the series start.
pub fn write_building_csv<T: Scalar>(spec: &BuildingSpec<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&BUILDING_HEADER.join(","));
    out.push('\n');
    for t in 0..spec.horizon() {
        let k = spec.load.temporal_at(t);
        writeln!(
            out,
            "{},{},{},{},{}",
            k.month, k.day_type, k.hour, spec.load.values[t], spec.solar.values[t]
        )
        .expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a tariff CSV (price and carbon columns, no peak metadata).
pub fn load_tariff_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<TariffSchedule<T>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            message: e.to_string(),
        })?
        .clone();
    for want in TARIFF_HEADER {
        if !headers.iter().any(|h| h == want) {
            return Err(Error::Csv {
                path: shown,
                message: format!("missing column {want:?}"),
            });
        }
    }
    let price_col = headers.iter().position(|h| h == TARIFF_HEADER[0]).unwrap();
    let carbon_col = headers.iter().position(|h| h == TARIFF_HEADER[1]).unwrap();

    let mut price = Vec::new();
    let mut carbon = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::CsvRow {
            path: shown.clone(),
            row,
            message: e.to_string(),
        })?;
        for (name, c, out) in [
            ("price_usd_per_kwh", price_col, &mut price),
            ("carbon_cost_per_kwh", carbon_col, &mut carbon),
        ] {
            let v: T = parse_cell(&shown, row, name, record.get(c).unwrap_or(""))?;
            if !v.is_finite() || v < T::zero() {
                return Err(Error::CsvRow {
                    path: shown.clone(),
                    row,
                    message: format!("negative or non-finite {name} value {v}"),
                });
            }
            out.push(v);
        }
    }
    if price.is_empty() {
        return Err(Error::Csv {
            path: shown,
            message: "empty schedule".into(),
        });
    }
    TariffSchedule::new(price, carbon, Vec::new())
}

/// Write a tariff CSV. Peak metadata lives in scenario manifests, not here.
pub fn write_tariff_csv<T: Scalar>(
    schedule: &TariffSchedule<T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&TARIFF_HEADER.join(","));
    out.push('\n');
    for t in 0..schedule.len() {
        writeln!(out, "{},{}", schedule.price[t], schedule.carbon[t]).expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Knobs for the synthetic corpus generator. `exact()` turns every modulation
/// off so buildings tile their archetype's base daily shape verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    /// Gaussian noise sigma as a fraction of the archetype's mean level.
    pub noise_sigma: f64,
    /// Per-building amplitude factor drawn from `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
    /// Relative amplitude of the annual seasonal modulation.
    pub seasonal_amplitude: f64,
    /// Weekend scaling (archetype-specific weekday/weekend contrast).
    pub weekend_effect: bool,
    /// Peak-kW scale range for each building's solar array.
    pub solar_peak_kw: (f64, f64),
    /// ESU capacity range in kWh; power limit is 0.4x capacity.
    pub esu_capacity_kwh: (f64, f64),
    pub esu_efficiency: f64,
    pub source_power_limit_kw: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            noise_sigma: 0.05,
            amplitude_jitter: 0.10,
            seasonal_amplitude: 0.15,
            weekend_effect: true,
            solar_peak_kw: (0.2, 0.4),
            esu_capacity_kwh: (10.0, 14.0),
            esu_efficiency: DEFAULT_ESU_EFFICIENCY,
            source_power_limit_kw: DEFAULT_SOURCE_POWER_LIMIT_KW,
        }
    }
}

impl CorpusParams {
    /// All modulations off: buildings reproduce their archetype shape exactly.
    pub fn exact() -> Self {
        CorpusParams {
            noise_sigma: 0.0,
            amplitude_jitter: 0.0,
            seasonal_amplitude: 0.0,
            weekend_effect: false,
            ..CorpusParams::default()
        }
    }
}

/// 24-hour base daily shape for archetype `k` (kWh per hour).
///
/// The first three are a residential evening peak, a commercial midday
/// plateau, and a flat industrial profile; further archetypes are offset
/// single-bump shapes.
pub fn archetype_shape(k: usize) -> [f64; 24] {
    let mut shape = [0.0f64; 24];
    match k {
        0 => {
            // residential: morning bump + strong evening peak
            for (h, s) in shape.iter_mut().enumerate() {
                let hf = h as f64;
                let morning = 1.75 * (-((hf - 7.5) * (hf - 7.5)) / 3.0).exp();
                let evening = 4.0 * (-((hf - 22.5) * (hf - 22.5)) / 3.0).exp();
                *s = 1.15 + morning + evening;
            }
        }
        1 => {
            // commercial: plateau over business hours
            for (h, s) in shape.iter_mut().enumerate() {
                let hf = h as f64;
                let rise = 1.0 / (1.0 + (-(hf - 8.0) * 1.8).exp());
                let fall = 1.0 / (1.0 + ((hf - 17.5) * 1.8).exp());
                *s = 1.1 + 4.2 * rise * fall;
            }
        }
        2 => {
            // industrial: nearly flat around-the-clock demand
            for (h, s) in shape.iter_mut().enumerate() {
                *s = 2.6 + 0.25 * ((h as f64) * std::f64::consts::PI / 12.0).sin();
            }
        }
        k => {
            // additional archetypes: single bump walking around the clock
            let center = ((k * 5) % 24) as f64;
            for (h, s) in shape.iter_mut().enumerate() {
                let mut d = (h as f64 - center).abs();
                d = d.min(24.0 - d);
                *s = 1.2 + 3.75 * (-(d * d) / 8.0).exp();
            }
        }
    }
    shape
}

fn weekend_factor(archetype: usize, day_type: u8) -> f64 {
    // day types 6 and 7 are the weekend
    let weekend = day_type >= 6;
    match archetype {
        0 if weekend => 1.15,
        1 if weekend => 0.55,
        _ => 1.0,
    }
}

/// Synthesize `n_buildings` buildings of `m` hours drawn from
/// `archetype_count` base daily shapes, each returned with its ground-truth
/// archetype label. Fully determined by `seed`.
pub fn generate_synthetic_corpus<T: Scalar>(
    n_buildings: usize,
    m: usize,
    archetype_count: usize,
    seed: u64,
    params: &CorpusParams,
) -> Result<Vec<(BuildingSpec<T>, usize)>> {
    if archetype_count == 0 || n_buildings < archetype_count {
        return Err(Error::InvalidArgument(format!(
            "need n_buildings >= archetype_count >= 1, got {n_buildings} and {archetype_count}"
        )));
    }
    if m < 48 {
        return Err(Error::InvalidArgument(format!(
            "need m >= 48 hours, got {m}"
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = Temporal {
        month: 1,
        day_type: 1,
        hour: 0,
    };
    let mut corpus = Vec::with_capacity(n_buildings);
    for b in 0..n_buildings {
        // round-robin keeps every archetype represented
        let label = b % archetype_count;
        let shape = archetype_shape(label);
        let shape_mean = shape.iter().sum::<f64>() / 24.0;

        let amplitude = if params.amplitude_jitter > 0.0 {
            rng.gen_range(1.0 - params.amplitude_jitter..=1.0 + params.amplitude_jitter)
        } else {
            1.0
        };
        let season_phase = rng.gen_range(0.0..1.0);
        let noise = Normal::new(0.0, (params.noise_sigma * shape_mean).max(0.0))
            .expect("valid noise sigma");
        let solar_peak = rng.gen_range(params.solar_peak_kw.0..=params.solar_peak_kw.1);
        let capacity = rng.gen_range(params.esu_capacity_kwh.0..=params.esu_capacity_kwh.1);
        let solar_noise = Normal::new(0.0, (0.5 * params.noise_sigma * solar_peak).max(0.0))
            .expect("valid sigma");

        let mut load = Vec::with_capacity(m);
        let mut solar = Vec::with_capacity(m);
        for t in 0..m {
            let k = start.advance(t);
            let hour = k.hour as usize;
            let seasonal = 1.0
                + params.seasonal_amplitude
                    * (2.0 * std::f64::consts::PI * (t as f64 / 8760.0 + season_phase)).sin();
            let week = if params.weekend_effect {
                weekend_factor(label, k.day_type)
            } else {
                1.0
            };
            let mut v = amplitude * shape[hour] * seasonal * week;
            if params.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            load.push(T::lit(v.max(0.0)));

            // daylight bell between 06:00 and 18:00, stronger in summer
            let sun = if (6..18).contains(&hour) {
                let x = (hour as f64 - 6.0) / 12.0;
                (std::f64::consts::PI * x).sin().powf(1.5)
            } else {
                0.0
            };
            let summer = 1.0
                - 0.35
                    * (2.0 * std::f64::consts::PI * (t as f64 + 24.0 * 15.0) / 8760.0).cos();
            let mut s = solar_peak * sun * summer;
            if params.noise_sigma > 0.0 && s > 0.0 {
                s += solar_noise.sample(&mut rng);
            }
            solar.push(T::lit(s.max(0.0)));
        }

        let id = format!("b{b:03}");
        let load = LoadSeries::new(load, start.month, start.day_type, start.hour, id.clone())?;
        let solar = LoadSeries::new(solar, start.month, start.day_type, start.hour, id)?;
        let esu = EsuParams {
            capacity_kwh: T::lit(capacity),
            efficiency: T::lit(params.esu_efficiency),
            power_limit_kw: T::lit(0.4 * capacity),
        };
        let spec = BuildingSpec::new(load, solar, esu, T::lit(params.source_power_limit_kw))?;
        corpus.push((spec, label));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_series(n: usize, v: f64) -> LoadSeries<f64> {
        LoadSeries::new(vec![v; n], 1, 1, 0, "t").unwrap()
    }

    #[test]
    fn building_csv_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let mut text = String::from("month,day_type,hour,non_shiftable_load_kwh,solar_generation_kwh\n");
        for t in 0..24 {
            text.push_str(&format!("1,1,{t},1.0,0.0\n"));
        }
        std::fs::write(&path, text).unwrap();
        let spec: BuildingSpec<f64> = load_building_csv(&path).unwrap();
        assert_eq!(spec.load.len(), 24);
        assert!(spec.load.values.iter().all(|&v| v == 1.0));
        assert_eq!(spec.load.start_hour, 0);
    }

    #[test]
    fn building_csv_negative_load_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let mut text = String::from("month,day_type,hour,non_shiftable_load_kwh,solar_generation_kwh\n");
        for t in 0..24 {
            let load = if t == 6 { "-3".to_string() } else { "1.0".to_string() };
            text.push_str(&format!("1,1,{t},{load},0.0\n"));
        }
        std::fs::write(&path, text).unwrap();
        let err = load_building_csv::<f64>(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 7"), "want row 7 in {msg:?}");
    }

    #[test]
    fn building_csv_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        std::fs::write(&path, "month,day_type,hour,non_shiftable_load_kwh\n1,1,0,1.0\n").unwrap();
        let err = load_building_csv::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("solar_generation_kwh"));
    }

    #[test]
    fn building_csv_round_trip() {
        let corpus =
            generate_synthetic_corpus::<f64>(1, 8760, 1, 9, &CorpusParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b000.csv");
        write_building_csv(&corpus[0].0, &path).unwrap();
        let reread: BuildingSpec<f64> = load_building_csv(&path).unwrap();
        assert_eq!(reread.load.values, corpus[0].0.load.values);
        assert_eq!(reread.solar.values, corpus[0].0.solar.values);
        assert_eq!(reread.load.start(), corpus[0].0.load.start());
    }

    #[test]
    fn tariff_csv_flat_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut text = String::from("price_usd_per_kwh,carbon_cost_per_kwh\n");
        for _ in 0..24 {
            text.push_str("0.2,0.1\n");
        }
        std::fs::write(&path, text).unwrap();
        let tariff: TariffSchedule<f64> = load_tariff_csv(&path).unwrap();
        assert_eq!(tariff.len(), 24);
        assert!(tariff.price.iter().all(|&p| p == 0.2));
        assert!(tariff.carbon.iter().all(|&c| c == 0.1));

        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "price_usd_per_kwh,carbon_cost_per_kwh\n").unwrap();
        let err = load_tariff_csv::<f64>(&empty).unwrap_err();
        assert!(err.to_string().contains("empty schedule"));
    }

    #[test]
    fn tariff_csv_round_trip() {
        let tariff =
            TariffSchedule::<f64>::time_of_use(365, 0.10, 0.40, 0.04, 0.08, 17, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_tariff_csv(&tariff, &path).unwrap();
        let reread: TariffSchedule<f64> = load_tariff_csv(&path).unwrap();
        assert_eq!(reread.price, tariff.price);
        assert_eq!(reread.carbon, tariff.carbon);
    }

    #[test]
    fn tariff_length_mismatch_rejected() {
        let err = TariffSchedule::new(vec![0.1, 0.2], vec![0.1], Vec::new()).unwrap_err();
        assert!(err.to_string().contains("length"));
    }

    #[test]
    fn slice_identity_and_day_advance() {
        let s = flat_series(72, 1.0);
        let whole = s.slice_window(0, 72).unwrap();
        assert_eq!(whole, s);

        let next = s.slice_window(24, 24).unwrap();
        assert_eq!(next.start_hour, 0);
        assert_eq!(next.start_day_type, 2);
        assert_eq!(next.len(), 24);

        let week = flat_series(8760, 1.0).slice_window(0, 168).unwrap();
        assert_eq!(week.len(), 168);
    }

    #[test]
    fn slice_out_of_range() {
        let s = flat_series(48, 1.0);
        assert!(s.slice_window(40, 9).is_err());
    }

    #[test]
    fn corpus_deterministic_and_labeled() {
        let p = CorpusParams::default();
        let a = generate_synthetic_corpus::<f64>(30, 168, 3, 7, &p).unwrap();
        let b = generate_synthetic_corpus::<f64>(30, 168, 3, 7, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(_, label)| *label < 3));
        for k in 0..3 {
            assert!(a.iter().filter(|(_, l)| *l == k).count() >= 1);
        }
    }

    #[test]
    fn corpus_zero_noise_reproduces_shapes() {
        let corpus =
            generate_synthetic_corpus::<f64>(3, 96, 3, 3, &CorpusParams::exact()).unwrap();
        for (spec, label) in &corpus {
            let shape = archetype_shape(*label);
            for (t, v) in spec.load.values.iter().enumerate() {
                assert_eq!(*v, shape[t % 24], "building {} hour {t}", spec.id());
            }
        }
    }

    #[test]
    fn corpus_mean_daily_profile_tracks_shape() {
        let corpus =
            generate_synthetic_corpus::<f64>(30, 8760, 3, 42, &CorpusParams::default()).unwrap();
        for k in 0..3 {
            let shape = archetype_shape(k);
            let mut mean = [0.0f64; 24];
            let mut count = 0usize;
            for (spec, label) in corpus.iter().filter(|(_, l)| *l == k) {
                count += 1;
                let days = spec.load.len() / 24;
                for h in 0..24 {
                    let mut s = 0.0;
                    for d in 0..days {
                        s += spec.load.values[d * 24 + h];
                    }
                    mean[h] += s / days as f64;
                }
                let _ = label;
            }
            for v in mean.iter_mut() {
                *v /= count as f64;
            }
            let corr = correlation(&mean, &shape);
            assert!(corr > 0.9, "archetype {k} correlation {corr}");
        }
    }

    fn correlation(a: &[f64; 24], b: &[f64; 24]) -> f64 {
        let ma = a.iter().sum::<f64>() / 24.0;
        let mb = b.iter().sum::<f64>() / 24.0;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for h in 0..24 {
            num += (a[h] - ma) * (b[h] - mb);
            va += (a[h] - ma).powi(2);
            vb += (b[h] - mb).powi(2);
        }
        num / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn temporal_advance_crosses_months() {
        let start = Temporal {
            month: 1,
            day_type: 1,
            hour: 0,
        };
        assert_eq!(start.advance(31 * 24).month, 2);
        assert_eq!(start.advance((31 + 28) * 24).month, 3);
        assert_eq!(start.advance(8760).month, 1); // wraps a full year
        let k = start.advance(25);
        assert_eq!((k.day_type, k.hour), (2, 1));
    }

    proptest! {
        #[test]
        fn slice_composes(off1 in 0usize..60, len1 in 2usize..60, off2 in 0usize..30, len2 in 2usize..30) {
            prop_assume!(off1 + len1 <= 120);
            prop_assume!(off2 + len2 <= len1);
            let s = flat_series(120, 0.5);
            let once = s.slice_window(off1 + off2, len2).unwrap();
            let twice = s.slice_window(off1, len1).unwrap().slice_window(off2, len2).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn corpus_values_nonnegative(seed in 0u64..50) {
            let corpus = generate_synthetic_corpus::<f64>(4, 72, 2, seed, &CorpusParams::default()).unwrap();
            for (spec, _) in corpus {
                prop_assert!(spec.load.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
                prop_assert!(spec.solar.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
            }
        }
    }
}
