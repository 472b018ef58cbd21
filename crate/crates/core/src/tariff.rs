//! Stochastically perturbed tariff scenarios for robustness evaluation:
//! Gaussian noise on the price/carbon series and randomized daily high-cost
//! intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PeakWindow, TariffSchedule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scenario noise: one `(mu, sigma)` pair is drawn per scenario from these
/// uniform bounds, then each point gets `N(mu, sigma^2)` noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu_bounds: (f64, f64),
    pub sigma_bounds: (f64, f64),
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mu_bounds.0 > self.mu_bounds.1 || self.sigma_bounds.0 > self.sigma_bounds.1 {
            return Err(Error::InvalidArgument("noise bounds out of order".into()));
        }
        if self.sigma_bounds.0 < 0.0 {
            return Err(Error::InvalidArgument("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Additive Gaussian perturbation of a series, floored at zero. Returns the
/// noisy series and the `(mu, sigma)` actually drawn.
pub fn perturb_series<T: Scalar>(series: &[T], spec: &NoiseSpec) -> Result<(Vec<T>, f64, f64)> {
    spec.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidSeries("empty series".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mu = rng.gen_range(spec.mu_bounds.0..=spec.mu_bounds.1);
    let sigma = rng.gen_range(spec.sigma_bounds.0..=spec.sigma_bounds.1);
    let noisy = if sigma > 0.0 {
        let normal = Normal::new(mu, sigma).expect("validated sigma");
        series
            .iter()
            .map(|&x| (x + T::lit(normal.sample(&mut rng))).max(T::zero()))
            .collect()
    } else {
        series.iter().map(|&x| (x + T::lit(mu)).max(T::zero())).collect()
    };
    Ok((noisy, mu, sigma))
}

/// Mark one seeded random contiguous interval of `peak_hours_per_day` hours
/// per day as high-cost, multiplying its price by `peak_multiplier`.
/// Off-interval prices are untouched; the peak metadata is replaced.
pub fn randomize_peaks<T: Scalar>(
    schedule: &TariffSchedule<T>,
    peak_hours_per_day: usize,
    peak_multiplier: T,
    seed: u64,
) -> Result<TariffSchedule<T>> {
    if peak_hours_per_day > 24 {
        return Err(Error::InvalidArgument(format!(
            "peak_hours_per_day = {peak_hours_per_day} exceeds a day"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut price = schedule.price.clone();
    let mut peaks = Vec::new();
    if peak_hours_per_day > 0 {
        let mut day = 0usize;
        while day * 24 < schedule.len() {
            let day_len = (schedule.len() - day * 24).min(24);
            let span = peak_hours_per_day.min(day_len);
            let start = rng.gen_range(0..=day_len - span);
            for h in start..start + span {
                price[day * 24 + h] *= peak_multiplier;
            }
            peaks.push(PeakWindow {
                day,
                start_hour: start as u8,
                end_hour: (start + span) as u8,
            });
            day += 1;
        }
    }
    TariffSchedule::new(price, schedule.carbon.clone(), peaks)
}

/// How a scenario was generated; written next to each scenario CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub scenario_id: String,
    pub seed: u64,
    pub price_mu: f64,
    pub price_sigma: f64,
    pub carbon_mu: f64,
    pub carbon_sigma: f64,
    pub peak_multiplier: f64,
    pub peak_windows: Vec<PeakWindow>,
}

/// Noise + peak randomization applied to a nominal schedule.
pub fn make_scenario<T: Scalar>(
    nominal: &TariffSchedule<T>,
    price_noise: &NoiseSpec,
    carbon_noise: &NoiseSpec,
    peak_hours_per_day: usize,
    peak_multiplier: T,
    peak_seed: u64,
    scenario_id: String,
) -> Result<(TariffSchedule<T>, ScenarioManifest)> {
    let (price, price_mu, price_sigma) = perturb_series(&nominal.price, price_noise)?;
    let (carbon, carbon_mu, carbon_sigma) = perturb_series(&nominal.carbon, carbon_noise)?;
    let noisy = TariffSchedule::new(price, carbon, nominal.peak_hours.clone())?;
    let scenario = randomize_peaks(&noisy, peak_hours_per_day, peak_multiplier, peak_seed)?;
    let manifest = ScenarioManifest {
        scenario_id,
        seed: peak_seed,
        price_mu,
        price_sigma,
        carbon_mu,
        carbon_sigma,
        peak_multiplier: peak_multiplier.to_f64_lossy(),
        peak_windows: scenario.peak_hours.clone(),
    };
    Ok((scenario, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, p: f64, c: f64) -> TariffSchedule<f64> {
        TariffSchedule::new(vec![p; n], vec![c; n], Vec::new()).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let spec = NoiseSpec {
            mu_bounds: (0.0, 0.0),
            sigma_bounds: (0.0, 0.0),
            seed: 3,
        };
        let series = vec![0.1, 0.2, 0.3];
        let (noisy, mu, sigma) = perturb_series(&series, &spec).unwrap();
        assert_eq!(noisy, series);
        assert_eq!((mu, sigma), (0.0, 0.0));
    }

    #[test]
    fn noise_preserves_length_and_nonnegativity() {
        let spec = NoiseSpec {
            mu_bounds: (-0.5, -0.1),
            sigma_bounds: (0.1, 0.3),
            seed: 9,
        };
        let series = vec![0.05; 500];
        let (noisy, _, _) = perturb_series(&series, &spec).unwrap();
        assert_eq!(noisy.len(), 500);
        assert!(noisy.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn noise_mean_matches_fixed_mu() {
        let spec = NoiseSpec {
            mu_bounds: (0.1, 0.1),
            sigma_bounds: (0.05, 0.05),
            seed: 42,
        };
        let series = vec![1.0; 100_000];
        let (noisy, mu, _) = perturb_series(&series, &spec).unwrap();
        assert_eq!(mu, 0.1);
        let mean_shift =
            noisy.iter().zip(&series).map(|(n, s)| n - s).sum::<f64>() / series.len() as f64;
        assert!((mean_shift - 0.1).abs() < 0.01, "shift {mean_shift}");
    }

    #[test]
    fn seeded_scenarios_are_reproducible() {
        let spec = NoiseSpec {
            mu_bounds: (-0.1, 0.1),
            sigma_bounds: (0.0, 0.2),
            seed: 77,
        };
        let series = vec![0.5; 200];
        let a = perturb_series(&series, &spec).unwrap();
        let b = perturb_series(&series, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_multiplier_changes_only_metadata() {
        let schedule = flat(72, 0.2, 0.1);
        let out = randomize_peaks(&schedule, 4, 1.0, 5).unwrap();
        assert_eq!(out.price, schedule.price);
        assert_eq!(out.carbon, schedule.carbon);
        assert_eq!(out.peak_hours.len(), 3);
    }

    #[test]
    fn every_day_gets_exactly_the_configured_peak_hours() {
        let schedule = flat(24 * 10, 0.2, 0.1);
        let out = randomize_peaks(&schedule, 5, 3.0, 11).unwrap();
        assert_eq!(out.peak_hours.len(), 10);
        for w in &out.peak_hours {
            assert_eq!((w.end_hour - w.start_hour) as usize, 5);
        }
        // off-peak prices untouched, peak prices scaled
        for t in 0..out.len() {
            if out.is_peak(t) {
                assert_eq!(out.price[t], 0.2 * 3.0);
            } else {
                assert_eq!(out.price[t], 0.2);
            }
        }
    }

    #[test]
    fn bad_bounds_rejected() {
        let spec = NoiseSpec {
            mu_bounds: (0.2, 0.1),
            sigma_bounds: (0.0, 0.1),
            seed: 0,
        };
        assert!(perturb_series(&[1.0], &spec).is_err());
        let schedule = flat(24, 0.2, 0.1);
        assert!(randomize_peaks(&schedule, 25, 2.0, 0).is_err());
    }
}
