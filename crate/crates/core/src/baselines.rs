//! Non-learned benchmark policies: the time-of-use rule and uniform random
//! action selection over the valid set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{nearest_valid, ActionMask, ActionTable};
use crate::scalar::Scalar;

/// Rule-based controller settings: fixed charge/discharge fractions of
/// capacity per hour, driven by the tariff's declared peak set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RbcConfig<T: Scalar> {
    pub charge_fraction: T,
    pub discharge_fraction: T,
}

impl<T: Scalar> Default for RbcConfig<T> {
    fn default() -> Self {
        RbcConfig {
            charge_fraction: T::lit(0.1),
            discharge_fraction: T::lit(0.1),
        }
    }
}

/// Deterministic rule: discharge during peak hours while charged, charge
/// during off-peak hours, idle otherwise; the intent is projected onto the
/// nearest mask-valid table entry.
pub fn rbc_action<T: Scalar>(
    is_peak: bool,
    soc_kwh: T,
    mask: &ActionMask,
    table: &ActionTable<T>,
    cfg: &RbcConfig<T>,
) -> usize {
    let intent = if is_peak {
        if soc_kwh > T::zero() {
            -cfg.discharge_fraction
        } else {
            T::zero()
        }
    } else {
        cfg.charge_fraction
    };
    nearest_valid(table, mask, intent)
}

/// Uniformly random choice over the mask-valid actions.
pub fn random_action(mask: &ActionMask, rng: &mut impl Rng) -> usize {
    let k = mask.count();
    debug_assert!(k > 0);
    let pick = rng.gen_range(0..k);
    mask.valid_indices().nth(pick).expect("pick < count")
}
