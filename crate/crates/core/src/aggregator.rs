//! Per-bus aggregator state: storage dynamics, the action-to-delta
//! mapping, action masking, LMP belief maintenance, and the single-period
//! reward.
//!
//! Unit convention: storage capacity is stored in kWh and converted to MWh
//! exactly once, inside [`reward`] and bid submission. Prices are $/MWh
//! throughout. Note the efficiency convention: charging at action `a`
//! stores `a / eta` and discharging removes `eta * |a|`, so round trips
//! gain energy when `eta < 1`. Shipped scenarios default to `eta = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KWH_PER_MWH: f64 = 1000.0;

/// Numeric slack when testing post-transition storage feasibility. Keeps
/// grid-aligned actions like x = 0.8, a = 0.2 valid in the face of float
/// rounding; transitions snap the same dust back into [0, 1].
const MASK_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AggregatorError {
    #[error("belief learning rate must lie in [0.5, 1], got {0}")]
    BadDelta(f64),
    #[error("action step must divide 1 into a whole number of steps, got {0}")]
    BadActionStep(f64),
    #[error("storage efficiency must lie in (0, 1], got {0}")]
    BadEfficiency(f64),
}

/// Discrete, symmetric action grid on [-1, 1] including 0 and both ends.
/// Positive actions charge, negative actions discharge, as a fraction of
/// storage capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    values: Vec<f64>,
}

impl ActionSpace {
    /// Build from a granularity step, e.g. 0.1 gives 21 actions.
    pub fn with_step(step: f64) -> Result<Self, AggregatorError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(AggregatorError::BadActionStep(step));
        }
        let n = (1.0 / step).round() as i64;
        if n < 1 || ((n as f64) * step - 1.0).abs() > 1e-9 {
            return Err(AggregatorError::BadActionStep(step));
        }
        let values = (-n..=n).map(|i| i as f64 / n as f64).collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the zero action (always present by construction).
    pub fn zero_index(&self) -> usize {
        self.values.len() / 2
    }
}

/// Realized storage delta for an action: discharging is scaled down by the
/// efficiency, charging is scaled up.
pub fn phi(action: f64, efficiency: f64) -> f64 {
    if action < 0.0 {
        efficiency * action
    } else {
        action / efficiency
    }
}

/// Indices of actions whose post-transition storage level stays in [0, 1].
/// Never empty: the zero action is always valid.
pub fn mask_actions(storage: f64, space: &ActionSpace, efficiency: f64) -> Vec<usize> {
    space
        .values
        .iter()
        .enumerate()
        .filter(|(_, &a)| {
            let next = storage + phi(a, efficiency);
            (-MASK_EPS..=1.0 + MASK_EPS).contains(&next)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Advance the storage level by one masked action. The caller must mask
/// first; a transition that leaves [0, 1] beyond float dust is a
/// programming error.
pub fn step_storage(storage: f64, action: f64, efficiency: f64) -> f64 {
    let next = storage + phi(action, efficiency);
    debug_assert!(
        (-MASK_EPS..=1.0 + MASK_EPS).contains(&next),
        "unmasked transition: x={storage}, a={action}, eta={efficiency}"
    );
    next.clamp(0.0, 1.0)
}

/// Single-period reward in dollars: the negated billing for net exchange
/// (realized storage delta plus net demand) at the believed price.
/// `capacity_kwh` is converted to MWh here, the single conversion site.
pub fn reward(
    believed_price: f64,
    capacity_kwh: f64,
    action: f64,
    efficiency: f64,
    net_demand: f64,
) -> f64 {
    -believed_price * (capacity_kwh / KWH_PER_MWH) * (phi(action, efficiency) + net_demand)
}

/// Belief learning-rate hyperparameter, constrained to [0.5, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BeliefUpdateParams {
    delta: f64,
}

impl BeliefUpdateParams {
    pub fn new(delta: f64) -> Result<Self, AggregatorError> {
        if !(0.5..=1.0).contains(&delta) {
            return Err(AggregatorError::BadDelta(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl TryFrom<f64> for BeliefUpdateParams {
    type Error = AggregatorError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<BeliefUpdateParams> for f64 {
    fn from(p: BeliefUpdateParams) -> f64 {
        p.delta
    }
}

/// One step of the belief recursion: move entry `h` toward the observed
/// price with step size delta / sqrt(k + 1). All other entries are copied
/// unchanged.
pub fn update_belief(
    belief: &[f64],
    h: usize,
    day: usize,
    observed_price: f64,
    params: BeliefUpdateParams,
) -> Vec<f64> {
    let mut next = belief.to_vec();
    let step = params.delta() / ((day as f64) + 1.0).sqrt();
    next[h] -= step * (belief[h] - observed_price);
    next
}

/// One aggregator's evolving state: live storage, capacity, efficiency,
/// and the per-hour LMP belief.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    pub bus: usize,
    /// Fraction of capacity, in [0, 1].
    pub storage_level: f64,
    /// Per-prosumer (representative) storage capacity, kWh.
    pub capacity_kwh: f64,
    pub efficiency: f64,
    /// One believed price per hour-of-day, $/MWh.
    pub belief: Vec<f64>,
}

impl AggregatorState {
    pub fn new(
        bus: usize,
        storage_level: f64,
        capacity_kwh: f64,
        efficiency: f64,
        belief: Vec<f64>,
    ) -> Result<Self, AggregatorError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(AggregatorError::BadEfficiency(efficiency));
        }
        debug_assert!((0.0..=1.0).contains(&storage_level));
        debug_assert!(belief.iter().all(|b| b.is_finite()));
        Ok(Self { bus, storage_level, capacity_kwh, efficiency, belief })
    }

    pub fn observe_price(&mut self, h: usize, day: usize, price: f64, params: BeliefUpdateParams) {
        self.belief = update_belief(&self.belief, h, day, price, params);
    }
}
