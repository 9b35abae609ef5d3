//! Seeded batch generation.
//!
//! The whole schedule is drawn up front so the controller can read the exact
//! future generation when it is allowed perfect foresight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic config: {0}")]
    Invalid(String),
    #[error("schedule covers slots [0, {covered}), slots [{from}, {to}) requested")]
    OutOfRange { from: u64, to: u64, covered: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    /// Mean batches generated per node per slot.
    pub base_rate: f64,
    /// Per-node rates are drawn once from `[G - vG, G + vG]`.
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.base_rate.is_finite() && self.base_rate >= 0.0) {
            return Err(TrafficError::Invalid(format!(
                "base rate must be non-negative, got {}",
                self.base_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(TrafficError::Invalid(format!(
                "heterogeneity must lie in [0, 1], got {}",
                self.heterogeneity
            )));
        }
        Ok(())
    }
}

/// Destinations of the batches each node creates in each slot.
#[derive(Debug, Clone)]
pub struct TrafficSchedule {
    node_count: usize,
    slots: u64,
    rates: Vec<f64>,
    // slot-major: batches[slot * node_count + node]
    batches: Vec<Vec<NodeId>>,
}

impl TrafficSchedule {
    /// Draws per-node rates, then per-slot counts (integer part plus one
    /// Bernoulli extra for the fraction) with uniform destinations over the
    /// other nodes.
    pub fn generate(config: &TrafficConfig, node_count: usize, slots: u64) -> Result<Self, TrafficError> {
        config.validate()?;
        if node_count < 2 {
            return Err(TrafficError::Invalid("need at least two nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let spread = config.heterogeneity * config.base_rate;
        let rates: Vec<f64> = (0..node_count)
            .map(|_| {
                if spread > 0.0 {
                    rng.random_range(config.base_rate - spread..=config.base_rate + spread)
                } else {
                    config.base_rate
                }
            })
            .collect();

        let mut batches = Vec::with_capacity(slots as usize * node_count);
        for _ in 0..slots {
            for (n, &rate) in rates.iter().enumerate() {
                let whole = rate.floor();
                let frac = rate - whole;
                let mut count = whole as usize;
                if frac > 0.0 && rng.random_bool(frac) {
                    count += 1;
                }
                let dests = (0..count)
                    .map(|_| {
                        let d = rng.random_range(0..node_count - 1);
                        NodeId(if d >= n { d + 1 } else { d })
                    })
                    .collect();
                batches.push(dests);
            }
        }
        Ok(Self {
            node_count,
            slots,
            rates,
            batches,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    /// Realised per-node rates.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn at(&self, slot: u64, n: NodeId) -> &[NodeId] {
        &self.batches[slot as usize * self.node_count + n.0]
    }

    /// Row-major `G(n, c)` counts over slots `[from, to)`.
    pub fn counts(&self, from: u64, to: u64) -> Result<Vec<u32>, TrafficError> {
        if to > self.slots || from > to {
            return Err(TrafficError::OutOfRange {
                from,
                to,
                covered: self.slots,
            });
        }
        let n = self.node_count;
        let mut counts = vec![0u32; n * n];
        for slot in from..to {
            for node in 0..n {
                for c in self.at(slot, NodeId(node)) {
                    counts[node * n + c.0] += 1;
                }
            }
        }
        Ok(counts)
    }
}
