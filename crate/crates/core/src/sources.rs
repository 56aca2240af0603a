//! Exogenous information sources and the block value they expose over a slot.

use serde::{Deserialize, Serialize};

use crate::topology::{LatencyModel, RegionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Contributes part of the block value; values from distinct signals add up.
    Signal,
    /// Supplies the whole block and propagates it to attesters.
    Relay,
}

/// A source whose value grows linearly over the slot: `a * t + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoSource {
    pub kind: SourceKind,
    pub region: RegionId,
    /// Growth rate, value units per second.
    pub a: f64,
    /// Value available at slot start.
    pub b: f64,
}

impl InfoSource {
    pub fn signal(region: RegionId, a: f64, b: f64) -> Self {
        Self { kind: SourceKind::Signal, region, a, b }
    }

    pub fn relay(region: RegionId, a: f64, b: f64) -> Self {
        Self { kind: SourceKind::Relay, region, a, b }
    }

    /// Value at elapsed time `t` seconds. Observations dated before slot start floor at `b`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.a * t.max(0.0) + self.b
    }
}

/// Block value seen from `region` at release time `tau` (seconds) when
/// aggregating every signal, each observed one expected latency late.
pub fn aggregate_value_msp(region: RegionId, tau: f64, sources: &[InfoSource], model: &LatencyModel) -> f64 {
    sources
        .iter()
        .map(|s| {
            debug_assert_eq!(s.kind, SourceKind::Signal);
            s.value_at(tau - model.expected_latency(region, s.region) / 1000.0)
        })
        .sum()
}

/// Relay bid as seen by a proposer in `proposer_region` at release time `tau`.
pub fn relay_effective_bid(relay: &InfoSource, proposer_region: RegionId, tau: f64, model: &LatencyModel) -> f64 {
    debug_assert_eq!(relay.kind, SourceKind::Relay);
    relay.value_at(tau - model.expected_latency(proposer_region, relay.region) / 1000.0)
}
