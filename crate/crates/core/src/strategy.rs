//! Proposer decision problem: release timing, expected payoff per location or
//! relay, and the migration / co-location rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::{
    canonical_meets, canonical_prob_profile, lognormal_sum_params, CanonicalMode, CommitteeProfile, LogNormalParams, TwoLegSampler,
};
use crate::sources::{aggregate_value_msp, relay_effective_bid, InfoSource, SourceKind};
use crate::topology::{LatencyModel, RegionId};

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("no relays configured")]
    NoRelays,
    #[error("invalid consensus parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
}

/// Protocol timing and the proposer's risk appetite. Times are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub slot_duration: f64,
    pub cutoff: f64,
    pub threshold: f64,
    pub risk_tolerance: f64,
    pub time_step: f64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self {
            slot_duration: 12.0,
            cutoff: 4.0,
            threshold: 2.0 / 3.0,
            risk_tolerance: 0.99,
            time_step: 0.05,
        }
    }
}

impl ConsensusParams {
    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |field, reason: String| Err(StrategyError::InvalidParams { field, reason });
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return bad("slot_duration", format!("must be positive, got {}", self.slot_duration));
        }
        if !(self.cutoff > 0.0 && self.cutoff <= self.slot_duration) {
            return bad("cutoff", format!("must lie in (0, slot_duration], got {}", self.cutoff));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("gamma", format!("must lie in (0, 1], got {}", self.threshold));
        }
        if !(self.risk_tolerance > 0.0 && self.risk_tolerance <= 1.0) {
            return bad("risk_tolerance", format!("must lie in (0, 1], got {}", self.risk_tolerance));
        }
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return bad("time_step", format!("must be positive, got {}", self.time_step));
        }
        let steps = self.cutoff / self.time_step;
        if (steps - steps.round()).abs() > 1e-6 {
            return bad("time_step", format!("{} does not divide cutoff {}", self.time_step, self.cutoff));
        }
        Ok(())
    }

    /// Index of the last grid point (the cutoff itself).
    pub fn last_grid_index(&self) -> usize {
        (self.cutoff / self.time_step).round().max(0.0) as usize
    }

    pub fn grid_time(&self, index: usize) -> f64 {
        index as f64 * self.time_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Bisection over the release grid; relies on the canonical probability
    /// being nonincreasing in the release time.
    #[default]
    Binary,
    /// Scan of every grid point.
    Exhaustive,
}

/// Where a plan releases from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanLocation {
    Region(RegionId),
    Relay(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReleasePlan {
    pub tau_star: f64,
    pub canonical_prob: f64,
    /// Block value at `tau_star`.
    pub value: f64,
    pub payoff: f64,
    pub location: PlanLocation,
    /// False when even an immediate release misses the risk tolerance.
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MigrationDecision {
    #[serde(rename = "move")]
    pub moves: bool,
    pub origin: RegionId,
    /// Best alternative location; where the proposer ends up when `moves`.
    pub destination: RegionId,
    pub marginal_benefit: f64,
    /// Relay used for the executed release (single-source only).
    pub relay: Option<usize>,
}

impl MigrationDecision {
    pub fn final_region(&self) -> RegionId {
        if self.moves {
            self.destination
        } else {
            self.origin
        }
    }
}

/// Marginal benefit as recorded for distribution plots: negative gaps clamp to zero.
pub fn marginal_benefit_record(decision: &MigrationDecision) -> f64 {
    decision.marginal_benefit.max(0.0)
}

/// How the two-leg latency CDF of a relayed block is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum SspCdf<'a> {
    FentonWilkinson,
    MonteCarlo(&'a TwoLegSampler),
}

/// Everything a proposer needs to evaluate plans.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext<'a> {
    pub model: &'a LatencyModel,
    pub params: &'a ConsensusParams,
    pub mode: CanonicalMode,
    pub search: SearchMode,
    pub ssp_cdf: SspCdf<'a>,
}

impl<'a> StrategyContext<'a> {
    pub fn new(model: &'a LatencyModel, params: &'a ConsensusParams) -> Self {
        Self {
            model,
            params,
            mode: CanonicalMode::Exact,
            search: SearchMode::Binary,
            ssp_cdf: SspCdf::FentonWilkinson,
        }
    }

    pub fn with_search(mut self, search: SearchMode) -> Self {
        self.search = search;
        self
    }

    pub fn with_mode(mut self, mode: CanonicalMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Latency from the release point to each attester region, as one or two legs.
enum Propagation<'s> {
    Direct(Vec<LogNormalParams>),
    FentonWilkinson(Vec<LogNormalParams>),
    Sampled {
        first: LogNormalParams,
        second: Vec<LogNormalParams>,
        sampler: &'s TwoLegSampler,
    },
}

impl<'s> Propagation<'s> {
    fn direct(ctx: &StrategyContext<'s>, origin: RegionId) -> Self {
        let m = ctx.model.num_regions();
        Propagation::Direct((0..m).map(|a| ctx.model.params(origin, a)).collect())
    }

    fn relayed(ctx: &StrategyContext<'s>, proposer: RegionId, relay_region: RegionId) -> Self {
        let m = ctx.model.num_regions();
        let first = ctx.model.params(proposer, relay_region);
        let second: Vec<_> = (0..m).map(|a| ctx.model.params(relay_region, a)).collect();
        match ctx.ssp_cdf {
            SspCdf::FentonWilkinson => {
                Propagation::FentonWilkinson(second.into_iter().map(|p| lognormal_sum_params(first, p)).collect())
            }
            SspCdf::MonteCarlo(sampler) => Propagation::Sampled { first, second, sampler },
        }
    }

    fn timely(&self, profile: &CommitteeProfile, budget_ms: f64, out: &mut [f64]) {
        for (a, _) in profile.occupied() {
            out[a] = match self {
                Propagation::Direct(p) | Propagation::FentonWilkinson(p) => p[a].cdf(budget_ms),
                Propagation::Sampled { first, second, sampler } => sampler.cdf(*first, second[a], budget_ms),
            };
        }
    }
}

/// Canonicalization probability for a release at grid time `tau`.
fn canonical_at(ctx: &StrategyContext<'_>, prop: &Propagation, profile: &CommitteeProfile, tau: f64, scratch: &mut [f64]) -> f64 {
    if tau >= ctx.params.cutoff || profile.size == 0 {
        return 0.0;
    }
    let budget_ms = (ctx.params.cutoff - tau) * 1000.0;
    prop.timely(profile, budget_ms, scratch);
    canonical_prob_profile(profile, ctx.params.threshold, scratch, ctx.mode)
}

/// Largest grid index whose canonical probability meets the risk tolerance,
/// with that probability and a feasibility flag (false when index 0 already misses it).
fn search_release(ctx: &StrategyContext<'_>, prop: &Propagation, profile: &CommitteeProfile) -> (usize, f64, bool) {
    let params = ctx.params;
    let last = params.last_grid_index();
    let mut scratch = vec![0.0; ctx.model.num_regions()];
    let r = params.risk_tolerance;
    match ctx.search {
        SearchMode::Exhaustive => {
            let mut eval = |i: usize| canonical_at(ctx, prop, profile, params.grid_time(i), &mut scratch);
            let mut best: Option<(usize, f64)> = None;
            let mut first = 0.0;
            for i in 0..=last {
                let p = eval(i);
                if i == 0 {
                    first = p;
                }
                if p >= r {
                    best = Some((i, p));
                }
            }
            match best {
                Some((i, p)) => (i, p, true),
                None => (0, first, false),
            }
        }
        SearchMode::Binary => {
            // Comparisons against the tolerance are settled by tail bounds where
            // possible; only the returned probability needs the full tail.
            let mut test = |i: usize| -> (bool, Option<f64>) {
                if ctx.mode == CanonicalMode::Exact && params.grid_time(i) < params.cutoff && profile.size > 0 {
                    let budget_ms = (params.cutoff - params.grid_time(i)) * 1000.0;
                    prop.timely(profile, budget_ms, &mut scratch);
                    if let Some(ok) = canonical_meets(profile, &scratch, r) {
                        return (ok, None);
                    }
                }
                let p = canonical_at(ctx, prop, profile, params.grid_time(i), &mut scratch);
                (p >= r, Some(p))
            };
            let (ok0, p0) = test(0);
            if !ok0 {
                let p0 = p0.unwrap_or_else(|| canonical_at(ctx, prop, profile, 0.0, &mut scratch));
                return (0, p0, false);
            }
            let (mut lo, mut p_lo) = (0usize, p0);
            let mut hi = last + 1;
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                let (ok, p) = test(mid);
                debug_assert!(
                    p.zip(p_lo).is_none_or(|(p, q)| p <= q + 1e-12),
                    "canonical probability increased with release time"
                );
                if ok {
                    lo = mid;
                    p_lo = p;
                } else {
                    hi = mid;
                }
            }
            let p_lo = p_lo.unwrap_or_else(|| canonical_at(ctx, prop, profile, params.grid_time(lo), &mut scratch));
            (lo, p_lo, true)
        }
    }
}

/// Optimal release for a self-built block aggregated from signal sources.
pub fn optimal_release_msp(
    ctx: &StrategyContext<'_>,
    region: RegionId,
    committee: &CommitteeProfile,
    sources: &[InfoSource],
) -> ReleasePlan {
    let prop = Propagation::direct(ctx, region);
    let (i, prob, feasible) = search_release(ctx, &prop, committee);
    let tau = ctx.params.grid_time(i);
    let value = aggregate_value_msp(region, tau, sources, ctx.model);
    ReleasePlan {
        tau_star: tau,
        canonical_prob: prob,
        value,
        payoff: prob * value,
        location: PlanLocation::Region(region),
        feasible,
    }
}

pub fn payoff_msp(ctx: &StrategyContext<'_>, region: RegionId, committee: &CommitteeProfile, sources: &[InfoSource]) -> f64 {
    optimal_release_msp(ctx, region, committee, sources).payoff
}

/// Optimal release when taking the block from `relays[relay_id]`.
pub fn optimal_release_ssp(
    ctx: &StrategyContext<'_>,
    relay_id: usize,
    relay: &InfoSource,
    proposer_region: RegionId,
    committee: &CommitteeProfile,
) -> ReleasePlan {
    debug_assert_eq!(relay.kind, SourceKind::Relay);
    let prop = Propagation::relayed(ctx, proposer_region, relay.region);
    let (i, prob, feasible) = search_release(ctx, &prop, committee);
    let tau = ctx.params.grid_time(i);
    let value = relay_effective_bid(relay, proposer_region, tau, ctx.model);
    ReleasePlan {
        tau_star: tau,
        canonical_prob: prob,
        value,
        payoff: prob * value,
        location: PlanLocation::Relay(relay_id),
        feasible,
    }
}

/// First index of the maximum, scanning in order (ties go to the lowest index).
fn argmax<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Migration rule over precomputed per-region plans.
pub fn decide_msp(current: RegionId, plans: &[ReleasePlan], cost: f64) -> MigrationDecision {
    let stay = plans[current].payoff;
    match argmax(plans.iter().enumerate().filter(|(r, _)| *r != current).map(|(r, p)| (r, p.payoff))) {
        Some((best, w)) => {
            let gain = w - stay;
            MigrationDecision {
                moves: gain > cost,
                origin: current,
                destination: best,
                marginal_benefit: gain,
                relay: None,
            }
        }
        None => MigrationDecision {
            moves: false,
            origin: current,
            destination: current,
            marginal_benefit: 0.0,
            relay: None,
        },
    }
}

/// Per-region plans for every region, in region order.
pub fn msp_plans(ctx: &StrategyContext<'_>, committee: &CommitteeProfile, sources: &[InfoSource]) -> Vec<ReleasePlan> {
    (0..ctx.model.num_regions())
        .into_par_iter()
        .map(|r| optimal_release_msp(ctx, r, committee, sources))
        .collect()
}

pub fn migrate_msp(
    ctx: &StrategyContext<'_>,
    current: RegionId,
    committee: &CommitteeProfile,
    sources: &[InfoSource],
    cost: f64,
) -> MigrationDecision {
    decide_msp(current, &msp_plans(ctx, committee, sources), cost)
}

/// Plans for every (proposer region, relay) pair, row-major by region.
#[derive(Debug, Clone)]
pub struct RelayMatrix {
    pub relays: usize,
    pub plans: Vec<ReleasePlan>,
}

impl RelayMatrix {
    pub fn get(&self, region: RegionId, relay: usize) -> &ReleasePlan {
        &self.plans[region * self.relays + relay]
    }

    pub fn row(&self, region: RegionId) -> &[ReleasePlan] {
        &self.plans[region * self.relays..(region + 1) * self.relays]
    }

    /// Best relay (lowest id on ties) for a proposer sitting in `region`.
    pub fn best_local(&self, region: RegionId) -> (usize, f64) {
        argmax(self.row(region).iter().map(|p| p.payoff).enumerate()).expect("nonempty relay set")
    }
}

pub fn ssp_matrix(
    ctx: &StrategyContext<'_>,
    committee: &CommitteeProfile,
    relays: &[InfoSource],
) -> Result<RelayMatrix, StrategyError> {
    if relays.is_empty() {
        return Err(StrategyError::NoRelays);
    }
    let n = relays.len();
    let plans = (0..ctx.model.num_regions() * n)
        .into_par_iter()
        .map(|idx| {
            let (r, i) = (idx / n, idx % n);
            optimal_release_ssp(ctx, i, &relays[i], r, committee)
        })
        .collect();
    Ok(RelayMatrix { relays: n, plans })
}

/// Co-location rule over a precomputed relay matrix.
pub fn decide_ssp(current: RegionId, relays: &[InfoSource], matrix: &RelayMatrix, cost: f64) -> MigrationDecision {
    let (local, stay) = matrix.best_local(current);
    let (target, moved) = argmax(
        relays
            .iter()
            .enumerate()
            .map(|(i, relay)| (i, matrix.get(relay.region, i).payoff)),
    )
    .expect("nonempty relay set");
    let gain = moved - stay;
    let moves = gain > cost && relays[target].region != current;
    MigrationDecision {
        moves,
        origin: current,
        destination: relays[target].region,
        marginal_benefit: gain,
        relay: Some(if moves { target } else { local }),
    }
}

pub fn colocate_ssp(
    ctx: &StrategyContext<'_>,
    current: RegionId,
    relays: &[InfoSource],
    committee: &CommitteeProfile,
    cost: f64,
) -> Result<MigrationDecision, StrategyError> {
    let matrix = ssp_matrix(ctx, committee, relays)?;
    Ok(decide_ssp(current, relays, &matrix, cost))
}
