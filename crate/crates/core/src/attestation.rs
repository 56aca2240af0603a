//! Timely-attestation probabilities and block canonicalization.
//!
//! Attesters vote independently. A block released at `tau` is canonical when at
//! least `ceil(gamma * |committee|)` attesters receive it before the cutoff, so the
//! number of timely votes is Poisson-binomial. Attesters in the same region share
//! one timeliness probability, which lets the kernels work on per-region counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::topology::{LatencyModel, RegionId};

pub use crate::topology::LogNormalParams;

/// Slack applied before rounding `gamma * n` up, so that e.g. `2/3 * 999`
/// lands on 666 despite representation error.
const QUORUM_EPS: f64 = 1e-9;

/// Number of votes needed out of `size` attesters.
pub fn required_votes(threshold: f64, size: usize) -> usize {
    if size == 0 {
        return 0;
    }
    let raw = (threshold * size as f64 - QUORUM_EPS).ceil();
    (raw.max(1.0) as usize).min(size)
}

/// Attesters assigned to a slot, excluding its proposer.
#[derive(Debug, Clone)]
pub struct Committee {
    pub attesters: Vec<(usize, RegionId)>,
    pub threshold: f64,
    pub cutoff: f64,
}

impl Committee {
    pub fn new(attesters: Vec<(usize, RegionId)>, threshold: f64, cutoff: f64) -> Self {
        Self { attesters, threshold, cutoff }
    }

    pub fn len(&self) -> usize {
        self.attesters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attesters.is_empty()
    }

    pub fn required(&self) -> usize {
        required_votes(self.threshold, self.attesters.len())
    }

    pub fn profile(&self, num_regions: usize) -> CommitteeProfile {
        let mut counts = vec![0u32; num_regions];
        for &(_, r) in &self.attesters {
            counts[r] += 1;
        }
        CommitteeProfile::from_counts(counts, self.threshold)
    }
}

/// Region histogram of a committee plus its quorum.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommitteeProfile {
    pub counts: Vec<u32>,
    pub size: usize,
    pub required: usize,
}

impl CommitteeProfile {
    pub fn from_counts(counts: Vec<u32>, threshold: f64) -> Self {
        let size = counts.iter().map(|&c| c as usize).sum();
        Self {
            required: required_votes(threshold, size),
            counts,
            size,
        }
    }

    /// Regions with at least one attester, with their counts.
    pub fn occupied(&self) -> impl Iterator<Item = (RegionId, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(r, &c)| (r, c as usize))
    }
}

/// How the canonicalization probability is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonicalMode {
    /// Exact Poisson-binomial tail.
    #[default]
    Exact,
    /// Large-committee indicator `mean(timely) >= gamma`.
    Lln,
}

/// Probability that an attester in `attester_region` sees a block released from
/// `proposer_region` at `tau` seconds before the cutoff.
pub fn timely_prob_msp(
    model: &LatencyModel,
    proposer_region: RegionId,
    attester_region: RegionId,
    tau: f64,
    cutoff: f64,
) -> f64 {
    if tau >= cutoff {
        return 0.0;
    }
    model.latency_cdf(proposer_region, attester_region, (cutoff - tau) * 1000.0)
}

/// Fenton-Wilkinson moment match of the sum of two independent log-normals.
pub fn lognormal_sum_params(p1: LogNormalParams, p2: LogNormalParams) -> LogNormalParams {
    let mean = p1.mean() + p2.mean();
    let var = p1.variance() + p2.variance();
    let s2 = (var / (mean * mean)).ln_1p();
    LogNormalParams::new(mean.ln() - 0.5 * s2, s2.sqrt())
}

/// Two-leg (proposer to relay, relay to attester) timeliness under the
/// moment-matched sum distribution.
pub fn timely_prob_ssp(
    model: &LatencyModel,
    proposer_region: RegionId,
    relay_region: RegionId,
    attester_region: RegionId,
    tau: f64,
    cutoff: f64,
) -> f64 {
    if tau >= cutoff {
        return 0.0;
    }
    let sum = lognormal_sum_params(
        model.params(proposer_region, relay_region),
        model.params(relay_region, attester_region),
    );
    sum.cdf((cutoff - tau) * 1000.0)
}

/// Monte Carlo CDF of a two-leg latency sum built on a fixed set of standard
/// normal pairs, so repeated queries are deterministic and mutually consistent.
#[derive(Debug, Clone)]
pub struct TwoLegSampler {
    normals: Vec<(f64, f64)>,
}

impl TwoLegSampler {
    pub fn new(samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals = (0..samples)
            .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self { normals }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn cdf(&self, p1: LogNormalParams, p2: LogNormalParams, t: f64) -> f64 {
        if t <= 0.0 || self.normals.is_empty() {
            return 0.0;
        }
        let hits = self
            .normals
            .iter()
            .filter(|(z1, z2)| (p1.mu + p1.sigma * z1).exp() + (p2.mu + p2.sigma * z2).exp() <= t)
            .count();
        hits as f64 / self.normals.len() as f64
    }
}

/// `Pr[S >= k]` for `S` a sum of independent Bernoulli(`probs[i]`).
pub fn poisson_binomial_tail(probs: &[f64], k: usize) -> f64 {
    let groups: Vec<(f64, usize)> = probs.iter().map(|&p| (p, 1)).collect();
    poisson_binomial_tail_grouped(&groups, k)
}

/// Same as [`poisson_binomial_tail`] with probabilities given as `(p, multiplicity)`.
///
/// Certain outcomes (`p == 0` or `p == 1`) are folded out first. The remaining
/// dynamic program tracks whichever of successes or failures needs fewer states,
/// with the last state absorbing.
pub fn poisson_binomial_tail_grouped(groups: &[(f64, usize)], k: usize) -> f64 {
    let mut k = k;
    let mut n = 0usize;
    for &(p, c) in groups {
        debug_assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
        if p >= 1.0 {
            k = k.saturating_sub(c);
        } else if p > 0.0 {
            n += c;
        }
    }
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }

    // Pr[S >= k] = Pr[F <= n - k] with F = n - S.
    let track_failures = n - k + 1 < k;
    let cap = if track_failures { n - k + 1 } else { k };
    let mut dp = vec![0.0f64; cap + 1];
    dp[0] = 1.0;
    let mut reach = 0usize;
    for &(p, c) in groups {
        if p <= 0.0 || p >= 1.0 {
            continue;
        }
        let step = if track_failures { 1.0 - p } else { p };
        let stay = 1.0 - step;
        for _ in 0..c {
            let top = (reach + 1).min(cap);
            if top == cap {
                dp[cap] += dp[cap - 1] * step;
            } else {
                dp[top] = dp[top - 1] * step;
            }
            for j in (1..top.min(cap)).rev() {
                dp[j] = dp[j] * stay + dp[j - 1] * step;
            }
            dp[0] *= stay;
            reach = top;
        }
    }
    if track_failures {
        dp[..cap].iter().sum::<f64>().clamp(0.0, 1.0)
    } else {
        dp[cap].clamp(0.0, 1.0)
    }
}

/// Exact probability that the committee reaches its quorum.
pub fn canonical_prob(committee: &Committee, timely: &[f64]) -> f64 {
    assert_eq!(timely.len(), committee.len(), "one probability per attester");
    poisson_binomial_tail(timely, committee.required())
}

/// Large-committee approximation: 1 when the mean timeliness reaches `gamma`.
pub fn lln_canonical_indicator(committee: &Committee, timely: &[f64]) -> f64 {
    assert_eq!(timely.len(), committee.len(), "one probability per attester");
    if timely.is_empty() {
        return 0.0;
    }
    let mean = timely.iter().sum::<f64>() / timely.len() as f64;
    if mean >= committee.threshold {
        1.0
    } else {
        0.0
    }
}

/// Canonicalization probability from per-region timeliness and a committee histogram.
pub fn canonical_prob_profile(profile: &CommitteeProfile, threshold: f64, per_region: &[f64], mode: CanonicalMode) -> f64 {
    if profile.size == 0 {
        return 0.0;
    }
    match mode {
        CanonicalMode::Exact => {
            let groups: Vec<(f64, usize)> = profile.occupied().map(|(r, c)| (per_region[r], c)).collect();
            poisson_binomial_tail_grouped(&groups, profile.required)
        }
        CanonicalMode::Lln => {
            let total: f64 = profile.occupied().map(|(r, c)| per_region[r] * c as f64).sum();
            if total / profile.size as f64 >= threshold {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Decides `Pr[S >= k] >= level` from Hoeffding and Bernstein tail bounds alone,
/// where `S` sums independent Bernoulli(`p`) over `(p, multiplicity)` groups.
/// `None` when neither bound settles it.
pub fn quorum_tail_bound(groups: &[(f64, usize)], k: usize, level: f64) -> Option<bool> {
    let (mut n, mut mean, mut var) = (0.0, 0.0, 0.0);
    let mut k = k as f64;
    for &(p, c) in groups {
        if p >= 1.0 {
            k -= c as f64;
        } else if p > 0.0 {
            let c = c as f64;
            n += c;
            mean += c * p;
            var += c * p * (1.0 - p);
        }
    }
    if k <= 0.0 {
        return Some(true);
    }
    if k > n {
        return Some(false);
    }
    // Both bounds are of the form Pr[|S - mean| >= t] <= bound(t) on one side.
    let bound = |t: f64| {
        let hoeffding = (-2.0 * t * t / n).exp();
        let bernstein = (-t * t / (2.0 * (var + t / 3.0))).exp();
        hoeffding.min(bernstein)
    };
    const SLACK: f64 = 1e-9;
    // Pr[S <= k - 1] with k - 1 below the mean.
    let short = mean - (k - 1.0);
    if short > 0.0 && bound(short) < (1.0 - level) * (1.0 - SLACK) {
        return Some(true);
    }
    // Pr[S >= k] with k above the mean.
    let excess = k - mean;
    if excess > 0.0 && bound(excess) < level * (1.0 - SLACK) {
        return Some(false);
    }
    None
}

/// Decides `canonical_prob_profile(..) >= level` without the full tail when a bound suffices.
pub fn canonical_meets(profile: &CommitteeProfile, per_region: &[f64], level: f64) -> Option<bool> {
    if profile.size == 0 {
        return Some(level <= 0.0);
    }
    let groups: Vec<(f64, usize)> = profile.occupied().map(|(r, c)| (per_region[r], c)).collect();
    quorum_tail_bound(&groups, profile.required, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_tail(probs: &[f64], k: usize) -> f64 {
        let n = probs.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            if (mask.count_ones() as usize) < k {
                continue;
            }
            let mut p = 1.0;
            for (i, &q) in probs.iter().enumerate() {
                p *= if mask & (1 << i) != 0 { q } else { 1.0 - q };
            }
            total += p;
        }
        total
    }

    #[test]
    fn tail_small_cases() {
        assert!((poisson_binomial_tail(&[0.5, 0.5, 0.5], 2) - 0.5).abs() < 1e-15);
        assert_eq!(poisson_binomial_tail(&[0.2, 0.9], 0), 1.0);
        assert_eq!(poisson_binomial_tail(&[1.0, 1.0, 0.3], 2), 1.0);
        assert_eq!(poisson_binomial_tail(&[0.2, 0.3], 3), 0.0);
        assert_eq!(poisson_binomial_tail(&[], 0), 1.0);
    }

    #[test]
    fn quorum_rounding() {
        assert_eq!(required_votes(2.0 / 3.0, 999), 666);
        assert_eq!(required_votes(2.0 / 3.0, 3), 2);
        assert_eq!(required_votes(2.0 / 3.0, 1000), 667);
        assert_eq!(required_votes(1e-6, 10), 1);
        assert_eq!(required_votes(1.0, 7), 7);
    }

    #[test]
    fn canonical_examples() {
        let committee = Committee::new(vec![(1, 0), (2, 0), (3, 0)], 2.0 / 3.0, 4.0);
        assert_eq!(committee.required(), 2);
        assert_eq!(canonical_prob(&committee, &[1.0, 1.0, 1.0]), 1.0);
        assert_eq!(canonical_prob(&committee, &[0.0, 0.0, 0.0]), 0.0);
        assert!((canonical_prob(&committee, &[0.5, 0.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn indicator_examples() {
        let committee = Committee::new((0..9).map(|i| (i, 0)).collect(), 2.0 / 3.0, 4.0);
        assert_eq!(lln_canonical_indicator(&committee, &[0.7; 9]), 1.0);
        assert_eq!(lln_canonical_indicator(&committee, &[0.6; 9]), 0.0);
    }

    #[test]
    fn msp_timeliness() {
        let model = LatencyModel::uniform(2, 100.0, 0.5).unwrap();
        assert_eq!(timely_prob_msp(&model, 0, 1, 4.0, 4.0), 0.0);
        let median_s = model.params(0, 1).median() / 1000.0;
        assert!((timely_prob_msp(&model, 0, 1, 4.0 - median_s, 4.0) - 0.5).abs() < 1e-9);
        let p = timely_prob_msp(&model, 0, 1, 0.0, 4.0);
        assert!(p > 1.0 - 1e-12 && p <= 1.0);
    }

    #[test]
    fn fenton_wilkinson_examples() {
        let leg = LogNormalParams::from_mean(100.0, 0.5);
        let sum = lognormal_sum_params(leg, leg);
        assert!((sum.mean() - 200.0).abs() < 1e-9);
        let var = 2.0 * 100.0f64.powi(2) * (0.25f64.exp() - 1.0);
        assert!((var - 5681.0).abs() < 1.0);
        assert!((sum.variance() - var).abs() < 1e-6);
        assert!((sum.sigma * sum.sigma - (1.0 + var / 40000.0).ln()).abs() < 1e-12);
        assert!((sum.sigma * sum.sigma - 0.13280).abs() < 1e-4);

        let none = LogNormalParams::new(f64::NEG_INFINITY, 0.0);
        let same = lognormal_sum_params(leg, none);
        assert!((same.mu - leg.mu).abs() < 1e-12);
        assert!((same.sigma - leg.sigma).abs() < 1e-12);
    }

    #[test]
    fn fenton_wilkinson_vs_monte_carlo_iid_legs() {
        let leg = LogNormalParams::from_mean(100.0, 0.5);
        let sum = lognormal_sum_params(leg, leg);
        let sampler = TwoLegSampler::new(1_000_000, 5);
        let mut gap: f64 = 0.0;
        for t in (50..=600).step_by(10) {
            let t = t as f64;
            gap = gap.max((sum.cdf(t) - sampler.cdf(leg, leg, t)).abs());
        }
        assert!(gap < 0.02, "gap {gap}");
    }

    #[test]
    fn ssp_timeliness() {
        let means = vec![vec![2.0, 100.0], vec![100.0, 2.0]];
        let model = LatencyModel::from_expected(&means, 0.5).unwrap();
        assert_eq!(timely_prob_ssp(&model, 0, 1, 1, 4.0, 4.0), 0.0);
        assert_eq!(timely_prob_ssp(&model, 0, 1, 1, 5.0, 4.0), 0.0);

        // Relay one intra-region hop away: nearly the single-leg probability.
        let sampler = TwoLegSampler::new(200_000, 9);
        for tau in [3.7, 3.8, 3.85, 3.9] {
            let ssp = timely_prob_ssp(&model, 1, 1, 0, tau, 4.0);
            let msp = timely_prob_msp(&model, 1, 0, tau, 4.0);
            let msp_late = timely_prob_msp(&model, 1, 0, tau + 0.004, 4.0);
            assert!(ssp <= msp + 1e-12 && ssp >= msp_late - 0.005, "tau {tau}: {ssp} vs {msp}");
            let mc = sampler.cdf(model.params(1, 1), model.params(1, 0), (4.0 - tau) * 1000.0);
            assert!((mc - ssp).abs() < 0.01);
        }

        // Relay co-located with the attester, both legs equal.
        let equal = LatencyModel::uniform(2, 100.0, 0.5).unwrap();
        let leg = equal.params(0, 1);
        let expected = lognormal_sum_params(leg, leg).cdf(300.0);
        assert!((timely_prob_ssp(&equal, 0, 1, 1, 3.7, 4.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn profile_modes_agree_with_list_forms() {
        let attesters = vec![(1, 0), (2, 1), (3, 1), (4, 2)];
        let committee = Committee::new(attesters, 2.0 / 3.0, 4.0);
        let per_region = [0.9, 0.4, 0.7];
        let timely: Vec<f64> = committee.attesters.iter().map(|&(_, r)| per_region[r]).collect();
        let profile = committee.profile(3);
        let exact = canonical_prob_profile(&profile, committee.threshold, &per_region, CanonicalMode::Exact);
        assert!((exact - canonical_prob(&committee, &timely)).abs() < 1e-15);
        let lln = canonical_prob_profile(&profile, committee.threshold, &per_region, CanonicalMode::Lln);
        assert_eq!(lln, lln_canonical_indicator(&committee, &timely));
    }

    proptest! {
        #[test]
        fn dp_matches_enumeration(probs in proptest::collection::vec(0.0f64..=1.0, 0..=12), k_frac in 0.0f64..=1.0) {
            let k = ((probs.len() as f64) * k_frac).round() as usize;
            let dp = poisson_binomial_tail(&probs, k);
            prop_assert!((dp - brute_force_tail(&probs, k)).abs() < 1e-12);
        }

        #[test]
        fn tail_nondecreasing_in_each_probability(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..=10),
            idx in 0usize..10,
            bump in 0.0f64..=1.0,
            k in 0usize..=10,
        ) {
            let k = k.min(probs.len());
            let i = idx % probs.len();
            let mut raised = probs.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            prop_assert!(poisson_binomial_tail(&raised, k) >= poisson_binomial_tail(&probs, k) - 1e-12);
        }

        #[test]
        fn fenton_wilkinson_preserves_moments(m1 in 1.0f64..400.0, m2 in 1.0f64..400.0, s in 0.05f64..1.0) {
            let a = LogNormalParams::from_mean(m1, s);
            let b = LogNormalParams::from_mean(m2, s);
            let z = lognormal_sum_params(a, b);
            prop_assert!((z.mean() / (m1 + m2) - 1.0).abs() < 1e-12);
            prop_assert!((z.variance() / (a.variance() + b.variance()) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn grouped_equals_expanded(groups in proptest::collection::vec((0.0f64..=1.0, 0usize..5), 0..6), k_frac in 0.0f64..=1.0) {
            let expanded: Vec<f64> = groups.iter().flat_map(|&(p, c)| std::iter::repeat_n(p, c)).collect();
            let k = ((expanded.len() as f64) * k_frac).round() as usize;
            let a = poisson_binomial_tail_grouped(&groups, k);
            let b = brute_force_tail(&expanded, k);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn tail_bound_never_contradicts_dp(
            groups in proptest::collection::vec((0.0f64..=1.0, 1usize..200), 1..8),
            k_frac in 0.0f64..=1.0,
            level in 0.5f64..=1.0,
        ) {
            let n: usize = groups.iter().map(|g| g.1).sum();
            let k = ((n as f64) * k_frac).round() as usize;
            if let Some(decided) = quorum_tail_bound(&groups, k, level) {
                prop_assert_eq!(decided, poisson_binomial_tail_grouped(&groups, k) >= level);
            }
        }
    }
}
