//! Geographical decentralization metrics over stake shares.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{RegionId, RegionTable};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("payoff mean is not positive ({0})")]
    ZeroMean(f64),
    #[error("empty payoff vector")]
    Empty,
}

/// Geographic unit used for share aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    GcpRegion,
    MacroRegion,
}

/// Normalized stake shares over geographic units; sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StakeShares(Vec<f64>);

impl StakeShares {
    /// Normalizes nonnegative weights. Panics on an all-zero input.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "stake shares need positive total weight");
        Self(weights.iter().map(|w| w / total).collect())
    }

    pub fn from_counts(counts: &[u32]) -> Self {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Self::from_weights(&w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Counts validators per unit. Stakes are equal, so counts are proportional to stake.
pub fn unit_counts(regions_of_validators: impl IntoIterator<Item = RegionId>, table: &RegionTable, granularity: Granularity) -> Vec<u32> {
    let units = match granularity {
        Granularity::GcpRegion => table.len(),
        Granularity::MacroRegion => 7,
    };
    let mut counts = vec![0u32; units];
    for r in regions_of_validators {
        let u = match granularity {
            Granularity::GcpRegion => r,
            Granularity::MacroRegion => table.macro_of(r).index(),
        };
        counts[u] += 1;
    }
    counts
}

pub fn shares_from_population(
    regions_of_validators: impl IntoIterator<Item = RegionId>,
    table: &RegionTable,
    granularity: Granularity,
) -> StakeShares {
    StakeShares::from_counts(&unit_counts(regions_of_validators, table, granularity))
}

/// Sorted-form Gini: with shares ascending, the mean absolute pairwise
/// difference collapses to a weighted sum over ranks.
pub fn gini_g(shares: &StakeShares) -> f64 {
    let mut p = shares.0.clone();
    let m = p.len();
    if m == 0 {
        return 0.0;
    }
    p.sort_by(|a, b| a.total_cmp(b));
    // sum_{i<j} (p_j - p_i) = sum_j p_j * (2j - m + 1) over 0-based ascending ranks
    let pair_sum: f64 = p
        .iter()
        .enumerate()
        .map(|(j, &x)| x * (2.0 * j as f64 - m as f64 + 1.0))
        .sum();
    (pair_sum / m as f64).max(0.0)
}

/// Literal double-sum definition, `O(m^2)`.
pub fn gini_g_pairwise(shares: &StakeShares) -> f64 {
    let p = &shares.0;
    let m = p.len();
    if m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for &x in p {
        for &y in p {
            total += (x - y).abs();
        }
    }
    total / (2.0 * m as f64)
}

pub fn hhi_g(shares: &StakeShares) -> f64 {
    shares.0.iter().map(|p| p * p).sum()
}

/// Population coefficient of variation of per-region best payoffs.
pub fn cv_g(best_payoffs: &[f64]) -> Result<f64, MetricsError> {
    if best_payoffs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = best_payoffs.len() as f64;
    let mean = best_payoffs.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(MetricsError::ZeroMean(mean));
    }
    let var = best_payoffs.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

const LIVENESS_EPS: f64 = 1e-12;

/// Smallest number of largest units holding at least a third of stake.
pub fn liveness_coefficient(shares: &StakeShares) -> usize {
    let mut p = shares.0.clone();
    p.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if acc >= 1.0 / 3.0 - LIVENESS_EPS {
            return i + 1;
        }
    }
    p.len()
}

/// Metrics recorded at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub slot: u64,
    pub gini: f64,
    pub hhi: f64,
    /// Missing when the mean best payoff is not positive.
    pub cv: Option<f64>,
    pub lc: usize,
}

impl MetricsSnapshot {
    pub fn compute(slot: u64, shares: &StakeShares, best_payoffs: &[f64]) -> Self {
        Self {
            slot,
            gini: gini_g(shares),
            hhi: hhi_g(shares),
            cv: cv_g(best_payoffs).ok(),
            lc: liveness_coefficient(shares),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::MacroRegion;
    use proptest::prelude::*;

    fn shares(v: &[f64]) -> StakeShares {
        StakeShares::from_weights(v)
    }

    #[test]
    fn gini_examples() {
        assert!(gini_g(&shares(&[1.0; 7])).abs() < 1e-12);
        let mut one = vec![0.0; 7];
        one[3] = 1.0;
        assert!((gini_g(&shares(&one)) - 6.0 / 7.0).abs() < 1e-12);
        assert!((gini_g_pairwise(&shares(&one)) - 6.0 / 7.0).abs() < 1e-12);
        assert!((gini_g(&shares(&[0.5, 0.5, 0.0, 0.0])) - 0.5).abs() < 1e-12);
        assert!((gini_g_pairwise(&shares(&[0.5, 0.5, 0.0, 0.0])) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hhi_examples() {
        assert!((hhi_g(&shares(&[1.0; 7])) - 1.0 / 7.0).abs() < 1e-12);
        assert!((hhi_g(&shares(&[0.0, 1.0, 0.0])) - 1.0).abs() < 1e-12);
        assert!((hhi_g(&shares(&[0.5, 0.3, 0.2])) - 0.38).abs() < 1e-12);
    }

    #[test]
    fn cv_examples() {
        assert_eq!(cv_g(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((cv_g(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((cv_g(&[3.0, 9.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cv_g(&[0.0, 0.0]), Err(MetricsError::ZeroMean(0.0)));
        assert_eq!(cv_g(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn liveness_examples() {
        assert_eq!(liveness_coefficient(&shares(&[0.4, 0.3, 0.2, 0.1])), 1);
        assert_eq!(liveness_coefficient(&shares(&[1.0; 7])), 3);
        assert_eq!(liveness_coefficient(&shares(&[0.0, 0.0, 1.0])), 1);
        // Exactly a third in the largest unit counts.
        assert_eq!(liveness_coefficient(&shares(&[1.0, 1.0, 1.0])), 1);
    }

    #[test]
    fn population_shares() {
        let mut table = RegionTable::new();
        table.push("a", MacroRegion::Europe).unwrap();
        table.push("b", MacroRegion::Europe).unwrap();
        table.push("c", MacroRegion::Asia).unwrap();
        let s = shares_from_population([0, 0, 0, 2], &table, Granularity::GcpRegion);
        assert_eq!(s.as_slice(), &[0.75, 0.0, 0.25]);
        let all = shares_from_population(vec![1; 10], &table, Granularity::GcpRegion);
        assert_eq!(all.as_slice()[1], 1.0);
        let by_macro = shares_from_population([0, 1, 2, 2], &table, Granularity::MacroRegion);
        assert_eq!(by_macro.as_slice()[MacroRegion::Europe.index()], 0.5);
        assert_eq!(by_macro.len(), 7);
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 1..40).prop_filter("positive total", |w| w.iter().sum::<f64>() > 1e-6)
    }

    fn brute_force_liveness(p: &[f64]) -> usize {
        // Smallest subset size whose best (largest) members reach a third.
        for k in 1..=p.len() {
            let mut sorted = p.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[..k].iter().sum::<f64>() >= 1.0 / 3.0 - LIVENESS_EPS {
                return k;
            }
        }
        p.len()
    }

    proptest! {
        #[test]
        fn sorted_gini_matches_double_sum(w in weights()) {
            let s = shares(&w);
            prop_assert!((gini_g(&s) - gini_g_pairwise(&s)).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance(w in weights(), rot in 0usize..40) {
            let s = shares(&w);
            let mut r = w.clone();
            let k = rot % r.len();
            r.rotate_left(k);
            let t = shares(&r);
            prop_assert!((gini_g(&s) - gini_g(&t)).abs() < 1e-12);
            prop_assert!((hhi_g(&s) - hhi_g(&t)).abs() < 1e-12);
            prop_assert_eq!(liveness_coefficient(&s), liveness_coefficient(&t));
        }

        #[test]
        fn uniform_is_minimal(w in weights()) {
            let s = shares(&w);
            let m = w.len();
            prop_assert!(hhi_g(&s) >= 1.0 / m as f64 - 1e-12);
            prop_assert!(gini_g(&s) >= -1e-12);
            prop_assert!(gini_g(&s) <= 1.0 - 1.0 / m as f64 + 1e-12);
        }

        #[test]
        fn liveness_matches_oracle_and_spreading_helps(w in weights(), t in 0.0f64..=1.0) {
            let s = shares(&w);
            prop_assert_eq!(liveness_coefficient(&s), brute_force_liveness(s.as_slice()));
            // Mixing toward uniform is a mean-preserving contraction.
            let m = w.len() as f64;
            let mixed: Vec<f64> = s.as_slice().iter().map(|p| (1.0 - t) * p + t / m).collect();
            let lc_mixed = liveness_coefficient(&shares(&mixed));
            prop_assert!(lc_mixed >= liveness_coefficient(&s));
        }

        #[test]
        fn cv_scale_invariant(w in proptest::collection::vec(0.1f64..5.0, 1..20), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
            prop_assert!((cv_g(&w).unwrap() - cv_g(&scaled).unwrap()).abs() < 1e-9);
        }
    }
}
