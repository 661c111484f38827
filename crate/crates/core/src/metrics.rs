//! Decentralization metrics over a [`ContributionDistribution`].
//!
//! Entropies are reported in bits. Every function reads the proportions in
//! the distribution's canonical entry order, so results are bit-reproducible.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContributionDistribution, EntityId, TimeWindow};

pub const DEFAULT_NAKAMOTO_THRESHOLD: f64 = 0.51;

/// Relative slack (of the distribution total) allowed when comparing a
/// prefix of counts against the threshold. Absorbs the rounding of
/// `threshold * total` so that e.g. 51 of 100 equal shares reach 0.51.
pub const NAKAMOTO_REL_TOL: f64 = 1e-12;

/// Above this entity count Gini switches from the pairwise sum to the sorted-rank form.
pub const GINI_PAIRWISE_MAX: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("invalid Rényi order {0}: must be finite and non-negative")]
    InvalidAlpha(f64),
    #[error("invalid Nakamoto threshold {0}: must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("metric produced a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricKind {
    ShannonEntropy,
    RenyiEntropy { alpha: f64 },
    Gini,
    Nakamoto { threshold: f64 },
    Hhi,
    NodeCount,
}

impl MetricKind {
    /// Stable short name used in file names and reports.
    pub fn name(&self) -> String {
        match self {
            MetricKind::ShannonEntropy => "shannon".into(),
            MetricKind::RenyiEntropy { alpha } => format!("renyi_{}", crate::format::fmt_g(*alpha, 12)),
            MetricKind::Gini => "gini".into(),
            MetricKind::Nakamoto { .. } => "nakamoto".into(),
            MetricKind::Hhi => "hhi".into(),
            MetricKind::NodeCount => "node_count".into(),
        }
    }

    pub fn compute(&self, d: &ContributionDistribution) -> Result<f64, MetricError> {
        let value = match *self {
            MetricKind::ShannonEntropy => shannon_entropy(d).value,
            MetricKind::RenyiEntropy { alpha } => renyi_entropy(d, alpha)?.value,
            MetricKind::Gini => gini(d).value,
            MetricKind::Nakamoto { threshold } => nakamoto(d, threshold)?.coefficient as f64,
            MetricKind::Hhi => hhi(d).value,
            MetricKind::NodeCount => node_count(d).value,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(MetricError::NonFinite)
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub window: TimeWindow,
}

fn value_of(kind: MetricKind, value: f64, d: &ContributionDistribution) -> MetricValue {
    MetricValue {
        kind,
        value,
        window: *d.window(),
    }
}

fn shannon_bits<I: Iterator<Item = f64>>(proportions: I) -> f64 {
    let h: f64 = proportions.filter(|&p| p > 0.0).map(|p| p * p.log2()).sum();
    // -0.0 for a single entity; report +0
    (-h).max(0.0)
}

pub fn shannon_entropy(d: &ContributionDistribution) -> MetricValue {
    value_of(MetricKind::ShannonEntropy, shannon_bits(d.proportions()), d)
}

/// Rényi entropy of order `alpha`, in bits. Order 1 is Shannon, order 0 is
/// `log2(n)`.
pub fn renyi_entropy(d: &ContributionDistribution, alpha: f64) -> Result<MetricValue, MetricError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(MetricError::InvalidAlpha(alpha));
    }
    let kind = MetricKind::RenyiEntropy { alpha };
    let value = if alpha == 0.0 {
        (d.len() as f64).log2()
    } else if alpha == 1.0 {
        shannon_bits(d.proportions())
    } else {
        let s: f64 = d.proportions().map(|p| p.powf(alpha)).sum();
        (s.log2() / (1.0 - alpha)).max(0.0)
    };
    Ok(value_of(kind, value, d))
}

/// Gini coefficient over proportions. 0 for a single entity.
pub fn gini(d: &ContributionDistribution) -> MetricValue {
    let props: Vec<f64> = d.proportions().collect();
    let g = if props.len() <= GINI_PAIRWISE_MAX {
        gini_pairwise(&props)
    } else {
        gini_sorted(&props)
    };
    value_of(MetricKind::Gini, g, d)
}

/// `Σ_i Σ_j |x_i − x_j| / (2 n² x̄)`, O(n²).
pub fn gini_pairwise(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n <= 1 {
        return 0.0;
    }
    let mut diff = 0.0;
    for (i, &a) in xs.iter().enumerate() {
        for &b in &xs[i + 1..] {
            diff += (a - b).abs();
        }
    }
    let sum: f64 = xs.iter().sum();
    let mean = sum / n as f64;
    // the double sum counts each unordered pair twice
    (2.0 * diff) / (2.0 * (n * n) as f64 * mean)
}

/// Sorted-rank form `Σ_i (2i − n − 1) x_(i) / (n Σ x)` with ascending ranks, O(n log n).
pub fn gini_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n <= 1 {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    let sum: f64 = sorted.iter().sum();
    (weighted / (n as f64 * sum)).max(0.0)
}

pub fn hhi(d: &ContributionDistribution) -> MetricValue {
    let s: f64 = d.proportions().map(|p| p * p).sum();
    value_of(MetricKind::Hhi, s, d)
}

pub fn node_count(d: &ContributionDistribution) -> MetricValue {
    let n = d.entries().iter().filter(|e| e.count > 0.0).count();
    value_of(MetricKind::NodeCount, n as f64, d)
}

/// Split of a distribution into the smallest top-ranked set reaching the
/// threshold and everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NakamotoPartition {
    pub nakamoto_set: Vec<EntityId>,
    pub non_nakamoto_set: Vec<EntityId>,
    pub coefficient: usize,
    pub threshold: f64,
}

/// Whether a running count total reaches `threshold` of `total`.
pub fn reaches_threshold(prefix: f64, total: f64, threshold: f64) -> bool {
    prefix >= threshold * total - NAKAMOTO_REL_TOL * total
}

pub fn nakamoto(d: &ContributionDistribution, threshold: f64) -> Result<NakamotoPartition, MetricError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    let entries = d.entries();
    let total = d.total();
    let mut prefix = 0.0;
    let mut k = entries.len();
    for (i, e) in entries.iter().enumerate() {
        prefix += e.count;
        if reaches_threshold(prefix, total, threshold) {
            k = i + 1;
            break;
        }
    }
    let ids = entries.iter().map(|e| e.entity.clone());
    Ok(NakamotoPartition {
        nakamoto_set: ids.clone().take(k).collect(),
        non_nakamoto_set: ids.skip(k).collect(),
        coefficient: k,
        threshold,
    })
}

pub fn nakamoto_coefficient(d: &ContributionDistribution, threshold: f64) -> Result<MetricValue, MetricError> {
    let p = nakamoto(d, threshold)?;
    Ok(value_of(MetricKind::Nakamoto { threshold }, p.coefficient as f64, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize, Granularity, SubsystemKind};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn dist(counts: &[f64]) -> ContributionDistribution {
        let w = TimeWindow::starting_at(NaiveDate::from_ymd_opt(2023, 5, 1).unwrap(), Granularity::Daily);
        normalize(
            counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (EntityId::new(format!("e{i:04}")).unwrap(), c)),
            w,
            SubsystemKind::Consensus,
        )
        .unwrap()
    }

    // Reference entropy evaluated straight from the definition, in natural
    // log then converted, so it shares no code with the kernel.
    fn entropy_oracle(ps: &[f64]) -> f64 {
        -ps.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>() / std::f64::consts::LN_2
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(&dist(&[1.0])).value, 0.0);
        assert_eq!(shannon_entropy(&dist(&[0.5, 0.5])).value, 1.0);
        assert_eq!(shannon_entropy(&dist(&[0.25; 4])).value, 2.0);
        let d = shannon_entropy(&dist(&[0.65, 0.35])).value;
        assert!((d - 0.934068).abs() < 1e-6);
        assert!((d - entropy_oracle(&[0.65, 0.35])).abs() < 1e-12);
        let e = shannon_entropy(&dist(&[0.3, 0.3, 0.3, 0.1])).value;
        assert!((e - 1.895462).abs() < 1e-6);
    }

    #[test]
    fn renyi_values() {
        assert_eq!(
            renyi_entropy(&dist(&[5.0, 1.0, 1.0, 1.0, 2.0, 3.0, 9.0, 1.0]), 0.0)
                .unwrap()
                .value,
            3.0
        );
        let d = dist(&[0.65, 0.35]);
        assert_eq!(renyi_entropy(&d, 1.0).unwrap().value, shannon_entropy(&d).value);
        assert!((renyi_entropy(&d, 2.0).unwrap().value - 0.875672).abs() < 1e-6);
        assert!(matches!(renyi_entropy(&d, -0.5), Err(MetricError::InvalidAlpha(_))));
        assert!(matches!(
            renyi_entropy(&d, f64::INFINITY),
            Err(MetricError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&dist(&[1.0])).value, 0.0);
        assert_eq!(gini(&dist(&[0.5, 0.5])).value, 0.0);
        assert_eq!(gini(&dist(&[0.25; 4])).value, 0.0);
        assert!((gini(&dist(&[0.65, 0.35])).value - 0.15).abs() < 1e-12);
        assert!((gini(&dist(&[0.3, 0.3, 0.3, 0.1])).value - 0.15).abs() < 1e-12);
    }

    #[test]
    fn gini_routes_agree_on_large_input() {
        let xs: Vec<f64> = (1..=3000).map(|i| 1.0 / i as f64).collect();
        assert!((gini_pairwise(&xs) - gini_sorted(&xs)).abs() < 1e-10);
        let big = dist(&(1..=12_000).map(|i| (i % 97 + 1) as f64).collect::<Vec<_>>());
        let g = gini(&big).value;
        assert!((0.0..1.0).contains(&g));
    }

    #[test]
    fn nakamoto_values() {
        assert_eq!(nakamoto(&dist(&[0.6, 0.4]), 0.51).unwrap().coefficient, 1);
        assert_eq!(nakamoto(&dist(&[1.0; 100]), 0.51).unwrap().coefficient, 51);
        assert_eq!(nakamoto(&dist(&[0.01; 100]), 0.51).unwrap().coefficient, 51);
        let p = nakamoto(&dist(&[0.25; 4]), 0.51).unwrap();
        assert_eq!(p.coefficient, 3);
        assert_eq!(p.nakamoto_set.len(), 3);
        assert_eq!(p.non_nakamoto_set, vec![EntityId::new("e0003").unwrap()]);
        assert!(nakamoto(&dist(&[1.0]), 1.0).is_err());
        assert!(nakamoto(&dist(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn hhi_and_node_count() {
        assert_eq!(hhi(&dist(&[1.0])).value, 1.0);
        assert!((hhi(&dist(&[1.0; 8])).value - 0.125).abs() < 1e-15);
        assert!((hhi(&dist(&[0.65, 0.35])).value - 0.545).abs() < 1e-12);
        assert_eq!(node_count(&dist(&[1.0])).value, 1.0);
        assert_eq!(node_count(&dist(&[0.5, 0.5])).value, 2.0);
        assert_eq!(node_count(&dist(&[3.0, 1.0, 0.0])).value, 2.0);
    }

    #[test]
    fn names_are_stable() {
        assert_eq!(MetricKind::RenyiEntropy { alpha: 2.0 }.name(), "renyi_2");
        assert_eq!(MetricKind::RenyiEntropy { alpha: 0.5 }.name(), "renyi_0.5");
        assert_eq!(MetricKind::Nakamoto { threshold: 0.51 }.name(), "nakamoto");
    }

    fn counts_strategy(max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-3f64..100.0, 1..max)
    }

    /// Smallest subset size whose best subset reaches the threshold, by enumeration.
    fn nakamoto_brute_force(counts: &[f64], threshold: f64) -> usize {
        let n = counts.len();
        let total = crate::sum::exact_sum(counts.iter().copied());
        let mut best = n;
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size >= best {
                continue;
            }
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| counts[i]).sum();
            if reaches_threshold(s, total, threshold) {
                best = size;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn entropy_bounds(counts in counts_strategy(80)) {
            let d = dist(&counts);
            let h = shannon_entropy(&d).value;
            let max = (node_count(&d).value).log2();
            prop_assert!(h >= 0.0 && h <= max + 1e-12);
            let ps: Vec<f64> = d.proportions().collect();
            prop_assert!((h - entropy_oracle(&ps)).abs() < 1e-10);
        }

        #[test]
        fn uniform_attains_max(n in 1usize..300, c in 0.1f64..10.0) {
            let d = dist(&vec![c; n]);
            prop_assert!((shannon_entropy(&d).value - (n as f64).log2()).abs() < 1e-12);
        }

        #[test]
        fn renyi_monotone_and_continuous(counts in counts_strategy(60)) {
            let d = dist(&counts);
            let grid = [0.0, 0.5, 0.999, 1.0, 1.001, 2.0, 5.0];
            let vals: Vec<f64> = grid.iter().map(|&a| renyi_entropy(&d, a).unwrap().value).collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", vals);
            }
            let h = shannon_entropy(&d).value;
            prop_assert!((renyi_entropy(&d, 1.0 + 1e-4).unwrap().value - h).abs() < 1e-3);
            prop_assert!((renyi_entropy(&d, 1.0 - 1e-4).unwrap().value - h).abs() < 1e-3);
            prop_assert!((renyi_entropy(&d, 2.0).unwrap().value + hhi(&d).value.log2()).abs() < 1e-9);
        }

        #[test]
        fn scale_invariance(counts in counts_strategy(40), c in 1e-3f64..1e3) {
            let a = dist(&counts);
            let b = dist(&counts.iter().map(|x| x * c).collect::<Vec<_>>());
            prop_assert!((gini(&a).value - gini(&b).value).abs() < 1e-12);
            prop_assert!((shannon_entropy(&a).value - shannon_entropy(&b).value).abs() < 1e-12);
            prop_assert!((hhi(&a).value - hhi(&b).value).abs() < 1e-12);
            prop_assert_eq!(nakamoto(&a, 0.51).unwrap().coefficient, nakamoto(&b, 0.51).unwrap().coefficient);
        }

        #[test]
        fn nakamoto_matches_brute_force(counts in counts_strategy(13), t in 0.05f64..0.95) {
            let d = dist(&counts);
            let ordered: Vec<f64> = d.entries().iter().map(|e| e.count).collect();
            prop_assert_eq!(nakamoto(&d, t).unwrap().coefficient, nakamoto_brute_force(&ordered, t));
        }

        #[test]
        fn gini_routes_agree(counts in counts_strategy(200)) {
            let d = dist(&counts);
            let ps: Vec<f64> = d.proportions().collect();
            let g = gini_pairwise(&ps);
            prop_assert!((g - gini_sorted(&ps)).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&g));
        }

        #[test]
        fn merging_entities_concentrates(counts in prop::collection::vec(1e-3f64..100.0, 2..50), i in 0usize..50, j in 0usize..50) {
            let n = counts.len();
            let (i, j) = (i % n, j % n);
            prop_assume!(i != j);
            let mut merged = counts.clone();
            merged[i] += merged[j];
            merged.remove(j);
            let a = dist(&counts);
            let b = dist(&merged);
            prop_assert!(shannon_entropy(&b).value <= shannon_entropy(&a).value + 1e-12);
            prop_assert!(hhi(&b).value >= hhi(&a).value - 1e-12);
        }
    }
}
