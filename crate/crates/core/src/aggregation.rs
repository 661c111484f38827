//! Window aggregation and metric panels.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricKind, DEFAULT_NAKAMOTO_THRESHOLD};
use crate::model::{ContributionDistribution, ContributionRecord, EntityId, Granularity, SubsystemKind, TimeWindow};
use crate::sum::ExactSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("cannot narrow {subsystem} windows from {from} to {to}")]
    GranularityNarrowing {
        subsystem: SubsystemKind,
        from: Granularity,
        to: Granularity,
    },
    #[error("series overlap at window {0}")]
    OverlappingSeries(String),
    #[error("series describe different subsystems or metrics")]
    SeriesMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsystemDescriptor {
    pub ecosystem: String,
    pub subsystem: SubsystemKind,
    pub granularity: Granularity,
}

impl SubsystemDescriptor {
    pub fn new(ecosystem: impl Into<String>, subsystem: SubsystemKind) -> Self {
        SubsystemDescriptor {
            ecosystem: ecosystem.into(),
            subsystem,
            granularity: subsystem.default_granularity(),
        }
    }

    /// Widening (daily to monthly) only.
    pub fn with_granularity(mut self, granularity: Granularity) -> Result<Self, AggregationError> {
        let default = self.subsystem.default_granularity();
        if default == Granularity::Monthly && granularity == Granularity::Daily {
            return Err(AggregationError::GranularityNarrowing {
                subsystem: self.subsystem,
                from: default,
                to: granularity,
            });
        }
        self.granularity = granularity;
        Ok(self)
    }
}

/// Accumulates records into per-window, per-entity totals. Memory is bounded
/// by the number of distinct (window, entity) pairs, not by record count.
#[derive(Debug, Clone)]
pub struct WindowAggregator {
    descriptor: SubsystemDescriptor,
    windows: HashMap<TimeWindow, HashMap<EntityId, ExactSum>>,
    accepted: u64,
    ignored_zero: u64,
    rejected: Vec<String>,
}

impl WindowAggregator {
    pub fn new(descriptor: SubsystemDescriptor) -> Self {
        WindowAggregator {
            descriptor,
            windows: HashMap::new(),
            accepted: 0,
            ignored_zero: 0,
            rejected: Vec::new(),
        }
    }

    pub fn descriptor(&self) -> &SubsystemDescriptor {
        &self.descriptor
    }

    pub fn push(&mut self, record: &ContributionRecord) {
        if record.subsystem != self.descriptor.subsystem {
            self.rejected.push(format!(
                "record for {} fed to {} aggregator",
                record.subsystem, self.descriptor.subsystem
            ));
            return;
        }
        if !record.weight.is_finite() || record.weight < 0.0 {
            self.rejected
                .push(format!("entity {} has invalid weight {}", record.entity, record.weight));
            return;
        }
        if record.weight == 0.0 {
            self.ignored_zero += 1;
            return;
        }
        let window = TimeWindow::containing(record.timestamp, self.descriptor.granularity);
        self.windows
            .entry(window)
            .or_default()
            .entry(record.entity.clone())
            .or_default()
            .add(record.weight);
        self.accepted += 1;
    }

    /// Combines a shard built from a disjoint slice of the same stream.
    pub fn merge(&mut self, other: WindowAggregator) {
        for (window, entities) in other.windows {
            let slot = self.windows.entry(window).or_default();
            for (entity, sum) in entities {
                slot.entry(entity).or_default().merge(&sum);
            }
        }
        self.accepted += other.accepted;
        self.ignored_zero += other.ignored_zero;
        self.rejected.extend(other.rejected);
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn ignored_zero_weight(&self) -> u64 {
        self.ignored_zero
    }

    /// Records that could not be aggregated, with reasons.
    pub fn rejected(&self) -> &[String] {
        &self.rejected
    }

    /// One distribution per non-empty window, in window order.
    pub fn finish(self) -> Vec<ContributionDistribution> {
        let subsystem = self.descriptor.subsystem;
        let ordered: BTreeMap<_, _> = self.windows.into_iter().collect();
        ordered
            .into_iter()
            .filter_map(|(window, entities)| {
                let counts = entities.into_iter().map(|(e, s)| (e, s.value())).collect();
                ContributionDistribution::from_counts(counts, window, subsystem).ok()
            })
            .collect()
    }
}

pub fn window_aggregate<'a, I>(records: I, descriptor: &SubsystemDescriptor) -> Vec<ContributionDistribution>
where
    I: IntoIterator<Item = &'a ContributionRecord>,
{
    let mut agg = WindowAggregator::new(descriptor.clone());
    for r in records {
        agg.push(r);
    }
    for reason in agg.rejected() {
        warn!("{reason}");
    }
    agg.finish()
}

/// Aggregates `records` across `shards` threads, one contiguous chunk each.
pub fn window_aggregate_sharded(
    records: &[ContributionRecord],
    descriptor: &SubsystemDescriptor,
    shards: usize,
) -> Vec<ContributionDistribution> {
    let shards = shards.max(1);
    let chunk = records.len().div_ceil(shards).max(1);
    let parts: Vec<WindowAggregator> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut agg = WindowAggregator::new(descriptor.clone());
                    part.iter().for_each(|r| agg.push(r));
                    agg
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
    });
    let mut total = WindowAggregator::new(descriptor.clone());
    for p in parts {
        total.merge(p);
    }
    total.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelParams {
    pub alphas: Vec<f64>,
    pub threshold: f64,
}

impl Default for PanelParams {
    fn default() -> Self {
        PanelParams {
            alphas: vec![2.0],
            threshold: DEFAULT_NAKAMOTO_THRESHOLD,
        }
    }
}

/// Metric families a panel can request; Rényi expands per α.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Shannon,
    Renyi,
    Gini,
    Nakamoto,
    Hhi,
    NodeCount,
}

impl MetricFamily {
    pub const ALL: [MetricFamily; 6] = [
        MetricFamily::Shannon,
        MetricFamily::Renyi,
        MetricFamily::Gini,
        MetricFamily::Nakamoto,
        MetricFamily::Hhi,
        MetricFamily::NodeCount,
    ];

    pub fn parse(s: &str) -> Option<MetricFamily> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "shannon" | "entropy" | "shannon_entropy" => Some(MetricFamily::Shannon),
            "renyi" | "renyi_entropy" => Some(MetricFamily::Renyi),
            "gini" => Some(MetricFamily::Gini),
            "nakamoto" => Some(MetricFamily::Nakamoto),
            "hhi" => Some(MetricFamily::Hhi),
            "node_count" | "nodes" => Some(MetricFamily::NodeCount),
            _ => None,
        }
    }

    pub fn kinds(self, params: &PanelParams) -> Vec<MetricKind> {
        match self {
            MetricFamily::Shannon => vec![MetricKind::ShannonEntropy],
            MetricFamily::Renyi => params
                .alphas
                .iter()
                .map(|&alpha| MetricKind::RenyiEntropy { alpha })
                .collect(),
            MetricFamily::Gini => vec![MetricKind::Gini],
            MetricFamily::Nakamoto => vec![MetricKind::Nakamoto {
                threshold: params.threshold,
            }],
            MetricFamily::Hhi => vec![MetricKind::Hhi],
            MetricFamily::NodeCount => vec![MetricKind::NodeCount],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum GapReason {
    NoData,
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub window: TimeWindow,
    pub reason: GapReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub descriptor: SubsystemDescriptor,
    pub metric: MetricKind,
    pub points: Vec<(TimeWindow, f64)>,
    pub gaps: Vec<Gap>,
}

impl MetricSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn get(&self, window: &TimeWindow) -> Option<f64> {
        self.points
            .binary_search_by(|p| p.0.cmp(window))
            .ok()
            .map(|i| self.points[i].1)
    }

    /// Concatenates two series over disjoint windows and re-derives the
    /// no-data gaps between them.
    pub fn merge(&self, other: &MetricSeries) -> Result<MetricSeries, AggregationError> {
        if self.descriptor != other.descriptor || self.metric.name() != other.metric.name() {
            return Err(AggregationError::SeriesMismatch);
        }
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        points.sort_by_key(|a| a.0);
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(AggregationError::OverlappingSeries(w[0].0.label()));
        }
        let invalid: Vec<Gap> = self
            .gaps
            .iter()
            .chain(&other.gaps)
            .filter(|g| g.reason != GapReason::NoData)
            .cloned()
            .collect();
        let mut covered: Vec<TimeWindow> = points.iter().map(|p| p.0).collect();
        covered.extend(invalid.iter().map(|g| g.window));
        let mut gaps = no_data_gaps(&covered);
        gaps.extend(invalid);
        gaps.sort_by_key(|a| a.window);
        Ok(MetricSeries {
            descriptor: self.descriptor.clone(),
            metric: self.metric,
            points,
            gaps,
        })
    }
}

/// Windows strictly between the first and last covered window that are absent.
fn no_data_gaps(covered: &[TimeWindow]) -> Vec<Gap> {
    let mut sorted = covered.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut gaps = Vec::new();
    for pair in sorted.windows(2) {
        let mut w = pair[0].next();
        while w.start < pair[1].start {
            gaps.push(Gap {
                window: w,
                reason: GapReason::NoData,
            });
            w = w.next();
        }
    }
    gaps
}

/// Computes each requested metric for every distribution. Distributions that
/// fail validation or produce an invalid value become gaps for that metric.
pub fn build_panel(
    descriptor: &SubsystemDescriptor,
    dists: &[ContributionDistribution],
    metrics: &[MetricFamily],
    params: &PanelParams,
) -> Vec<MetricSeries> {
    let mut families = metrics.to_vec();
    families.sort();
    families.dedup();
    let mut ordered: Vec<&ContributionDistribution> = dists.iter().collect();
    ordered.sort_by(|a, b| a.window().cmp(b.window()));

    let validity: Vec<Result<(), String>> = ordered
        .iter()
        .map(|d| {
            if d.subsystem() != descriptor.subsystem {
                return Err(format!("distribution is for subsystem {}", d.subsystem()));
            }
            if d.window().granularity != descriptor.granularity {
                return Err(format!("distribution has {} window", d.window().granularity));
            }
            d.validate().map_err(|e| e.to_string())
        })
        .collect();
    let windows: Vec<TimeWindow> = ordered.iter().map(|d| *d.window()).collect();
    let no_data = no_data_gaps(&windows);

    let mut out = Vec::new();
    for kind in families.iter().flat_map(|f| f.kinds(params)) {
        let mut points: Vec<(TimeWindow, f64)> = Vec::with_capacity(ordered.len());
        let mut gaps = no_data.clone();
        for (d, valid) in ordered.iter().zip(&validity) {
            let window = *d.window();
            let result = match valid {
                Ok(()) => kind.compute(d).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            match result {
                Ok(v) if points.last().is_none_or(|p| p.0 < window) => points.push((window, v)),
                Ok(_) => gaps.push(Gap {
                    window,
                    reason: GapReason::Invalid("duplicate window".into()),
                }),
                Err(reason) => {
                    warn!(
                        "{}/{} {} at {}: {reason}",
                        descriptor.ecosystem,
                        descriptor.subsystem,
                        kind.name(),
                        window.label()
                    );
                    gaps.push(Gap {
                        window,
                        reason: GapReason::Invalid(reason),
                    });
                }
            }
        }
        gaps.sort_by_key(|a| a.window);
        out.push(MetricSeries {
            descriptor: descriptor.clone(),
            metric: kind,
            points,
            gaps,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize, DistributionEntry};
    use chrono::{DateTime, NaiveDate, TimeZone, Utc};
    use proptest::prelude::*;

    fn ts(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
    }

    fn rec(t: DateTime<Utc>, e: &str, sub: SubsystemKind, w: f64) -> ContributionRecord {
        ContributionRecord::new(t, EntityId::new(e).unwrap(), sub, w).unwrap()
    }

    fn shares(d: &ContributionDistribution) -> Vec<(String, f64)> {
        d.entries()
            .iter()
            .map(|e| (e.entity.to_string(), e.proportion))
            .collect()
    }

    #[test]
    fn daily_consensus() {
        let sub = SubsystemKind::Consensus;
        let records = vec![
            rec(ts(2023, 3, 1, 1), "V1", sub, 1.0),
            rec(ts(2023, 3, 1, 5), "V2", sub, 1.0),
            rec(ts(2023, 3, 1, 9), "V1", sub, 1.0),
            rec(ts(2023, 3, 1, 23), "V1", sub, 1.0),
        ];
        let dists = window_aggregate(&records, &SubsystemDescriptor::new("eth", sub));
        assert_eq!(dists.len(), 1);
        assert_eq!(shares(&dists[0]), vec![("V1".into(), 0.75), ("V2".into(), 0.25)]);
    }

    #[test]
    fn monthly_development() {
        let sub = SubsystemKind::Development;
        let records = vec![
            rec(ts(2021, 1, 5, 12), "D", sub, 1.0),
            rec(ts(2021, 1, 20, 8), "D", sub, 1.0),
        ];
        let dists = window_aggregate(&records, &SubsystemDescriptor::new("btc", sub));
        assert_eq!(dists.len(), 1);
        assert_eq!(dists[0].window().label(), "2021-01-01");
        assert_eq!(dists[0].entries()[0].count, 2.0);
    }

    #[test]
    fn no_cross_window_leakage() {
        let sub = SubsystemKind::Consensus;
        let records = vec![
            rec(ts(2023, 3, 1, 23), "A", sub, 1.0),
            rec(ts(2023, 3, 2, 0), "B", sub, 1.0),
            rec(ts(2023, 3, 2, 1), "A", sub, 0.0),
        ];
        let dists = window_aggregate(&records, &SubsystemDescriptor::new("x", sub));
        assert_eq!(dists.len(), 2);
        assert_eq!(shares(&dists[0]), vec![("A".into(), 1.0)]);
        assert_eq!(shares(&dists[1]), vec![("B".into(), 1.0)]);
    }

    #[test]
    fn granularity_only_widens() {
        let d = SubsystemDescriptor::new("x", SubsystemKind::Consensus)
            .with_granularity(Granularity::Monthly)
            .unwrap();
        assert_eq!(d.granularity, Granularity::Monthly);
        assert!(SubsystemDescriptor::new("x", SubsystemKind::Development)
            .with_granularity(Granularity::Daily)
            .is_err());
    }

    #[test]
    fn rejects_foreign_records() {
        let mut agg = WindowAggregator::new(SubsystemDescriptor::new("x", SubsystemKind::Consensus));
        agg.push(&rec(ts(2023, 1, 1, 0), "A", SubsystemKind::DefiTvl, 1.0));
        agg.push(&rec(ts(2023, 1, 1, 0), "A", SubsystemKind::Consensus, 0.0));
        assert_eq!(agg.rejected().len(), 1);
        assert_eq!(agg.ignored_zero_weight(), 1);
        assert!(agg.finish().is_empty());
    }

    fn day(d: u32) -> TimeWindow {
        TimeWindow::starting_at(NaiveDate::from_ymd_opt(2023, 1, d).unwrap(), Granularity::Daily)
    }

    fn uniform(window: TimeWindow, n: usize) -> ContributionDistribution {
        normalize(
            (0..n).map(|i| (EntityId::new(format!("v{i}")).unwrap(), 1.0)),
            window,
            SubsystemKind::Consensus,
        )
        .unwrap()
    }

    #[test]
    fn panel_values_and_gaps() {
        let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
        let panel = build_panel(
            &desc,
            &[uniform(day(1), 1)],
            &[MetricFamily::Shannon, MetricFamily::Nakamoto],
            &PanelParams::default(),
        );
        assert_eq!(panel.len(), 2);
        assert_eq!(panel[0].values(), vec![0.0]);
        assert_eq!(panel[1].values(), vec![1.0]);

        let panel = build_panel(
            &desc,
            &[uniform(day(4), 4), uniform(day(1), 4)],
            &[MetricFamily::Shannon],
            &PanelParams::default(),
        );
        assert_eq!(panel[0].values(), vec![2.0, 2.0]);
        let gap_days: Vec<String> = panel[0].gaps.iter().map(|g| g.window.label()).collect();
        assert_eq!(gap_days, vec!["2023-01-02", "2023-01-03"]);
        assert!(panel[0].gaps.iter().all(|g| g.reason == GapReason::NoData));
    }

    #[test]
    fn invalid_distribution_becomes_gap() {
        let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
        let good = uniform(day(1), 2);
        let broken = ContributionDistribution::from_parts_unchecked(
            day(2),
            SubsystemKind::Consensus,
            vec![DistributionEntry {
                entity: EntityId::new("a").unwrap(),
                count: 1.0,
                proportion: 0.7,
            }],
            1.0,
        );
        let panel = build_panel(&desc, &[good, broken], &[MetricFamily::Hhi], &PanelParams::default());
        assert_eq!(panel[0].points.len(), 1);
        assert_eq!(panel[0].gaps.len(), 1);
        assert!(matches!(panel[0].gaps[0].reason, GapReason::Invalid(_)));
    }

    #[test]
    fn renyi_series_per_alpha() {
        let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
        let params = PanelParams {
            alphas: vec![0.0, 2.0],
            threshold: 0.51,
        };
        let panel = build_panel(&desc, &[uniform(day(1), 8)], &[MetricFamily::Renyi], &params);
        let names: Vec<String> = panel.iter().map(|s| s.metric.name()).collect();
        assert_eq!(names, vec!["renyi_0", "renyi_2"]);
        assert_eq!(panel[0].values(), vec![3.0]);
    }

    #[test]
    fn monthly_windows_start_on_the_first() {
        let sub = SubsystemKind::Exchanges;
        let records: Vec<_> = (1..=28).map(|d| rec(ts(2022, 2, d, 3), "ex", sub, d as f64)).collect();
        for d in window_aggregate(&records, &SubsystemDescriptor::new("x", sub)) {
            assert_eq!(d.window().start.format("%d").to_string(), "01");
        }
    }

    fn records_strategy() -> impl Strategy<Value = Vec<ContributionRecord>> {
        prop::collection::vec((0u32..5, 0u32..24, 0u8..6, 0.0f64..10.0), 1..200).prop_map(|v| {
            v.into_iter()
                .map(|(d, h, e, w)| rec(ts(2023, 6, d + 1, h), &format!("e{e}"), SubsystemKind::Consensus, w))
                .collect()
        })
    }

    fn panel_json(records: &[ContributionRecord]) -> String {
        let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
        let dists = window_aggregate(records, &desc);
        serde_json::to_string(&build_panel(&desc, &dists, &MetricFamily::ALL, &PanelParams::default())).unwrap()
    }

    proptest! {
        #[test]
        fn order_independent(records in records_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(panel_json(&records), panel_json(&shuffled));
        }

        #[test]
        fn sharding_matches_sequential(records in records_strategy(), shards in 1usize..6) {
            let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
            let a = window_aggregate(&records, &desc);
            let b = window_aggregate_sharded(&records, &desc, shards);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn disjoint_ranges_concatenate(records in records_strategy(), cut in 1u32..5) {
            let desc = SubsystemDescriptor::new("x", SubsystemKind::Consensus);
            let boundary = ts(2023, 6, cut + 1, 0);
            let (early, late): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.timestamp < boundary);
            let params = PanelParams::default();
            let whole = build_panel(&desc, &window_aggregate(&records, &desc), &MetricFamily::ALL, &params);
            let a = build_panel(&desc, &window_aggregate(&early, &desc), &MetricFamily::ALL, &params);
            let b = build_panel(&desc, &window_aggregate(&late, &desc), &MetricFamily::ALL, &params);
            for ((w, x), y) in whole.iter().zip(&a).zip(&b) {
                prop_assert_eq!(w, &x.merge(y).unwrap());
            }
        }
    }
}
