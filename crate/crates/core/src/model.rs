//! Entities, contributions, subsystems and time windows.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sum::ExactSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("entity id is empty")]
    EmptyEntity,
    #[error("distribution has no positive counts")]
    EmptyDistribution,
    #[error("negative count {count} for entity {entity}")]
    NegativeCount { entity: String, count: f64 },
    #[error("non-finite value for entity {entity}")]
    NonFinite { entity: String },
    #[error("timestamp {0} outside the supported range [2008-01-01, now]")]
    TimestampOutOfRange(DateTime<Utc>),
    #[error("unknown subsystem `{0}`")]
    UnknownSubsystem(String),
    #[error("unknown granularity `{0}`")]
    UnknownGranularity(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Opaque identifier of a contributing entity. Comparison is exact byte equality.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(Arc<str>);

impl EntityId {
    pub const UNKNOWN: &'static str = "Unknown";

    /// Trims surrounding whitespace; fails if nothing is left.
    pub fn new(value: impl AsRef<str>) -> Result<Self, ModelError> {
        let trimmed = value.as_ref().trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyEntity);
        }
        Ok(EntityId(Arc::from(trimmed)))
    }

    pub fn unknown() -> Self {
        EntityId(Arc::from(Self::UNKNOWN))
    }

    pub fn is_unknown(&self) -> bool {
        &*self.0 == Self::UNKNOWN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for EntityId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        EntityId::new(value)
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> String {
        id.0.to_string()
    }
}

impl FromStr for EntityId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Daily,
    Monthly,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Daily => "daily",
            Granularity::Monthly => "monthly",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "daily" | "day" => Ok(Granularity::Daily),
            "monthly" | "month" => Ok(Granularity::Monthly),
            other => Err(ModelError::UnknownGranularity(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsystemKind {
    Consensus,
    Development,
    Exchanges,
    DefiTvl,
    DefiGovernance,
    NftMarketplaces,
}

impl SubsystemKind {
    pub const ALL: [SubsystemKind; 6] = [
        SubsystemKind::Consensus,
        SubsystemKind::Development,
        SubsystemKind::Exchanges,
        SubsystemKind::DefiTvl,
        SubsystemKind::DefiGovernance,
        SubsystemKind::NftMarketplaces,
    ];

    pub fn default_granularity(self) -> Granularity {
        match self {
            SubsystemKind::Development | SubsystemKind::Exchanges => Granularity::Monthly,
            SubsystemKind::Consensus
            | SubsystemKind::DefiTvl
            | SubsystemKind::DefiGovernance
            | SubsystemKind::NftMarketplaces => Granularity::Daily,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubsystemKind::Consensus => "consensus",
            SubsystemKind::Development => "development",
            SubsystemKind::Exchanges => "exchanges",
            SubsystemKind::DefiTvl => "defi_tvl",
            SubsystemKind::DefiGovernance => "defi_governance",
            SubsystemKind::NftMarketplaces => "nft_marketplaces",
        }
    }
}

impl fmt::Display for SubsystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsystemKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        SubsystemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ModelError::UnknownSubsystem(s.to_string()))
    }
}

/// Half-open UTC interval `[start, end)` aligned to its granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub granularity: Granularity,
}

impl TimeWindow {
    /// The window of the given granularity that contains `ts`.
    pub fn containing(ts: DateTime<Utc>, granularity: Granularity) -> Self {
        let date = ts.date_naive();
        let start_date = match granularity {
            Granularity::Daily => date,
            Granularity::Monthly => date.with_day(1).expect("day 1 exists"),
        };
        Self::starting_at(start_date, granularity)
    }

    pub fn starting_at(start_date: NaiveDate, granularity: Granularity) -> Self {
        let start_date = match granularity {
            Granularity::Daily => start_date,
            Granularity::Monthly => start_date.with_day(1).expect("day 1 exists"),
        };
        let end_date = match granularity {
            Granularity::Daily => start_date + Duration::days(1),
            Granularity::Monthly => {
                let (y, m) = if start_date.month() == 12 {
                    (start_date.year() + 1, 1)
                } else {
                    (start_date.year(), start_date.month() + 1)
                };
                NaiveDate::from_ymd_opt(y, m, 1).expect("valid month start")
            }
        };
        TimeWindow {
            start: midnight(start_date),
            end: midnight(end_date),
            granularity,
        }
    }

    pub fn next(&self) -> TimeWindow {
        TimeWindow::starting_at(self.end.date_naive(), self.granularity)
    }

    pub fn contains(&self, ts: DateTime<Utc>) -> bool {
        self.start <= ts && ts < self.end
    }

    /// `YYYY-MM-DD` of the window start.
    pub fn label(&self) -> String {
        self.start.format("%Y-%m-%d").to_string()
    }
}

impl PartialOrd for TimeWindow {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeWindow {
    fn cmp(&self, other: &Self) -> Ordering {
        self.start
            .cmp(&other.start)
            .then(self.end.cmp(&other.end))
            .then(self.granularity.cmp(&other.granularity))
    }
}

fn midnight(date: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
}

pub fn earliest_timestamp() -> DateTime<Utc> {
    midnight(NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date"))
}

/// One timestamped contribution by one entity in one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub timestamp: DateTime<Utc>,
    pub entity: EntityId,
    pub subsystem: SubsystemKind,
    pub weight: f64,
}

impl ContributionRecord {
    pub fn new(
        timestamp: DateTime<Utc>,
        entity: EntityId,
        subsystem: SubsystemKind,
        weight: f64,
    ) -> Result<Self, ModelError> {
        if !weight.is_finite() {
            return Err(ModelError::NonFinite {
                entity: entity.to_string(),
            });
        }
        if weight < 0.0 {
            return Err(ModelError::NegativeCount {
                entity: entity.to_string(),
                count: weight,
            });
        }
        if timestamp < earliest_timestamp() || timestamp > Utc::now() {
            return Err(ModelError::TimestampOutOfRange(timestamp));
        }
        Ok(ContributionRecord {
            timestamp,
            entity,
            subsystem,
            weight,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub entity: EntityId,
    pub count: f64,
    pub proportion: f64,
}

/// Normalized contributions of one window. Entries are sorted by descending
/// proportion, ties by ascending entity id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionDistribution {
    window: TimeWindow,
    subsystem: SubsystemKind,
    entries: Vec<DistributionEntry>,
    total: f64,
}

/// Merges duplicates, drops zero counts and computes proportions.
pub fn normalize<I>(
    raw: I,
    window: TimeWindow,
    subsystem: SubsystemKind,
) -> Result<ContributionDistribution, ModelError>
where
    I: IntoIterator<Item = (EntityId, f64)>,
{
    let mut merged: HashMap<EntityId, ExactSum> = HashMap::new();
    for (entity, count) in raw {
        if !count.is_finite() {
            return Err(ModelError::NonFinite {
                entity: entity.to_string(),
            });
        }
        if count < 0.0 {
            return Err(ModelError::NegativeCount {
                entity: entity.to_string(),
                count,
            });
        }
        if count > 0.0 {
            merged.entry(entity).or_default().add(count);
        }
    }
    let counts = merged.into_iter().map(|(e, s)| (e, s.value())).collect();
    ContributionDistribution::from_counts(counts, window, subsystem)
}

impl ContributionDistribution {
    /// `counts` must hold distinct entities with positive finite counts.
    pub(crate) fn from_counts(
        mut counts: Vec<(EntityId, f64)>,
        window: TimeWindow,
        subsystem: SubsystemKind,
    ) -> Result<Self, ModelError> {
        if counts.is_empty() {
            return Err(ModelError::EmptyDistribution);
        }
        // fixed summation order so the total does not depend on hash order
        counts.sort_by(|a, b| a.0.cmp(&b.0));
        let total = crate::sum::exact_sum(counts.iter().map(|c| c.1));
        let mut entries: Vec<DistributionEntry> = counts
            .into_iter()
            .map(|(entity, count)| DistributionEntry {
                entity,
                count,
                proportion: count / total,
            })
            .collect();
        entries.sort_by(entry_order);
        Ok(ContributionDistribution {
            window,
            subsystem,
            entries,
            total,
        })
    }

    /// Assembles a distribution without re-deriving it. Use
    /// [`validate`](Self::validate) before trusting the result.
    pub fn from_parts_unchecked(
        window: TimeWindow,
        subsystem: SubsystemKind,
        entries: Vec<DistributionEntry>,
        total: f64,
    ) -> Self {
        ContributionDistribution {
            window,
            subsystem,
            entries,
            total,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidDistribution(msg));
        if self.entries.is_empty() {
            return Err(ModelError::EmptyDistribution);
        }
        if !(self.total.is_finite() && self.total > 0.0) {
            return bad(format!("total {} is not positive", self.total));
        }
        if self.window.start >= self.window.end {
            return bad("window start is not before end".into());
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !(e.count.is_finite() && e.count > 0.0) {
                return bad(format!("entity {} has count {}", e.entity, e.count));
            }
            if !(0.0..=1.0).contains(&e.proportion) || e.proportion != e.count / self.total {
                return bad(format!("entity {} has inconsistent proportion", e.entity));
            }
            if !seen.insert(&e.entity) {
                return bad(format!("duplicate entity {}", e.entity));
            }
        }
        if self
            .entries
            .windows(2)
            .any(|w| entry_order(&w[0], &w[1]) != Ordering::Less)
        {
            return bad("entries are not in canonical order".into());
        }
        let sum: f64 = crate::sum::exact_sum(self.entries.iter().map(|e| e.proportion));
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("proportions sum to {sum}"));
        }
        Ok(())
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn subsystem(&self) -> SubsystemKind {
        self.subsystem
    }

    pub fn entries(&self) -> &[DistributionEntry] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn proportions(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.proportion)
    }

    pub fn raw_counts(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.entries.iter().map(|e| (e.entity.clone(), e.count))
    }

    /// Renormalizes the entries whose ids are not in `removed`.
    pub fn without<'a, I>(&self, removed: I) -> Result<ContributionDistribution, ModelError>
    where
        I: IntoIterator<Item = &'a EntityId>,
    {
        let removed: std::collections::HashSet<&EntityId> = removed.into_iter().collect();
        let counts = self
            .entries
            .iter()
            .filter(|e| !removed.contains(&e.entity))
            .map(|e| (e.entity.clone(), e.count))
            .collect();
        ContributionDistribution::from_counts(counts, self.window, self.subsystem)
    }
}

fn entry_order(a: &DistributionEntry, b: &DistributionEntry) -> Ordering {
    b.proportion
        .total_cmp(&a.proportion)
        .then_with(|| a.entity.cmp(&b.entity))
}
