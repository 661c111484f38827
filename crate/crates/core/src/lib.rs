//! Decentralization measurement for crypto-ecosystem subsystems.
//!
//! Raw contribution events (blocks, commits, trading volume, TVL, governance
//! balances) are bucketed into daily or monthly [`ContributionDistribution`]s,
//! scored with entropy, Gini, Nakamoto, HHI and node-count metrics, and
//! emitted as longitudinal panels. The [`analysis`] module runs Nakamoto-set
//! knockout simulations and correlation studies over those panels.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod aggregation;
pub mod analysis;
pub mod attribution;
pub mod config;
pub mod fixture;
pub mod format;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod sum;

pub use aggregation::{
    build_panel, window_aggregate, MetricFamily, MetricSeries, PanelParams, SubsystemDescriptor, WindowAggregator,
};
pub use analysis::{knockout, knockout_series, pearson, CorrelationOutcome, CorrelationReport, KnockoutResult};
pub use attribution::{
    attribute_proportional, attribute_single, resolve_pbs_proposer, BuilderLabels, BuilderTransfer, RewardPayout,
};
pub use config::RunConfig;
pub use metrics::{
    gini, hhi, nakamoto, node_count, renyi_entropy, shannon_entropy, MetricKind, MetricValue, NakamotoPartition,
};
pub use model::{
    normalize, ContributionDistribution, ContributionRecord, EntityId, Granularity, SubsystemKind, TimeWindow,
};
pub use pipeline::run_pipeline;
