//! Records to daily windows to a metric panel, with a missing day showing up
//! as a gap.

use chrono::{TimeZone, Utc};
use decentrality::aggregation::{build_panel, window_aggregate, MetricFamily, PanelParams, SubsystemDescriptor};
use decentrality::model::ContributionRecord;
use decentrality::{EntityId, SubsystemKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [
        (1, "uniswap", 4.0e9),
        (1, "aave", 6.0e9),
        (1, "curve", 2.0e9),
        (2, "uniswap", 4.1e9),
        (2, "aave", 5.9e9),
        (4, "aave", 5.0e9),
        (4, "lido", 9.0e9),
    ];
    let records = rows
        .iter()
        .map(|&(day, protocol, tvl)| {
            ContributionRecord::new(
                Utc.with_ymd_and_hms(2023, 6, day, 12, 0, 0).unwrap(),
                EntityId::new(protocol)?,
                SubsystemKind::DefiTvl,
                tvl,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let desc = SubsystemDescriptor::new("ethereum", SubsystemKind::DefiTvl);
    let dists = window_aggregate(&records, &desc);
    let panel = build_panel(&desc, &dists, &MetricFamily::ALL, &PanelParams::default());
    for series in &panel {
        let points: Vec<String> = series
            .points
            .iter()
            .map(|(w, v)| format!("{}={v:.4}", w.label()))
            .collect();
        let gaps: Vec<String> = series.gaps.iter().map(|g| g.window.label()).collect();
        println!(
            "{:<11} {}  gaps: {}",
            series.metric.name(),
            points.join(" "),
            gaps.join(",")
        );
    }
    Ok(())
}
