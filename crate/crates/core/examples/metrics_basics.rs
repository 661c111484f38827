//! Every metric over a handful of small distributions.
//!
//! ```text
//! cargo run --example metrics_basics
//! ```

use chrono::NaiveDate;
use decentrality::{
    gini, hhi, nakamoto, node_count, normalize, shannon_entropy, EntityId, Granularity, SubsystemKind, TimeWindow,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let window = TimeWindow::starting_at(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), Granularity::Daily);
    let cases: [(&str, &[f64]); 5] = [
        ("monopoly", &[1.0]),
        ("two equal", &[0.5, 0.5]),
        ("four equal", &[0.25; 4]),
        ("duopoly", &[0.65, 0.35]),
        ("three plus one", &[0.3, 0.3, 0.3, 0.1]),
    ];
    println!(
        "{:<16}{:>10}{:>8}{:>8}{:>10}{:>7}",
        "case", "entropy", "gini", "hhi", "nakamoto", "nodes"
    );
    for (name, shares) in cases {
        let raw = shares
            .iter()
            .enumerate()
            .map(|(i, &s)| Ok((EntityId::new(format!("pool-{i}"))?, s)))
            .collect::<Result<Vec<_>, decentrality::model::ModelError>>()?;
        let d = normalize(raw, window, SubsystemKind::Consensus)?;
        println!(
            "{:<16}{:>10.6}{:>8.3}{:>8.3}{:>10}{:>7}",
            name,
            shannon_entropy(&d).value,
            gini(&d).value,
            hhi(&d).value,
            nakamoto(&d, 0.51)?.coefficient,
            node_count(&d).value
        );
    }
    Ok(())
}
