//! Removing each window's Nakamoto set and comparing what is left.

use chrono::NaiveDate;
use decentrality::analysis::{knockout_series, CorrelationOutcome};
use decentrality::{normalize, EntityId, Granularity, SubsystemKind, TimeWindow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let mut window = TimeWindow::starting_at(start, Granularity::Daily);
    let mut dists = Vec::new();
    for day in 0..8 {
        // one dominant pool whose share fades as smaller pools join
        let mut raw = vec![(EntityId::new("pool-big")?, 60.0 - 5.0 * day as f64)];
        for i in 0..(3 + 2 * day) {
            raw.push((EntityId::new(format!("pool-{i:02}"))?, 10.0 + (i % 3) as f64));
        }
        dists.push(normalize(raw, window, SubsystemKind::Consensus)?);
        window = window.next();
    }

    let study = knockout_series(&dists, 0.51)?;
    println!(
        "{:<12}{:>9}{:>9}{:>8}{:>8}",
        "window", "H pre", "H post", "N pre", "N post"
    );
    for r in &study.results {
        let post = r.post.as_ref().expect("remainder is never empty here");
        println!(
            "{:<12}{:>9.4}{:>9.4}{:>8}{:>8}",
            r.window.label(),
            r.pre.entropy,
            post.entropy,
            r.pre.nakamoto,
            post.nakamoto
        );
    }
    for (label, outcome) in [("entropy", &study.entropy), ("nakamoto", &study.nakamoto)] {
        match outcome {
            CorrelationOutcome::Defined(c) => println!("{label}: r = {:.4}, p = {:.4}, n = {}", c.r, c.p_value, c.n),
            CorrelationOutcome::Degenerate { reason, .. } => println!("{label}: undefined ({reason})"),
        }
    }
    Ok(())
}
