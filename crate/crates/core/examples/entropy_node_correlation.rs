//! Does entropy just track the number of participants? Correlate the two
//! series over monthly windows.

use chrono::NaiveDate;
use decentrality::analysis::correlate_aligned;
use decentrality::{node_count, normalize, shannon_entropy, EntityId, Granularity, SubsystemKind, TimeWindow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut window = TimeWindow::starting_at(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), Granularity::Monthly);
    let (mut entropy, mut nodes) = (Vec::new(), Vec::new());
    for month in 0..12u32 {
        let n = 3 + (month * 7) % 11;
        let raw = (0..n)
            .map(|i| Ok((EntityId::new(format!("exchange-{i}"))?, 1.0 + (i * i) as f64)))
            .collect::<Result<Vec<_>, decentrality::model::ModelError>>()?;
        let d = normalize(raw, window, SubsystemKind::Exchanges)?;
        entropy.push((window, shannon_entropy(&d).value));
        nodes.push((window, node_count(&d).value));
        window = window.next();
    }
    let outcome = correlate_aligned(&entropy, &nodes, "shannon", "node_count")?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}
