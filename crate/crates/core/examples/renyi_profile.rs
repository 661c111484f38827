//! Rényi entropy across orders for a skewed distribution. Low orders count
//! participants, high orders track the largest one.

use chrono::NaiveDate;
use decentrality::{hhi, normalize, renyi_entropy, EntityId, Granularity, SubsystemKind, TimeWindow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let window = TimeWindow::starting_at(NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(), Granularity::Monthly);
    // Zipf-like: the k-th developer makes 100/k commits
    let raw = (1..=20)
        .map(|k| Ok((EntityId::new(format!("dev{k:02}"))?, 100.0 / k as f64)))
        .collect::<Result<Vec<_>, decentrality::model::ModelError>>()?;
    let d = normalize(raw, window, SubsystemKind::Development)?;

    for alpha in [0.0, 0.5, 1.0, 2.0, 4.0, 16.0, 64.0] {
        let h = renyi_entropy(&d, alpha)?.value;
        println!("alpha {alpha:>5}: {h:.6} bits (≈ {:.1} equal participants)", h.exp2());
    }
    println!("-log2(hhi) = {:.6}", -hhi(&d).value.log2());
    println!("log2(1/p_max) = {:.6}", -d.entries()[0].proportion.log2());
    Ok(())
}
