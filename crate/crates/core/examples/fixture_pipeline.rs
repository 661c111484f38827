//! Generate a seeded fixture, run the file pipeline on it and check the
//! exported series against the fixture's declared truth.

use decentrality::config::RunConfig;
use decentrality::fixture::{write_fixture, FixtureKind, FixtureSpec};
use decentrality::format::fmt_value;
use decentrality::run_pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let spec = FixtureSpec::new(
        FixtureKind::Zipf {
            s: 1.1,
            n: 500,
            blocks_per_day: 7200,
        },
        7,
        2024,
    );
    let files = write_fixture(&spec, &dir.path().join("fixture"))?;
    println!("{} rows in {}", files.ground_truth.rows, files.csv.display());

    let cfg = RunConfig {
        inputs: vec![format!("consensus:{}", files.csv.display()).parse()?],
        ecosystem: "synthetic".into(),
        output_dir: Some(dir.path().join("out")),
        ..RunConfig::default()
    };
    let report = run_pipeline(&cfg)?;
    println!("{} series, {} rows used", report.series.len(), report.totals.rows_used);

    let exported = std::fs::read_to_string(dir.path().join("out/synthetic.consensus.gini.csv"))?;
    for (line, truth) in exported.lines().skip(1).zip(&files.ground_truth.windows) {
        let expected = format!("{},{}", truth.window_start, fmt_value(truth.gini));
        println!("{line}  {}", if line == expected { "matches" } else { "DIFFERS" });
    }
    Ok(())
}
