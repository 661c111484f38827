use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_decentrality"));
    cmd.env("RUST_LOG", "off");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path) -> PathBuf {
    let out = run(&[
        "fixture",
        "--kind",
        "uniform",
        "--n",
        "4",
        "--days",
        "3",
        "--seed",
        "1",
        "--output-dir",
        path_str(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("uniform.csv")
}

#[test]
fn compute_writes_series_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fixture(&tmp.path().join("fx"));
    let out_dir = tmp.path().join("out");
    let input = format!("consensus:{}", csv.display());
    let out = run(&[
        "compute",
        "--input",
        &input,
        "--ecosystem",
        "demo",
        "--alpha",
        "0.5,2",
        "--output-dir",
        path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let shannon = std::fs::read_to_string(out_dir.join("demo.consensus.shannon.csv")).unwrap();
    assert_eq!(
        shannon,
        "window_start,value\n2023-01-01,2\n2023-01-02,2\n2023-01-03,2\n"
    );
    assert!(out_dir.join("demo.consensus.renyi_0.5.csv").exists());
    assert!(out_dir.join("demo.consensus.renyi_2.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["totals"]["rows_in"], 12);
    assert_eq!(report["series"].as_array().unwrap().len(), 7);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(&tmp.path().join("fx"));
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "input = [\"consensus:fx/uniform.csv\"]\necosystem = \"demo\"\nmetrics = [\"hhi\"]\noutput_dir = \"out\"\n",
    )
    .unwrap();
    let out = run(&["compute", "--config", path_str(&cfg), "--metrics", "nakamoto,hhi"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hhi = std::fs::read_to_string(tmp.path().join("out/demo.consensus.hhi.csv")).unwrap();
    assert!(hhi.ends_with("2023-01-03,0.25\n"), "{hhi}");
    let nak = std::fs::read_to_string(tmp.path().join("out/demo.consensus.nakamoto.csv")).unwrap();
    assert!(nak.ends_with("2023-01-03,3\n"), "{nak}");
    assert!(!tmp.path().join("out/demo.consensus.shannon.csv").exists());
}

#[test]
fn ingest_check_reports_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("commits.csv");
    std::fs::write(
        &csv,
        "month,developer,commits\n2023-01,alice,3\n2023-01,bob,x\n2023-02,alice,0\n",
    )
    .unwrap();
    let input = format!("development:{}", csv.display());
    let out = run(&["ingest-check", "--input", &input]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let file = &v["files"][0];
    assert_eq!(file["rows_in"], 3);
    assert_eq!(file["rows_skipped"], 1);
    assert_eq!(file["zero_weight_rows"], 1);
    assert_eq!(v["records_aggregated"], 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = format!("consensus:{}", tmp.path().join("nope.csv").display());
    assert_eq!(run(&["ingest-check", "--input", &missing]).status.code(), Some(1));

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let empty_in = format!("consensus:{}", empty.display());
    assert_eq!(run(&["ingest-check", "--input", &empty_in]).status.code(), Some(1));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "month,developer\n2023-01,alice\n").unwrap();
    let bad_in = format!("development:{}", bad.display());
    assert_eq!(run(&["ingest-check", "--input", &bad_in]).status.code(), Some(1));

    let csv = fixture(&tmp.path().join("fx"));
    let good = format!("consensus:{}", csv.display());
    let out_dir = tmp.path().join("out");
    let config_errors: [&[&str]; 5] = [
        &[
            "compute",
            "--input",
            &good,
            "--threshold",
            "2",
            "--output-dir",
            path_str(&out_dir),
        ],
        &[
            "compute",
            "--input",
            &good,
            "--alpha",
            "-1",
            "--output-dir",
            path_str(&out_dir),
        ],
        &[
            "compute",
            "--input",
            &good,
            "--metrics",
            "theil",
            "--output-dir",
            path_str(&out_dir),
        ],
        &["compute", "--input", &good],
        &["compute", "--input", "mining:x.csv", "--output-dir", path_str(&out_dir)],
    ];
    for args in config_errors {
        assert_eq!(run(args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(
        run(&[
            "fixture",
            "--kind",
            "uniform",
            "--n",
            "0",
            "--seed",
            "1",
            "--output-dir",
            path_str(&out_dir)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn builder_paid_blocks_use_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("builders.txt");
    std::fs::write(&labels, "# known builders\n0xbuilder\n").unwrap();
    let blocks = tmp.path().join("eth.csv");
    std::fs::write(
        &blocks,
        "timestamp,block_id,fee_recipient,transfer_to,transfer_amount\n\
         2023-05-01 00:00:00,1,0xbuilder,0xval1,0.1\n\
         2023-05-01 00:00:12,2,0xval2,,\n\
         2023-05-01 00:00:24,3,0xbuilder,0xval1,0.2\n\
         2023-05-01 00:00:36,4,0xbuilder,,\n",
    )
    .unwrap();
    let input = format!("consensus:{}", blocks.display());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "compute",
        "--input",
        &input,
        "--ecosystem",
        "ethereum",
        "--labels",
        path_str(&labels),
        "--metrics",
        "node_count",
        "--output-dir",
        path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // val1 twice, val2 once, the builder keeping block 4 is its own proposer
    let nodes = std::fs::read_to_string(out_dir.join("ethereum.consensus.node_count.csv")).unwrap();
    assert_eq!(nodes, "window_start,value\n2023-05-01,3\n");
}

#[test]
fn knockout_and_correlate() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let out = run(&[
        "fixture",
        "--kind",
        "stepwise",
        "--start-n",
        "2",
        "--step",
        "3",
        "--days-per-step",
        "1",
        "--days",
        "6",
        "--seed",
        "4",
        "--output-dir",
        path_str(&fx),
    ]);
    assert!(out.status.success());
    let input = format!("consensus:{}", fx.join("stepwise.csv").display());
    let out_dir = tmp.path().join("out");

    let out = run(&[
        "knockout",
        "--input",
        &input,
        "--ecosystem",
        "demo",
        "--output-dir",
        path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ko = std::fs::read_to_string(out_dir.join("demo.consensus.knockout.csv")).unwrap();
    assert_eq!(ko.lines().count(), 7);
    assert!(out_dir.join("knockout.json").exists());

    let out = run(&[
        "correlate",
        "--input",
        &input,
        "--ecosystem",
        "demo",
        "--output-dir",
        path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let outcome = &v[0]["outcome"];
    assert_eq!(outcome["status"], "defined");
    assert!(outcome["r"].as_f64().unwrap() > 0.9);

    let out = run(&[
        "compute",
        "--input",
        &input,
        "--ecosystem",
        "demo",
        "--output-dir",
        path_str(&out_dir),
    ]);
    assert!(out.status.success());
    let a = out_dir.join("demo.consensus.shannon.csv");
    let b = out_dir.join("demo.consensus.node_count.csv");
    let out = run(&["correlate", "--series-a", path_str(&a), "--series-b", path_str(&b)]);
    assert!(out.status.success());
    let direct: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(direct["n"], 6);
    // exported values carry 12 significant digits
    let gap = direct["r"].as_f64().unwrap() - outcome["r"].as_f64().unwrap();
    assert!(gap.abs() < 1e-9, "{gap}");
}
