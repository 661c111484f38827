//! Seeded synthetic consensus fixtures with declared ground truth.
//!
//! Each fixture is a `timestamp,block_id,producer` CSV that is valid under the
//! consensus schema, and a JSON file listing the metric values every daily
//! window must reproduce after ingestion and aggregation.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, DEFAULT_NAKAMOTO_THRESHOLD};
use crate::model::{normalize, EntityId, Granularity, SubsystemKind, TimeWindow};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture parameters: {0}")]
    InvalidParams(String),
    #[error("cannot write fixture {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureKind {
    /// `n` producers, `per_entity` blocks each per day.
    Uniform { n: usize, per_entity: u32 },
    /// `blocks_per_day` blocks drawn from a Zipf(s) law over `n` producers.
    Zipf { s: f64, n: usize, blocks_per_day: u32 },
    /// Fixed shares; `share * blocks_per_day` must be integral.
    Duopoly { shares: Vec<f64>, blocks_per_day: u32 },
    /// Uniform over `start_n + step * (day / days_per_step)` producers.
    Stepwise {
        start_n: usize,
        step: usize,
        days_per_step: u32,
        per_entity: u32,
    },
}

impl FixtureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FixtureKind::Uniform { .. } => "uniform",
            FixtureKind::Zipf { .. } => "zipf",
            FixtureKind::Duopoly { .. } => "duopoly",
            FixtureKind::Stepwise { .. } => "stepwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub days: u32,
    pub start: NaiveDate,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn new(kind: FixtureKind, days: u32, seed: u64) -> Self {
        FixtureSpec {
            kind,
            days,
            start: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            seed,
        }
    }

    fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: &str| Err(FixtureError::InvalidParams(m.to_string()));
        if self.days == 0 {
            return bad("days must be positive");
        }
        match &self.kind {
            FixtureKind::Uniform { n, per_entity } => {
                if *n == 0 || *per_entity == 0 {
                    return bad("uniform needs n > 0 and per_entity > 0");
                }
            }
            FixtureKind::Zipf { s, n, blocks_per_day } => {
                if !s.is_finite() || *s < 0.0 || *n == 0 || *blocks_per_day == 0 {
                    return bad("zipf needs s >= 0, n > 0 and blocks_per_day > 0");
                }
            }
            FixtureKind::Duopoly { shares, blocks_per_day } => {
                if shares.is_empty() || *blocks_per_day == 0 {
                    return bad("duopoly needs shares and blocks_per_day > 0");
                }
                if shares.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("shares must be positive");
                }
                if (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("shares must sum to 1");
                }
                for s in shares {
                    let c = s * *blocks_per_day as f64;
                    if (c - c.round()).abs() > 1e-6 {
                        return bad("share * blocks_per_day must be a whole number of blocks");
                    }
                }
            }
            FixtureKind::Stepwise {
                start_n,
                days_per_step,
                per_entity,
                ..
            } => {
                if *start_n == 0 || *days_per_step == 0 || *per_entity == 0 {
                    return bad("stepwise needs start_n, days_per_step and per_entity > 0");
                }
            }
        }
        Ok(())
    }
}

/// Expected metrics of one daily window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWindow {
    pub window_start: String,
    pub shannon: f64,
    pub gini: f64,
    pub hhi: f64,
    pub nakamoto: f64,
    pub node_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: FixtureSpec,
    pub rows: u64,
    pub threshold: f64,
    pub windows: Vec<TruthWindow>,
}

fn entity_name(rank: usize) -> String {
    format!("validator-{rank:05}")
}

/// Block counts per producer for one day.
fn day_counts(kind: &FixtureKind, day: u32, rng: &mut ChaCha8Rng, zipf: Option<&WeightedIndex<f64>>) -> Vec<u32> {
    match kind {
        FixtureKind::Uniform { n, per_entity } => vec![*per_entity; *n],
        FixtureKind::Zipf { n, blocks_per_day, .. } => {
            let dist = zipf.expect("zipf weights prepared");
            let mut counts = vec![0u32; *n];
            for _ in 0..*blocks_per_day {
                counts[dist.sample(rng)] += 1;
            }
            counts
        }
        FixtureKind::Duopoly { shares, blocks_per_day } => shares
            .iter()
            .map(|s| (s * *blocks_per_day as f64).round() as u32)
            .collect(),
        FixtureKind::Stepwise {
            start_n,
            step,
            days_per_step,
            per_entity,
        } => vec![*per_entity; start_n + step * (day / days_per_step) as usize],
    }
}

/// Writes the fixture CSV to `out` and returns its ground truth.
pub fn generate<W: Write>(spec: &FixtureSpec, mut out: W) -> Result<GroundTruth, FixtureError> {
    spec.validate()?;
    let io_err = |source| FixtureError::Io {
        path: PathBuf::from("<writer>"),
        source,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = match &spec.kind {
        FixtureKind::Zipf { s, n, .. } => {
            let weights: Vec<f64> = (1..=*n).map(|r| 1.0 / (r as f64).powf(*s)).collect();
            Some(WeightedIndex::new(weights).map_err(|e| FixtureError::InvalidParams(e.to_string()))?)
        }
        _ => None,
    };
    writeln!(out, "timestamp,block_id,producer").map_err(io_err)?;
    let mut windows = Vec::with_capacity(spec.days as usize);
    let mut rows = 0u64;
    for day in 0..spec.days {
        let date = spec.start + Duration::days(day as i64);
        let counts = day_counts(&spec.kind, day, &mut rng, zipf.as_ref());

        let mut blocks: Vec<(u32, usize)> = Vec::new();
        for (rank, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                blocks.push((rng.gen_range(0..86_400), rank));
            }
        }
        blocks.shuffle(&mut rng);
        blocks.sort_by_key(|b| b.0);
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
        for (i, (secs, rank)) in blocks.iter().enumerate() {
            let ts = midnight + Duration::seconds(*secs as i64);
            writeln!(
                out,
                "{},{}-{:06},{}",
                ts.format("%Y-%m-%d %H:%M:%S"),
                date.format("%Y%m%d"),
                i,
                entity_name(*rank)
            )
            .map_err(io_err)?;
        }
        rows += blocks.len() as u64;

        let window = TimeWindow::starting_at(date, Granularity::Daily);
        let raw: BTreeMap<String, u32> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(r, &c)| (entity_name(r), c))
            .collect();
        let d = normalize(
            raw.into_iter()
                .map(|(e, c)| (EntityId::new(e).expect("non-empty"), c as f64)),
            window,
            SubsystemKind::Consensus,
        )
        .map_err(|e| FixtureError::InvalidParams(e.to_string()))?;
        windows.push(TruthWindow {
            window_start: window.label(),
            shannon: metrics::shannon_entropy(&d).value,
            gini: metrics::gini(&d).value,
            hhi: metrics::hhi(&d).value,
            nakamoto: metrics::nakamoto(&d, DEFAULT_NAKAMOTO_THRESHOLD)
                .expect("default threshold is valid")
                .coefficient as f64,
            node_count: metrics::node_count(&d).value,
        });
    }
    out.flush().map_err(io_err)?;
    Ok(GroundTruth {
        spec: spec.clone(),
        rows,
        threshold: DEFAULT_NAKAMOTO_THRESHOLD,
        windows,
    })
}

pub struct FixtureFiles {
    pub csv: PathBuf,
    pub truth: PathBuf,
    pub ground_truth: GroundTruth,
}

/// Writes `<kind>.csv` and `<kind>.truth.json` into `dir`.
pub fn write_fixture(spec: &FixtureSpec, dir: &Path) -> Result<FixtureFiles, FixtureError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FixtureError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = dir.join(format!("{}.csv", spec.kind.name()));
    let truth = dir.join(format!("{}.truth.json", spec.kind.name()));
    let file = std::fs::File::create(&csv).map_err(io_err(&csv))?;
    let ground_truth = generate(spec, io::BufWriter::new(file))?;
    let json = serde_json::to_string_pretty(&ground_truth).expect("ground truth serializes");
    std::fs::write(&truth, json + "\n").map_err(io_err(&truth))?;
    Ok(FixtureFiles {
        csv,
        truth,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(spec: &FixtureSpec) -> (Vec<u8>, GroundTruth) {
        let mut buf = Vec::new();
        let truth = generate(spec, &mut buf).unwrap();
        (buf, truth)
    }

    #[test]
    fn uniform_truth() {
        let (csv, truth) = bytes(&FixtureSpec::new(FixtureKind::Uniform { n: 4, per_entity: 3 }, 2, 7));
        assert_eq!(truth.windows.len(), 2);
        assert!(truth
            .windows
            .iter()
            .all(|w| w.shannon == 2.0 && w.gini == 0.0 && w.nakamoto == 3.0));
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 24);
    }

    #[test]
    fn duopoly_truth() {
        let spec = FixtureSpec::new(
            FixtureKind::Duopoly {
                shares: vec![0.65, 0.35],
                blocks_per_day: 100,
            },
            3,
            1,
        );
        let (_, truth) = bytes(&spec);
        assert!(truth.windows.iter().all(|w| (w.gini - 0.15).abs() < 1e-12));
    }

    #[test]
    fn stepwise_grows() {
        let spec = FixtureSpec::new(
            FixtureKind::Stepwise {
                start_n: 2,
                step: 2,
                days_per_step: 2,
                per_entity: 1,
            },
            6,
            3,
        );
        let (_, truth) = bytes(&spec);
        let h: Vec<f64> = truth.windows.iter().map(|w| w.shannon).collect();
        assert_eq!(h[0], 1.0);
        assert_eq!(h[2], 2.0);
        assert!((h[4] - 6f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn zipf_is_deterministic() {
        let spec = FixtureSpec::new(
            FixtureKind::Zipf {
                s: 1.0,
                n: 100,
                blocks_per_day: 500,
            },
            2,
            1,
        );
        assert_eq!(bytes(&spec).0, bytes(&spec).0);
        let other = FixtureSpec {
            seed: 2,
            ..spec.clone()
        };
        assert_ne!(bytes(&spec).0, bytes(&other).0);
    }

    #[test]
    fn invalid_params() {
        let bad = FixtureSpec::new(
            FixtureKind::Duopoly {
                shares: vec![0.655, 0.345],
                blocks_per_day: 100,
            },
            1,
            0,
        );
        assert!(matches!(
            generate(&bad, Vec::new()),
            Err(FixtureError::InvalidParams(_))
        ));
        let bad = FixtureSpec::new(FixtureKind::Uniform { n: 0, per_entity: 1 }, 1, 0);
        assert!(matches!(
            generate(&bad, Vec::new()),
            Err(FixtureError::InvalidParams(_))
        ));
    }
}
