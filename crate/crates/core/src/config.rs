//! Run configuration: a flat TOML key-value file and/or explicit overrides.
//!
//! ```toml
//! input = ["consensus:data/bitcoin_blocks.csv", "development:data/commits"]
//! ecosystem = "bitcoin"
//! metrics = ["shannon", "nakamoto", "hhi"]
//! alphas = [0.5, 2.0]
//! threshold = 0.51
//! output_dir = "out"
//! labels = "labels/mev_builders.txt"
//! granularity = "monthly"   # optional, widens daily subsystems
//! ```
//!
//! Relative paths in a config file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{MetricFamily, PanelParams};
use crate::metrics::DEFAULT_NAKAMOTO_THRESHOLD;
use crate::model::{Granularity, SubsystemKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid input `{0}`: expected <subsystem>:<path>")]
    BadInput(String),
    #[error("no inputs given")]
    NoInputs,
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("alpha {0} must be finite and non-negative")]
    Alpha(f64),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("no metrics requested")]
    NoMetrics,
    #[error("unknown granularity `{0}`")]
    Granularity(String),
    #[error("{0} is required")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputSpec {
    pub schema: SubsystemKind,
    pub path: PathBuf,
}

impl FromStr for InputSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, path) = s.split_once(':').ok_or_else(|| ConfigError::BadInput(s.to_string()))?;
        let schema = kind.parse().map_err(|_| ConfigError::BadInput(s.to_string()))?;
        if path.trim().is_empty() {
            return Err(ConfigError::BadInput(s.to_string()));
        }
        Ok(InputSpec {
            schema,
            path: PathBuf::from(path.trim()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    pub ecosystem: String,
    pub metrics: Vec<MetricFamily>,
    pub alphas: Vec<f64>,
    pub threshold: f64,
    pub output_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub granularity: Option<Granularity>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            ecosystem: "unknown".into(),
            metrics: MetricFamily::ALL.to_vec(),
            alphas: vec![2.0],
            threshold: DEFAULT_NAKAMOTO_THRESHOLD,
            output_dir: None,
            labels: None,
            granularity: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    input: Option<OneOrMany>,
    ecosystem: Option<String>,
    metrics: Option<OneOrMany>,
    alphas: Option<Vec<f64>>,
    threshold: Option<f64>,
    output_dir: Option<PathBuf>,
    labels: Option<PathBuf>,
    granularity: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => s
                .split(',')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect(),
            OneOrMany::Many(v) => v,
        }
    }
}

/// Command-line values; each `Some` or non-empty field replaces the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub inputs: Vec<String>,
    pub ecosystem: Option<String>,
    pub metrics: Vec<String>,
    pub alphas: Vec<f64>,
    pub threshold: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub granularity: Option<String>,
}

pub fn parse_metrics<S: AsRef<str>>(names: &[S]) -> Result<Vec<MetricFamily>, ConfigError> {
    names
        .iter()
        .flat_map(|n| n.as_ref().split(','))
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| MetricFamily::parse(n).ok_or_else(|| ConfigError::UnknownMetric(n.to_string())))
        .collect()
}

impl RunConfig {
    /// Loads `config` (if any), applies `overrides`, and validates.
    pub fn resolve(config: Option<&Path>, overrides: Overrides) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            let file: ConfigFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let base = path.parent().unwrap_or(Path::new(""));
            let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
            if let Some(inputs) = file.input {
                cfg.inputs = inputs
                    .into_vec()
                    .iter()
                    .map(|s| {
                        s.parse::<InputSpec>().map(|mut i| {
                            i.path = rebase(i.path);
                            i
                        })
                    })
                    .collect::<Result<_, _>>()?;
            }
            if let Some(e) = file.ecosystem {
                cfg.ecosystem = e;
            }
            if let Some(m) = file.metrics {
                cfg.metrics = parse_metrics(&m.into_vec())?;
            }
            if let Some(a) = file.alphas {
                cfg.alphas = a;
            }
            if let Some(t) = file.threshold {
                cfg.threshold = t;
            }
            cfg.output_dir = file.output_dir.map(rebase);
            cfg.labels = file.labels.map(rebase);
            if let Some(g) = file.granularity {
                cfg.granularity = Some(g.parse().map_err(|_| ConfigError::Granularity(g))?);
            }
        }
        if !overrides.inputs.is_empty() {
            cfg.inputs = overrides.inputs.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(e) = overrides.ecosystem {
            cfg.ecosystem = e;
        }
        if !overrides.metrics.is_empty() {
            cfg.metrics = parse_metrics(&overrides.metrics)?;
        }
        if !overrides.alphas.is_empty() {
            cfg.alphas = overrides.alphas;
        }
        if let Some(t) = overrides.threshold {
            cfg.threshold = t;
        }
        if overrides.output_dir.is_some() {
            cfg.output_dir = overrides.output_dir;
        }
        if overrides.labels.is_some() {
            cfg.labels = overrides.labels;
        }
        if let Some(g) = overrides.granularity {
            cfg.granularity = Some(g.parse().map_err(|_| ConfigError::Granularity(g))?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.inputs.is_empty() {
            return Err(ConfigError::NoInputs);
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ConfigError::Threshold(self.threshold));
        }
        if let Some(&a) = self.alphas.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(ConfigError::Alpha(a));
        }
        if self.metrics.is_empty() {
            return Err(ConfigError::NoMetrics);
        }
        Ok(())
    }

    pub fn panel_params(&self) -> PanelParams {
        PanelParams {
            alphas: self.alphas.clone(),
            threshold: self.threshold,
        }
    }

    pub fn output_dir(&self) -> Result<&Path, ConfigError> {
        self.output_dir.as_deref().ok_or(ConfigError::Missing("output_dir"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(
            f,
            "input = [\"consensus:blocks.csv\"]\necosystem = \"bitcoin\"\nmetrics = \"shannon, hhi\"\nalphas = [0.5]\nthreshold = 0.6\noutput_dir = \"out\""
        )
        .unwrap();
        let cfg = RunConfig::resolve(Some(&path), Overrides::default()).unwrap();
        assert_eq!(cfg.inputs[0].path, dir.path().join("blocks.csv"));
        assert_eq!(cfg.metrics, vec![MetricFamily::Shannon, MetricFamily::Hhi]);
        assert_eq!(cfg.threshold, 0.6);
        assert_eq!(cfg.output_dir.as_deref(), Some(dir.path().join("out").as_path()));

        let cfg = RunConfig::resolve(
            Some(&path),
            Overrides {
                threshold: Some(0.51),
                ecosystem: Some("eth".into()),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.threshold, 0.51);
        assert_eq!(cfg.ecosystem, "eth");
    }

    #[test]
    fn rejects_bad_values() {
        let base = || Overrides {
            inputs: vec!["consensus:x.csv".into()],
            ..Overrides::default()
        };
        assert!(matches!(
            RunConfig::resolve(None, Overrides::default()),
            Err(ConfigError::NoInputs)
        ));
        assert!(matches!(
            RunConfig::resolve(
                None,
                Overrides {
                    threshold: Some(1.0),
                    ..base()
                }
            ),
            Err(ConfigError::Threshold(_))
        ));
        assert!(matches!(
            RunConfig::resolve(
                None,
                Overrides {
                    alphas: vec![-1.0],
                    ..base()
                }
            ),
            Err(ConfigError::Alpha(_))
        ));
        assert!(matches!(
            RunConfig::resolve(
                None,
                Overrides {
                    metrics: vec!["theil".into()],
                    ..base()
                }
            ),
            Err(ConfigError::UnknownMetric(_))
        ));
        assert!(matches!(
            "blocks.csv".parse::<InputSpec>(),
            Err(ConfigError::BadInput(_))
        ));
        assert!(matches!(
            "mining:blocks.csv".parse::<InputSpec>(),
            Err(ConfigError::BadInput(_))
        ));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "inputs = [\"consensus:x\"]\n").unwrap();
        assert!(matches!(
            RunConfig::resolve(Some(&path), Overrides::default()),
            Err(ConfigError::Parse { .. })
        ));
    }
}
