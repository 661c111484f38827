//! End-to-end runs: ingest files, aggregate, compute panels, write outputs.
//!
//! Output layout under the run's output directory:
//!
//! * `<ecosystem>.<subsystem>.<metric>.csv` with columns `window_start,value`,
//!   values formatted as `%.12g`;
//! * `report.json` with per-file row accounting, parameters and gap windows;
//! * `<ecosystem>.<subsystem>.knockout.csv` and `knockout.json` for knockout runs;
//! * `correlation.json` for entropy / node-count correlation runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::aggregation::{
    build_panel, AggregationError, GapReason, MetricSeries, SubsystemDescriptor, WindowAggregator,
};
use crate::analysis::{self, AnalysisError, CorrelationOutcome, KnockoutResult};
use crate::attribution::BuilderLabels;
use crate::config::{ConfigError, InputSpec, RunConfig};
use crate::format::fmt_value;
use crate::ingest::{self, FileReport, IngestError, IngestOptions};
use crate::metrics::MetricKind;
use crate::model::{ContributionDistribution, SubsystemKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot read labels file {path}: {source}")]
    Labels {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl PipelineError {
    /// 1 for input problems, 2 for configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Aggregation(_) => 2,
            PipelineError::Ingest(_)
            | PipelineError::Labels { .. }
            | PipelineError::Output { .. }
            | PipelineError::Analysis(_) => 1,
        }
    }
}

/// Expands directory inputs into their files, sorted by name.
pub fn expand_inputs(inputs: &[InputSpec]) -> Result<Vec<InputSpec>, IngestError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&input.path)
                .map_err(|source| IngestError::Io {
                    path: input.path.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && !p.file_name().is_none_or(|n| n.to_string_lossy().starts_with('.')))
                .collect();
            if files.is_empty() {
                return Err(IngestError::EmptyFile(input.path.clone()));
            }
            files.sort();
            out.extend(files.into_iter().map(|path| InputSpec {
                schema: input.schema,
                path,
            }));
        } else if input.path.exists() {
            out.push(input.clone());
        } else {
            return Err(IngestError::FileNotFound(input.path.clone()));
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path).then(a.schema.cmp(&b.schema)));
    out.dedup();
    Ok(out)
}

pub fn descriptor_for(
    ecosystem: &str,
    subsystem: SubsystemKind,
    cfg: &RunConfig,
) -> Result<SubsystemDescriptor, AggregationError> {
    let d = SubsystemDescriptor::new(ecosystem, subsystem);
    match cfg.granularity {
        Some(g) if g != d.granularity => d.with_granularity(g),
        _ => Ok(d),
    }
}

/// Ingested and aggregated data, before any metric is computed.
#[derive(Debug)]
pub struct LoadedData {
    pub files: Vec<FileReport>,
    pub distributions: BTreeMap<SubsystemDescriptor, Vec<ContributionDistribution>>,
    pub records: u64,
    pub zero_weight_records: u64,
}

pub fn load(cfg: &RunConfig) -> Result<LoadedData, PipelineError> {
    cfg.validate()?;
    for schema in cfg.inputs.iter().map(|i| i.schema) {
        descriptor_for(&cfg.ecosystem, schema, cfg)?;
    }
    let labels = match &cfg.labels {
        Some(path) => BuilderLabels::from_path(path).map_err(|source| PipelineError::Labels {
            path: path.clone(),
            source,
        })?,
        None => BuilderLabels::default(),
    };
    let opts = IngestOptions {
        default_ecosystem: cfg.ecosystem.clone(),
        labels: Arc::new(labels),
    };
    let inputs = expand_inputs(&cfg.inputs)?;

    type Shard = (FileReport, BTreeMap<SubsystemDescriptor, WindowAggregator>);
    let ingest_one = |input: &InputSpec| -> Result<Shard, PipelineError> {
        let mut aggs: BTreeMap<SubsystemDescriptor, WindowAggregator> = BTreeMap::new();
        let mut last: Option<(Arc<str>, SubsystemDescriptor)> = None;
        let report = ingest::ingest_with(&input.path, input.schema, &opts, |tagged| {
            let desc = match &last {
                Some((eco, d)) if Arc::ptr_eq(eco, &tagged.ecosystem) => d.clone(),
                _ => {
                    let d = descriptor_for(&tagged.ecosystem, input.schema, cfg)
                        .expect("granularity checked before ingest");
                    last = Some((tagged.ecosystem.clone(), d.clone()));
                    d
                }
            };
            aggs.entry(desc.clone())
                .or_insert_with(|| WindowAggregator::new(desc))
                .push(&tagged.record);
        })?;
        Ok((report, aggs))
    };

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(inputs.len().max(1));
    let shards: Vec<Result<Shard, PipelineError>> = if workers <= 1 {
        inputs.iter().map(ingest_one).collect()
    } else {
        let chunk = inputs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(ingest_one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("ingest worker panicked"))
                .collect()
        })
    };

    let mut files = Vec::new();
    let mut merged: BTreeMap<SubsystemDescriptor, WindowAggregator> = BTreeMap::new();
    for shard in shards {
        let (report, aggs) = shard?;
        files.push(report);
        for (desc, agg) in aggs {
            match merged.get_mut(&desc) {
                Some(existing) => existing.merge(agg),
                None => {
                    merged.insert(desc, agg);
                }
            }
        }
    }
    let mut records = 0;
    let mut zero_weight_records = 0;
    let distributions = merged
        .into_iter()
        .map(|(desc, agg)| {
            records += agg.accepted();
            zero_weight_records += agg.ignored_zero_weight();
            (desc, agg.finish())
        })
        .collect();
    Ok(LoadedData {
        files,
        distributions,
        records,
        zero_weight_records,
    })
}

pub struct Panel {
    pub descriptor: SubsystemDescriptor,
    pub distributions: Vec<ContributionDistribution>,
    pub series: Vec<MetricSeries>,
}

pub fn compute_panels(cfg: &RunConfig) -> Result<(LoadedData, Vec<Panel>), PipelineError> {
    let mut data = load(cfg)?;
    let params = cfg.panel_params();
    let dists = std::mem::take(&mut data.distributions);
    let panels = dists
        .into_iter()
        .map(|(descriptor, distributions)| {
            let series = build_panel(&descriptor, &distributions, &cfg.metrics, &params);
            Panel {
                descriptor,
                distributions,
                series,
            }
        })
        .collect();
    Ok((data, panels))
}

fn file_stem(desc: &SubsystemDescriptor) -> String {
    let eco: String = desc
        .ecosystem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{eco}.{}", desc.subsystem)
}

pub fn series_file_name(series: &MetricSeries) -> String {
    format!("{}.{}.csv", file_stem(&series.descriptor), series.metric.name())
}

pub fn write_series_csv<W: Write>(series: &MetricSeries, mut out: W) -> io::Result<()> {
    writeln!(out, "window_start,value")?;
    for (window, value) in &series.points {
        writeln!(out, "{},{}", window.label(), fmt_value(*value))?;
    }
    out.flush()
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), PipelineError> {
    let err = |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(err)?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        writeln!(w)
    })
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEntry {
    pub window_start: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesSummary {
    pub ecosystem: String,
    pub subsystem: SubsystemKind,
    pub granularity: String,
    pub metric: String,
    pub file: String,
    pub points: usize,
    pub gaps: Vec<GapEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Totals {
    pub rows_in: u64,
    pub rows_used: u64,
    pub rows_skipped: u64,
    pub records_aggregated: u64,
    pub zero_weight_records: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunParams {
    pub ecosystem: String,
    pub metrics: Vec<String>,
    pub alphas: Vec<f64>,
    pub threshold: f64,
    pub granularity: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub params: RunParams,
    pub totals: Totals,
    pub files: Vec<FileReport>,
    pub series: Vec<SeriesSummary>,
}

fn run_params(cfg: &RunConfig) -> RunParams {
    let mut metrics: Vec<String> = cfg
        .metrics
        .iter()
        .flat_map(|f| f.kinds(&cfg.panel_params()))
        .map(|k| k.name())
        .collect();
    metrics.dedup();
    RunParams {
        ecosystem: cfg.ecosystem.clone(),
        metrics,
        alphas: cfg.alphas.clone(),
        threshold: cfg.threshold,
        granularity: cfg.granularity.map(|g| g.to_string()),
    }
}

fn totals(data: &LoadedData) -> Totals {
    Totals {
        rows_in: data.files.iter().map(|f| f.rows_in).sum(),
        rows_used: data.files.iter().map(|f| f.rows_used).sum(),
        rows_skipped: data.files.iter().map(|f| f.rows_skipped).sum(),
        records_aggregated: data.records,
        zero_weight_records: data.zero_weight_records,
    }
}

/// Ingests, aggregates, writes one CSV per (ecosystem, subsystem, metric)
/// plus `report.json`. Identical inputs give byte-identical outputs.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let out_dir = cfg.output_dir()?.to_path_buf();
    let (data, panels) = compute_panels(cfg)?;
    ensure_dir(&out_dir)?;
    let mut series = Vec::new();
    for panel in &panels {
        for s in &panel.series {
            let name = series_file_name(s);
            write_file(&out_dir.join(&name), |w| write_series_csv(s, w))?;
            series.push(SeriesSummary {
                ecosystem: s.descriptor.ecosystem.clone(),
                subsystem: s.descriptor.subsystem,
                granularity: s.descriptor.granularity.to_string(),
                metric: s.metric.name(),
                file: name,
                points: s.points.len(),
                gaps: s
                    .gaps
                    .iter()
                    .map(|g| GapEntry {
                        window_start: g.window.label(),
                        reason: match &g.reason {
                            GapReason::NoData => "no_data".into(),
                            GapReason::Invalid(r) => r.clone(),
                        },
                    })
                    .collect(),
            });
        }
    }
    let report = RunReport {
        params: run_params(cfg),
        totals: totals(&data),
        files: data.files,
        series,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct KnockoutSummary {
    pub ecosystem: String,
    pub subsystem: SubsystemKind,
    pub file: String,
    pub windows: usize,
    pub undefined_windows: usize,
    pub entropy: Option<CorrelationOutcome>,
    pub nakamoto: Option<CorrelationOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn write_knockout_csv<W: Write>(results: &[KnockoutResult], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "window_start,removed,pre_entropy,post_entropy,pre_nakamoto,post_nakamoto,pre_hhi,post_hhi,pre_node_count,post_node_count"
    )?;
    for r in results {
        let (pe, pn, ph, pc) = match &r.post {
            Some(p) => (
                fmt_value(p.entropy),
                p.nakamoto.to_string(),
                fmt_value(p.hhi),
                p.node_count.to_string(),
            ),
            None => Default::default(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.window.label(),
            r.removed.coefficient,
            fmt_value(r.pre.entropy),
            pe,
            r.pre.nakamoto,
            pn,
            fmt_value(r.pre.hhi),
            ph,
            r.pre.node_count,
            pc
        )?;
    }
    out.flush()
}

/// Knockout simulation per window for every (ecosystem, subsystem) present.
pub fn run_knockout(cfg: &RunConfig) -> Result<Vec<KnockoutSummary>, PipelineError> {
    let data = load(cfg)?;
    let out_dir = cfg.output_dir.clone();
    if let Some(dir) = &out_dir {
        ensure_dir(dir)?;
    }
    let mut summaries = Vec::new();
    for (desc, dists) in &data.distributions {
        let results = dists
            .iter()
            .map(|d| analysis::knockout(d, cfg.threshold))
            .collect::<Result<Vec<_>, _>>()
            .map_err(AnalysisError::from)?;
        let file = format!("{}.knockout.csv", file_stem(desc));
        if let Some(dir) = &out_dir {
            write_file(&dir.join(&file), |w| write_knockout_csv(&results, w))?;
        }
        let undefined = results.iter().filter(|r| r.post.is_none()).count();
        let (entropy, nakamoto, note) = match analysis::knockout_series(dists, cfg.threshold) {
            Ok(s) => (Some(s.entropy), Some(s.nakamoto), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        summaries.push(KnockoutSummary {
            ecosystem: desc.ecosystem.clone(),
            subsystem: desc.subsystem,
            file,
            windows: results.len(),
            undefined_windows: undefined,
            entropy,
            nakamoto,
            note,
        });
    }
    if let Some(dir) = &out_dir {
        write_json(&dir.join("knockout.json"), &summaries)?;
    }
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSummary {
    pub ecosystem: String,
    pub subsystem: SubsystemKind,
    pub outcome: Option<CorrelationOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Correlates per-window entropy with per-window node count.
pub fn run_correlation(cfg: &RunConfig) -> Result<Vec<CorrelationSummary>, PipelineError> {
    let data = load(cfg)?;
    let mut out = Vec::new();
    for (desc, dists) in &data.distributions {
        let entropy: Vec<_> = dists
            .iter()
            .map(|d| (*d.window(), crate::metrics::shannon_entropy(d).value))
            .collect();
        let nodes: Vec<_> = dists.iter().map(|d| (*d.window(), d.len() as f64)).collect();
        let result = analysis::correlate_aligned(
            &entropy,
            &nodes,
            &MetricKind::ShannonEntropy.name(),
            &MetricKind::NodeCount.name(),
        );
        let (outcome, note) = match result {
            Ok(o) => (Some(o), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(CorrelationSummary {
            ecosystem: desc.ecosystem.clone(),
            subsystem: desc.subsystem,
            outcome,
            note,
        });
    }
    if let Some(dir) = &cfg.output_dir {
        ensure_dir(dir)?;
        write_json(&dir.join("correlation.json"), &out)?;
    }
    Ok(out)
}

/// Reads a `window_start,value` series written by [`write_series_csv`].
pub fn read_series_csv(path: &Path) -> Result<Vec<(String, f64)>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IngestError::EmptyFile(path.to_path_buf()))?;
    if header.trim() != "window_start,value" {
        return Err(IngestError::SchemaMismatch {
            path: path.to_path_buf(),
            schema: SubsystemKind::Consensus,
            missing: "window_start, value".into(),
        });
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        if let Some((w, v)) = line.split_once(',') {
            if let Ok(v) = v.trim().parse::<f64>() {
                out.push((w.trim().to_string(), v));
            }
        }
    }
    Ok(out)
}

/// Pearson correlation of two exported series over their shared windows.
pub fn correlate_series_files(a: &Path, b: &Path) -> Result<CorrelationOutcome, PipelineError> {
    let xs = read_series_csv(a)?;
    let ys: BTreeMap<String, f64> = read_series_csv(b)?.into_iter().collect();
    let (x, y): (Vec<f64>, Vec<f64>) = xs.iter().filter_map(|(w, v)| ys.get(w).map(|u| (*v, *u))).unzip();
    let name = |p: &Path| {
        p.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    };
    let n = x.len();
    let outcome = match analysis::pearson(&x, &y) {
        Ok(r) => CorrelationOutcome::Defined(analysis::CorrelationReport {
            series_a: name(a),
            series_b: name(b),
            ..r
        }),
        Err(AnalysisError::ZeroVariance) => CorrelationOutcome::Degenerate {
            n,
            series_a: name(a),
            series_b: name(b),
            reason: AnalysisError::ZeroVariance.to_string(),
        },
        Err(e) => return Err(e.into()),
    };
    Ok(outcome)
}
