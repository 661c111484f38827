//! Delimited-text readers for each subsystem's input schema.
//!
//! Every file needs a header row. Column names are matched case-insensitively;
//! unknown columns are ignored with a warning. The delimiter (comma or tab) is
//! sniffed from the header line. An optional `ecosystem` (or `blockchain`,
//! `chain`) column tags each row; rows without one use the default ecosystem.
//!
//! | subsystem         | time column  | entity column  | weight column   |
//! |-------------------|--------------|----------------|-----------------|
//! | `development`     | `month`      | `developer`    | `commits`       |
//! | `exchanges`       | `month`      | `exchange`     | `usd_volume`    |
//! | `defi_tvl`        | `date`       | `protocol`     | `tvl_usd`       |
//! | `defi_governance` | `date`       | `wallet`       | `token_balance` |
//! | `nft_marketplaces`| `date`       | `marketplace`  | `usd_volume`    |
//!
//! Consensus files carry `timestamp` and `block_id` plus one of three layouts:
//!
//! * `producer`: one row per block, the block goes to that producer;
//! * `recipient`, `amount` (optional `script_type`): one row per coinbase
//!   output, the block is split proportionally, `pubkey`-type outputs count
//!   as `Unknown`;
//! * `fee_recipient` (optional `transfer_to`, `transfer_amount`): builder-paid
//!   blocks resolved to the proposer using a builder labels file.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Cursor, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::attribution::{self, BuilderLabels, BuilderTransfer, RecipientAddress, RewardPayout};
use crate::model::{ContributionRecord, EntityId, SubsystemKind};

/// Row-level errors kept verbatim in a report; the rest are only counted.
pub const MAX_REPORTED_ERRORS: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}: file not found")]
    FileNotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {schema} schema requires column(s) {missing}")]
    SchemaMismatch {
        path: PathBuf,
        schema: SubsystemKind,
        missing: String,
    },
    #[error("{0}: file has no data rows")]
    EmptyFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusLayout {
    Producer,
    Proportional,
    BuilderPaid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

/// Per-file accounting. `rows_in == rows_used + rows_skipped`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileReport {
    pub path: String,
    pub schema: SubsystemKind,
    pub delimiter: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_layout: Option<ConsensusLayout>,
    pub rows_in: u64,
    pub rows_used: u64,
    pub rows_skipped: u64,
    pub zero_weight_rows: u64,
    pub zero_reward_blocks: u64,
    pub ignored_columns: Vec<String>,
    pub errors: Vec<RowError>,
}

impl FileReport {
    fn new(path: &Path, schema: SubsystemKind, delimiter: u8) -> Self {
        FileReport {
            path: path.display().to_string(),
            schema,
            delimiter: if delimiter == b'\t' {
                "tab".into()
            } else {
                "comma".into()
            },
            consensus_layout: None,
            rows_in: 0,
            rows_used: 0,
            rows_skipped: 0,
            zero_weight_rows: 0,
            zero_reward_blocks: 0,
            ignored_columns: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn skip(&mut self, line: u64, rows: u64, reason: impl Into<String>) {
        self.rows_skipped += rows;
        if self.errors.len() < MAX_REPORTED_ERRORS {
            self.errors.push(RowError {
                line,
                reason: reason.into(),
            });
        }
    }
}

/// A record together with the ecosystem it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRecord {
    pub ecosystem: Arc<str>,
    pub record: ContributionRecord,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub default_ecosystem: String,
    pub labels: Arc<BuilderLabels>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            default_ecosystem: "unknown".into(),
            labels: Arc::new(BuilderLabels::default()),
        }
    }
}

/// Parses the timestamp forms found in common exports: RFC 3339,
/// `YYYY-MM-DD HH:MM:SS[.fff][ UTC]`, `YYYY-MM-DD`, `YYYY-MM`, or integer
/// Unix seconds. Sub-second precision is truncated.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    let ts = if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        t.with_timezone(&Utc)
    } else if s.bytes().all(|b| b.is_ascii_digit()) && s.len() >= 9 {
        Utc.timestamp_opt(s.parse().ok()?, 0).single()?
    } else {
        let s = s.strip_suffix("UTC").map(str::trim_end).unwrap_or(s);
        let s = s.strip_suffix('Z').unwrap_or(s);
        let naive = ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .or_else(|| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .or_else(|_| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d"))
                    .ok()
                    .and_then(|d| d.and_hms_opt(0, 0, 0))
            })?;
        Utc.from_utc_datetime(&naive)
    };
    Utc.timestamp_opt(ts.timestamp(), 0).single()
}

fn parse_amount(raw: &str) -> Result<f64, String> {
    let s = raw.trim();
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    if v < 0.0 {
        return Err(format!("negative value {s}"));
    }
    Ok(v)
}

const TIME_ALIASES: [&str; 6] = ["timestamp", "date", "day", "month", "time", "block_time"];
const ECOSYSTEM_ALIASES: [&str; 3] = ["ecosystem", "blockchain", "chain"];

struct Header {
    names: Vec<String>,
}

impl Header {
    fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn find_any(&self, names: &[&str]) -> Option<usize> {
        names.iter().find_map(|n| self.find(n))
    }
}

/// Column positions for the non-consensus schemas.
fn tabular_columns(schema: SubsystemKind) -> (&'static str, &'static str, &'static str) {
    match schema {
        SubsystemKind::Development => ("month", "developer", "commits"),
        SubsystemKind::Exchanges => ("month", "exchange", "usd_volume"),
        SubsystemKind::DefiTvl => ("date", "protocol", "tvl_usd"),
        SubsystemKind::DefiGovernance => ("date", "wallet", "token_balance"),
        SubsystemKind::NftMarketplaces => ("date", "marketplace", "usd_volume"),
        SubsystemKind::Consensus => ("timestamp", "producer", ""),
    }
}

/// Shares one `Arc` per distinct entity or ecosystem string.
#[derive(Default)]
struct Interner {
    entities: HashMap<String, EntityId>,
    ecosystems: HashMap<String, Arc<str>>,
}

impl Interner {
    fn entity(&mut self, raw: &str) -> Result<EntityId, String> {
        let key = raw.trim();
        if let Some(id) = self.entities.get(key) {
            return Ok(id.clone());
        }
        let id = EntityId::new(key).map_err(|e| e.to_string())?;
        self.entities.insert(key.to_string(), id.clone());
        Ok(id)
    }

    fn ecosystem(&mut self, raw: &str) -> Arc<str> {
        let key = raw.trim();
        if let Some(e) = self.ecosystems.get(key) {
            return e.clone();
        }
        let e: Arc<str> = Arc::from(key);
        self.ecosystems.insert(key.to_string(), e.clone());
        e
    }
}

/// Reads `path` under `schema`, handing every valid record to `sink`.
pub fn ingest_with<F>(
    path: &Path,
    schema: SubsystemKind,
    opts: &IngestOptions,
    sink: F,
) -> Result<FileReport, IngestError>
where
    F: FnMut(TaggedRecord),
{
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    ingest_reader(BufReader::new(file), path, schema, opts, sink)
}

/// Convenience wrapper collecting the records of one file.
pub fn ingest(
    path: &Path,
    schema: SubsystemKind,
    opts: &IngestOptions,
) -> Result<(Vec<TaggedRecord>, FileReport), IngestError> {
    let mut out = Vec::new();
    let report = ingest_with(path, schema, opts, |r| out.push(r))?;
    Ok((out, report))
}

pub fn ingest_reader<R, F>(
    mut reader: R,
    path: &Path,
    schema: SubsystemKind,
    opts: &IngestOptions,
    mut sink: F,
) -> Result<FileReport, IngestError>
where
    R: BufRead,
    F: FnMut(TaggedRecord),
{
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut first = Vec::new();
    reader.read_until(b'\n', &mut first).map_err(io_err)?;
    if first.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    }
    let first = first.strip_prefix(b"\xef\xbb\xbf").map(<[u8]>::to_vec).unwrap_or(first);
    let delimiter = if first.contains(&b'\t') { b'\t' } else { b',' };
    let mut csv = ::csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(Cursor::new(first).chain(reader));
    let header = Header {
        names: csv
            .headers()
            .map_err(|e| io_err(io::Error::new(io::ErrorKind::InvalidData, e)))?
            .iter()
            .map(|h| h.trim().to_ascii_lowercase())
            .collect(),
    };
    let mut report = FileReport::new(path, schema, delimiter);
    let mut interner = Interner::default();
    let default_eco = interner.ecosystem(&opts.default_ecosystem);
    let eco_col = header.find_any(&ECOSYSTEM_ALIASES);

    let mut used_cols: Vec<usize> = eco_col.into_iter().collect();
    let missing = |cols: &[&str]| IngestError::SchemaMismatch {
        path: path.to_path_buf(),
        schema,
        missing: cols.join(", "),
    };

    let mut rows = RowSource {
        csv,
        record: ::csv::StringRecord::new(),
        width: header.names.len(),
    };

    if schema == SubsystemKind::Consensus {
        let time = header.find_any(&TIME_ALIASES).ok_or_else(|| missing(&["timestamp"]))?;
        let block = header.find("block_id").ok_or_else(|| missing(&["block_id"]))?;
        used_cols.extend([time, block]);
        let layout = if let Some(fee) = header.find("fee_recipient") {
            let to = header.find("transfer_to");
            let amt = header.find("transfer_amount");
            used_cols.push(fee);
            used_cols.extend(to.into_iter().chain(amt));
            Layout::BuilderPaid { fee, to, amt }
        } else if let (Some(recipient), Some(amount)) = (header.find("recipient"), header.find("amount")) {
            let kind = header.find_any(&["script_type", "address_type", "recipient_type"]);
            used_cols.extend([recipient, amount]);
            used_cols.extend(kind);
            Layout::Proportional {
                recipient,
                amount,
                kind,
            }
        } else if let Some(producer) = header.find("producer") {
            used_cols.push(producer);
            Layout::Producer { producer }
        } else {
            return Err(missing(&["producer | recipient+amount | fee_recipient"]));
        };
        report.consensus_layout = Some(layout.kind());
        note_ignored(&header, &used_cols, &mut report);
        let cols = ConsensusCols {
            time,
            block,
            eco: eco_col,
            layout,
        };
        read_consensus(
            &mut rows,
            &cols,
            opts,
            &mut interner,
            default_eco,
            &mut report,
            &mut sink,
        )?;
    } else {
        let (t, e, w) = tabular_columns(schema);
        let time = header
            .find(t)
            .or_else(|| header.find_any(&TIME_ALIASES))
            .ok_or_else(|| missing(&[t]))?;
        let entity = header.find(e).ok_or_else(|| missing(&[e]))?;
        let weight = header.find(w).ok_or_else(|| missing(&[w]))?;
        used_cols.extend([time, entity, weight]);
        note_ignored(&header, &used_cols, &mut report);
        while let Some(line) = rows.next_row(&mut report)? {
            let rec = &rows.record;
            let parsed = (|| {
                let ts = rec
                    .get(time)
                    .and_then(parse_timestamp)
                    .ok_or_else(|| format!("unparseable {t} `{}`", rec.get(time).unwrap_or("")))?;
                let entity = interner.entity(rec.get(entity).unwrap_or(""))?;
                let weight = parse_amount(rec.get(weight).unwrap_or(""))?;
                ContributionRecord::new(ts, entity, schema, weight).map_err(|e| e.to_string())
            })();
            match parsed {
                Ok(record) => {
                    report.rows_used += 1;
                    if record.weight == 0.0 {
                        report.zero_weight_rows += 1;
                    }
                    let ecosystem = row_ecosystem(rec, eco_col, &mut interner, &default_eco);
                    sink(TaggedRecord { ecosystem, record });
                }
                Err(reason) => report.skip(line, 1, reason),
            }
        }
    }

    if report.rows_in == 0 {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    }
    debug_assert_eq!(report.rows_in, report.rows_used + report.rows_skipped);
    Ok(report)
}

fn note_ignored(header: &Header, used: &[usize], report: &mut FileReport) {
    for (i, name) in header.names.iter().enumerate() {
        if !used.contains(&i) {
            warn!("{}: ignoring unknown column `{name}`", report.path);
            report.ignored_columns.push(name.clone());
        }
    }
}

fn row_ecosystem(
    rec: &::csv::StringRecord,
    col: Option<usize>,
    interner: &mut Interner,
    default: &Arc<str>,
) -> Arc<str> {
    match col.and_then(|c| rec.get(c)).map(str::trim) {
        Some(v) if !v.is_empty() => interner.ecosystem(v),
        _ => default.clone(),
    }
}

struct RowSource<R: Read> {
    csv: ::csv::Reader<R>,
    record: ::csv::StringRecord,
    width: usize,
}

impl<R: Read> RowSource<R> {
    /// Advances to the next parseable row and returns its line number.
    /// Undecodable rows are counted as skipped.
    fn next_row(&mut self, report: &mut FileReport) -> Result<Option<u64>, IngestError> {
        loop {
            match self.csv.read_record(&mut self.record) {
                Ok(false) => return Ok(None),
                Ok(true) => {
                    if self.record.iter().all(|f| f.trim().is_empty()) {
                        continue;
                    }
                    report.rows_in += 1;
                    let line = self.record.position().map_or(0, |p| p.line());
                    if self.record.len() != self.width {
                        let reason = format!("expected {} fields, found {}", self.width, self.record.len());
                        report.skip(line, 1, reason);
                        continue;
                    }
                    return Ok(Some(line));
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    if let ::csv::ErrorKind::Io(_) = e.kind() {
                        return Err(IngestError::Io {
                            path: PathBuf::from(&report.path),
                            source: io::Error::other(e.to_string()),
                        });
                    }
                    report.rows_in += 1;
                    report.skip(line, 1, e.to_string());
                }
            }
        }
    }
}

enum Layout {
    Producer {
        producer: usize,
    },
    Proportional {
        recipient: usize,
        amount: usize,
        kind: Option<usize>,
    },
    BuilderPaid {
        fee: usize,
        to: Option<usize>,
        amt: Option<usize>,
    },
}

impl Layout {
    fn kind(&self) -> ConsensusLayout {
        match self {
            Layout::Producer { .. } => ConsensusLayout::Producer,
            Layout::Proportional { .. } => ConsensusLayout::Proportional,
            Layout::BuilderPaid { .. } => ConsensusLayout::BuilderPaid,
        }
    }
}

struct ConsensusCols {
    time: usize,
    block: usize,
    eco: Option<usize>,
    layout: Layout,
}

#[derive(Default)]
struct BlockRows {
    first_line: u64,
    rows: u64,
    timestamp: Option<DateTime<Utc>>,
    poisoned: Option<String>,
    producers: Vec<RecipientAddress>,
    recipients: Vec<(RecipientAddress, f64)>,
    fee_recipients: Vec<String>,
    transfers: Vec<(String, f64)>,
}

fn read_consensus<R: Read, F: FnMut(TaggedRecord)>(
    rows: &mut RowSource<R>,
    cols: &ConsensusCols,
    opts: &IngestOptions,
    interner: &mut Interner,
    default_eco: Arc<str>,
    report: &mut FileReport,
    sink: &mut F,
) -> Result<(), IngestError> {
    let mut blocks: HashMap<(Arc<str>, String), BlockRows> = HashMap::new();
    while let Some(line) = rows.next_row(report)? {
        let rec = &rows.record;
        let block_id = rec.get(cols.block).map(str::trim).unwrap_or("");
        if block_id.is_empty() {
            report.skip(line, 1, "missing block_id");
            continue;
        }
        let ecosystem = row_ecosystem(rec, cols.eco, interner, &default_eco);
        let block = blocks.entry((ecosystem, block_id.to_string())).or_default();
        if block.rows == 0 {
            block.first_line = line;
        }
        block.rows += 1;
        if block.poisoned.is_some() {
            continue;
        }
        let parsed: Result<(), String> = (|| {
            let raw_ts = rec.get(cols.time).unwrap_or("");
            let ts = parse_timestamp(raw_ts).ok_or_else(|| format!("unparseable timestamp `{raw_ts}`"))?;
            block.timestamp = Some(block.timestamp.map_or(ts, |t| t.min(ts)));
            match cols.layout {
                Layout::Producer { producer } => {
                    let p = rec.get(producer).map(str::trim).unwrap_or("");
                    if p.is_empty() {
                        return Err("missing producer".into());
                    }
                    let addr = RecipientAddress::Address(p.to_string());
                    if !block.producers.contains(&addr) {
                        block.producers.push(addr);
                    }
                }
                Layout::Proportional {
                    recipient,
                    amount,
                    kind,
                } => {
                    let r = rec.get(recipient).map(str::trim).unwrap_or("");
                    let a = parse_amount(rec.get(amount).unwrap_or(""))?;
                    let is_pubkey = match kind.and_then(|k| rec.get(k)).map(str::trim) {
                        Some(k) if !k.is_empty() => {
                            matches!(k.to_ascii_lowercase().as_str(), "pubkey" | "p2pk")
                        }
                        _ => RecipientAddress::looks_like_pubkey(r),
                    };
                    let addr = if is_pubkey {
                        RecipientAddress::RawPubkey(r.to_string())
                    } else if r.is_empty() {
                        return Err("missing recipient".into());
                    } else {
                        RecipientAddress::Address(r.to_string())
                    };
                    block.recipients.push((addr, a));
                }
                Layout::BuilderPaid { fee, to, amt } => {
                    let f = rec.get(fee).map(str::trim).unwrap_or("");
                    if !f.is_empty() && !block.fee_recipients.iter().any(|x| x == f) {
                        block.fee_recipients.push(f.to_string());
                    }
                    let dest = to.and_then(|c| rec.get(c)).map(str::trim).unwrap_or("");
                    if !dest.is_empty() {
                        let amount = match amt.and_then(|c| rec.get(c)).map(str::trim) {
                            Some(a) if !a.is_empty() => parse_amount(a)?,
                            _ => 0.0,
                        };
                        block.transfers.push((dest.to_string(), amount));
                    }
                }
            }
            Ok(())
        })();
        if let Err(reason) = parsed {
            block.poisoned = Some(format!("line {line}: {reason}"));
        }
    }

    let ordered: BTreeMap<_, _> = blocks.into_iter().collect();
    for ((ecosystem, block_id), block) in ordered {
        match attribute_block(&block_id, &block, &cols.layout, opts, interner) {
            Ok((shares, degraded)) => {
                let ts = block.timestamp.expect("timestamp set on every unpoisoned row");
                let records: Result<Vec<_>, _> = shares
                    .into_iter()
                    .map(|(entity, w)| ContributionRecord::new(ts, entity, SubsystemKind::Consensus, w))
                    .collect();
                match records {
                    Ok(records) => {
                        report.rows_used += block.rows;
                        if degraded {
                            report.zero_reward_blocks += 1;
                        }
                        for record in records {
                            sink(TaggedRecord {
                                ecosystem: ecosystem.clone(),
                                record,
                            });
                        }
                    }
                    Err(e) => report.skip(block.first_line, block.rows, format!("block {block_id}: {e}")),
                }
            }
            Err(reason) => report.skip(block.first_line, block.rows, reason),
        }
    }
    Ok(())
}

fn attribute_block(
    block_id: &str,
    block: &BlockRows,
    layout: &Layout,
    opts: &IngestOptions,
    interner: &mut Interner,
) -> Result<(Vec<(EntityId, f64)>, bool), String> {
    if let Some(p) = &block.poisoned {
        return Err(format!("block {block_id}: {p}"));
    }
    let shared = |mut shares: Vec<(EntityId, f64)>, interner: &mut Interner| {
        for s in &mut shares {
            if let Ok(id) = interner.entity(s.0.as_str()) {
                s.0 = id;
            }
        }
        shares
    };
    match layout {
        Layout::Producer { .. } => {
            let payout = RewardPayout {
                block_id: block_id.to_string(),
                recipients: block
                    .producers
                    .iter()
                    .map(|a| attribution::Recipient {
                        address: a.clone(),
                        amount: 1.0,
                    })
                    .collect(),
            };
            let single = attribution::attribute_single(&payout).map_err(|e| e.to_string())?;
            Ok((shared(vec![single], interner), false))
        }
        Layout::Proportional { .. } => {
            let payout = RewardPayout {
                block_id: block_id.to_string(),
                recipients: block
                    .recipients
                    .iter()
                    .map(|(address, amount)| attribution::Recipient {
                        address: address.clone(),
                        amount: *amount,
                    })
                    .collect(),
            };
            let (shares, degraded) =
                attribution::attribute_proportional_or_unknown(&payout).map_err(|e| e.to_string())?;
            Ok((shared(shares, interner), degraded))
        }
        Layout::BuilderPaid { .. } => {
            let fee_recipient = match block.fee_recipients.as_slice() {
                [one] => one.clone(),
                other => {
                    return Err(format!(
                        "block {block_id}: expected one fee_recipient, found {}",
                        other.len()
                    ))
                }
            };
            let transfer = BuilderTransfer {
                block_id: block_id.to_string(),
                fee_recipient,
                transfers: block.transfers.clone(),
            };
            let proposer = attribution::resolve_pbs_proposer(&transfer, &opts.labels).map_err(|e| e.to_string())?;
            Ok((shared(vec![(proposer, 1.0)], interner), false))
        }
    }
}
