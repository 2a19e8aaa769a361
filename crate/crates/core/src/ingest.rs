//! Per-sample validation log-likelihood records and per-chain tables.
//!
//! Two line formats are accepted, auto-detected from the first non-blank
//! character of the stream:
//!
//! ```text
//! {"chain":"c0","kind":"warmstart","index":0,"loglik":[-0.51,-1.2,-0.33]}
//! {"chain":"c0","kind":"sample","index":1,"loglik":[-0.49,-1.1,-0.35]}
//! ```
//!
//! or the compact CSV layout `chain,kind,index,ll_1,...,ll_m` with an optional
//! `chain,...` header row. Warmstarts use index 0; posterior samples are
//! numbered from 1 without gaps.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-point floor used when clamping `-inf` log-likelihoods.
pub const DEFAULT_CLAMP_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Warmstart,
    #[serde(rename = "sample")]
    PosteriorSample,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Warmstart => "warmstart",
            RecordKind::PosteriorSample => "sample",
        }
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "warmstart" => Ok(RecordKind::Warmstart),
            "sample" | "posterior_sample" => Ok(RecordKind::PosteriorSample),
            other => Err(format!("unknown record kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikRecord {
    pub chain_id: String,
    pub kind: RecordKind,
    pub sample_index: usize,
    pub loglik: Vec<f64>,
    /// 1-based line in the source stream, 0 when built in memory.
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParseOptions {
    /// When set, `-inf` entries are replaced by this floor instead of failing.
    pub clamp_floor: Option<f64>,
}

impl ParseOptions {
    pub fn clamping(floor: f64) -> Self {
        Self {
            clamp_floor: Some(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    JsonLines,
    Csv,
}

#[derive(Deserialize)]
struct RawRecord {
    chain: String,
    kind: String,
    index: i64,
    loglik: Vec<RawNumber>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNumber {
    Number(f64),
    Text(String),
}

#[derive(Serialize)]
struct RecordLine<'a> {
    chain: &'a str,
    kind: &'a str,
    index: usize,
    loglik: &'a [f64],
}

fn parse_number_text(text: &str) -> Option<f64> {
    match text.trim().to_ascii_lowercase().as_str() {
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "nan" => Some(f64::NAN),
        other => other.parse().ok(),
    }
}

struct Validator {
    options: ParseOptions,
    seen: HashMap<(String, usize), usize>,
    chain_m: HashMap<String, usize>,
    clamped: usize,
}

impl Validator {
    fn new(options: ParseOptions) -> Self {
        Self {
            options,
            seen: HashMap::new(),
            chain_m: HashMap::new(),
            clamped: 0,
        }
    }

    fn finish_record(
        &mut self,
        line: usize,
        chain_id: String,
        kind: &str,
        index: i64,
        mut loglik: Vec<f64>,
    ) -> Result<LogLikRecord> {
        let parse_err = |message: String| Error::Parse { line, message };
        let kind: RecordKind = kind.parse().map_err(parse_err)?;
        if index < 0 {
            return Err(parse_err(format!("negative sample index {index}")));
        }
        let sample_index = index as usize;
        match (kind, sample_index) {
            (RecordKind::Warmstart, i) if i != 0 => {
                return Err(parse_err(format!("warmstart records use index 0, got {i}")))
            }
            (RecordKind::PosteriorSample, 0) => {
                return Err(parse_err(
                    "posterior samples are numbered from 1 (index 0 is the warmstart)".into(),
                ))
            }
            _ => {}
        }
        if chain_id.is_empty() {
            return Err(parse_err("empty chain id".into()));
        }
        if loglik.is_empty() {
            return Err(parse_err("empty loglik array".into()));
        }
        for (i, v) in loglik.iter_mut().enumerate() {
            if v.is_finite() {
                continue;
            }
            match (self.options.clamp_floor, *v == f64::NEG_INFINITY) {
                (Some(floor), true) => {
                    *v = floor;
                    self.clamped += 1;
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite log-likelihood {v} at point {i}"),
                    })
                }
            }
        }
        match self.chain_m.get(&chain_id) {
            Some(&m) if m != loglik.len() => {
                return Err(Error::MixedLength {
                    expected: m,
                    found: loglik.len(),
                    context: format!("chain {chain_id:?}, line {line}"),
                })
            }
            Some(_) => {}
            None => {
                self.chain_m.insert(chain_id.clone(), loglik.len());
            }
        }
        let key = (chain_id.clone(), sample_index);
        if let Some(&first_line) = self.seen.get(&key) {
            return Err(Error::Duplicate {
                chain: chain_id,
                index: sample_index,
                first_line,
                second_line: line,
            });
        }
        self.seen.insert(key, line);
        Ok(LogLikRecord {
            chain_id,
            kind,
            sample_index,
            loglik,
            line,
        })
    }
}

pub fn detect_format(text: &str) -> Option<RecordFormat> {
    text.chars()
        .find(|c| !c.is_whitespace())
        .map(|c| if c == '{' { RecordFormat::JsonLines } else { RecordFormat::Csv })
}

/// Parses a whole record stream; each non-blank line becomes one record.
pub fn parse_records<R: Read>(mut reader: R, options: &ParseOptions) -> Result<Vec<LogLikRecord>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_records_str(&text, options)
}

pub fn parse_records_str(text: &str, options: &ParseOptions) -> Result<Vec<LogLikRecord>> {
    let mut validator = Validator::new(*options);
    let records = match detect_format(text) {
        None => Vec::new(),
        Some(RecordFormat::JsonLines) => parse_jsonl(text, &mut validator)?,
        Some(RecordFormat::Csv) => parse_csv(text, &mut validator)?,
    };
    if validator.clamped > 0 {
        log::warn!(
            "clamped {} -inf log-likelihood value(s) to {}",
            validator.clamped,
            options.clamp_floor.unwrap_or(DEFAULT_CLAMP_FLOOR)
        );
    }
    Ok(records)
}

fn parse_jsonl(text: &str, validator: &mut Validator) -> Result<Vec<LogLikRecord>> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut loglik = Vec::with_capacity(raw.loglik.len());
        for (j, n) in raw.loglik.into_iter().enumerate() {
            let v = match n {
                RawNumber::Number(v) => v,
                RawNumber::Text(t) => parse_number_text(&t).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("loglik[{j}] is not a number: {t:?}"),
                })?,
            };
            loglik.push(v);
        }
        out.push(validator.finish_record(line, raw.chain, &raw.kind, raw.index, loglik)?);
    }
    Ok(out)
}

fn parse_csv(text: &str, validator: &mut Validator) -> Result<Vec<LogLikRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut first = true;
    for result in reader.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if std::mem::take(&mut first) && record.get(0) == Some("chain") {
            continue;
        }
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected chain,kind,index,ll_1..ll_m, got {} fields", record.len()),
            });
        }
        let index: i64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("index is not an integer: {:?}", &record[2]),
        })?;
        let loglik = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(j, f)| {
                parse_number_text(f).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("ll_{} is not a number: {f:?}", j + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(validator.finish_record(line, record[0].to_string(), &record[1], index, loglik)?);
    }
    Ok(out)
}

/// Per-chain table of validation log-likelihood rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikTable {
    pub chain_id: String,
    pub warmstart_row: Option<Vec<f64>>,
    /// Row `i` holds sample index `i + 1`.
    pub sample_rows: Vec<Vec<f64>>,
    pub m: usize,
    /// Original sample index of each row; the identity map unless thinned.
    pub original_indices: Vec<usize>,
}

impl LogLikTable {
    pub fn new(
        chain_id: impl Into<String>,
        warmstart_row: Option<Vec<f64>>,
        sample_rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let chain_id = chain_id.into();
        let m = warmstart_row
            .as_ref()
            .or(sample_rows.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Degenerate(format!("chain {chain_id:?} has no rows")))?;
        if m == 0 {
            return Err(Error::Degenerate(format!("chain {chain_id:?} has empty rows")));
        }
        for row in warmstart_row.iter().chain(&sample_rows) {
            if row.len() != m {
                return Err(Error::MixedLength {
                    expected: m,
                    found: row.len(),
                    context: format!("chain {chain_id:?}"),
                });
            }
        }
        let original_indices = (1..=sample_rows.len()).collect();
        Ok(Self {
            chain_id,
            warmstart_row,
            sample_rows,
            m,
            original_indices,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.sample_rows.len()
    }

    /// Row for 1-based sample index `index` in this table's numbering.
    pub fn sample(&self, index: usize) -> Option<&[f64]> {
        index
            .checked_sub(1)
            .and_then(|i| self.sample_rows.get(i))
            .map(Vec::as_slice)
    }

    pub fn original_index(&self, index: usize) -> Option<usize> {
        index
            .checked_sub(1)
            .and_then(|i| self.original_indices.get(i))
            .copied()
    }

    /// Row for the sample whose original index is `original`.
    pub fn sample_by_original(&self, original: usize) -> Option<&[f64]> {
        self.original_indices
            .iter()
            .position(|&o| o == original)
            .map(|i| self.sample_rows[i].as_slice())
    }

    /// Keeps only the first `budget` samples.
    pub fn truncated(&self, budget: usize) -> Self {
        let keep = budget.min(self.sample_rows.len());
        Self {
            chain_id: self.chain_id.clone(),
            warmstart_row: self.warmstart_row.clone(),
            sample_rows: self.sample_rows[..keep].to_vec(),
            m: self.m,
            original_indices: self.original_indices[..keep].to_vec(),
        }
    }

    /// Total validation log-likelihood `ln L(θ)` of each sample row.
    pub fn sample_row_sums(&self) -> Vec<f64> {
        self.sample_rows.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn records(&self) -> Vec<LogLikRecord> {
        let warm = self.warmstart_row.iter().map(|row| LogLikRecord {
            chain_id: self.chain_id.clone(),
            kind: RecordKind::Warmstart,
            sample_index: 0,
            loglik: row.clone(),
            line: 0,
        });
        let samples = self.sample_rows.iter().enumerate().map(|(i, row)| LogLikRecord {
            chain_id: self.chain_id.clone(),
            kind: RecordKind::PosteriorSample,
            sample_index: i + 1,
            loglik: row.clone(),
            line: 0,
        });
        warm.chain(samples).collect()
    }
}

/// Groups records into one table per chain, in order of first appearance.
pub fn build_tables(records: &[LogLikRecord]) -> Result<Vec<LogLikTable>> {
    let mut groups: IndexMap<&str, Vec<&LogLikRecord>> = IndexMap::new();
    for r in records {
        groups.entry(r.chain_id.as_str()).or_default().push(r);
    }
    let mut run_m: Option<(usize, &str)> = None;
    let mut tables = Vec::with_capacity(groups.len());
    for (chain, mut rows) in groups {
        rows.sort_by_key(|r| (r.sample_index, r.line));
        let mut warmstart = None;
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for pair in rows.windows(2) {
            if pair[0].sample_index == pair[1].sample_index {
                return Err(Error::Duplicate {
                    chain: chain.to_string(),
                    index: pair[0].sample_index,
                    first_line: pair[0].line,
                    second_line: pair[1].line,
                });
            }
        }
        for r in rows {
            match r.kind {
                RecordKind::Warmstart => warmstart = Some(r.loglik.clone()),
                RecordKind::PosteriorSample => {
                    let expected = samples.len() + 1;
                    if r.sample_index != expected {
                        return Err(Error::IndexGap {
                            chain: chain.to_string(),
                            missing: expected,
                        });
                    }
                    samples.push(r.loglik.clone());
                }
            }
        }
        let table = LogLikTable::new(chain, warmstart, samples)?;
        match run_m {
            Some((m, first_chain)) if m != table.m => {
                return Err(Error::MixedLength {
                    expected: m,
                    found: table.m,
                    context: format!("chain {chain:?} vs chain {first_chain:?}"),
                })
            }
            Some(_) => {}
            None => run_m = Some((table.m, chain)),
        }
        tables.push(table);
    }
    Ok(tables)
}

pub fn write_records_jsonl<W: Write>(tables: &[LogLikTable], mut writer: W) -> Result<()> {
    for table in tables {
        for r in table.records() {
            let line = RecordLine {
                chain: &r.chain_id,
                kind: r.kind.as_str(),
                index: r.sample_index,
                loglik: &r.loglik,
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_records_csv<W: Write>(tables: &[LogLikTable], mut writer: W) -> Result<()> {
    for table in tables {
        for r in table.records() {
            write!(writer, "{},{},{}", r.chain_id, r.kind.as_str(), r.sample_index)?;
            for v in &r.loglik {
                // Debug formatting is the shortest representation that round-trips.
                write!(writer, ",{v:?}")?;
            }
            writeln!(writer)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The optimized warmstart (index 0) is the baseline; every posterior
    /// sample is tested.
    DeWarmstart,
    /// Posterior sample 1 is the baseline; testing starts at sample 2.
    FirstSample,
}

impl ReferenceMode {
    pub fn first_tested_index(self) -> usize {
        match self {
            ReferenceMode::DeWarmstart => 1,
            ReferenceMode::FirstSample => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceMode::DeWarmstart => "de_warmstart",
            ReferenceMode::FirstSample => "first_sample",
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "de_warmstart" | "de" | "warmstart" => Ok(ReferenceMode::DeWarmstart),
            "first_sample" | "sample" => Ok(ReferenceMode::FirstSample),
            other => Err(format!(
                "unknown reference mode {other:?} (expected de-warmstart or first-sample)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference<'a> {
    pub baseline: &'a [f64],
    pub first_tested_index: usize,
}

pub fn select_reference(table: &LogLikTable, mode: ReferenceMode) -> Result<Reference<'_>> {
    let baseline = match mode {
        ReferenceMode::DeWarmstart => table.warmstart_row.as_deref().ok_or_else(|| {
            Error::MissingReference(format!(
                "chain {:?} has no warmstart record, required by the de_warmstart reference",
                table.chain_id
            ))
        })?,
        ReferenceMode::FirstSample => table.sample(1).ok_or_else(|| {
            Error::MissingReference(format!(
                "chain {:?} has no posterior samples, required by the first_sample reference",
                table.chain_id
            ))
        })?,
    };
    Ok(Reference {
        baseline,
        first_tested_index: mode.first_tested_index(),
    })
}
