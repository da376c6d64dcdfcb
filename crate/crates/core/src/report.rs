//! CSV and JSON renderings of evaluation and sweep results.
//!
//! Floats are written in Rust's shortest round-trip form, so parsing an
//! emitted report and emitting it again reproduces the same bytes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::sweep::{PatternStats, SweepReport};

pub const CSV_HEADER: &str = "rank,pattern,layer1,layer2,layer3,layer4,accuracy_percent,kilo_ops,aoc,saturations";

/// Pattern column value for a single hand-written assignment.
pub const CUSTOM_PATTERN: &str = "custom";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidParam(format!("unknown report format `{other}`"))),
        }
    }
}

/// One ranked row; the layer columns hold conv kernel ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rank: usize,
    pub pattern: String,
    pub layer1: String,
    pub layer2: String,
    pub layer3: String,
    pub layer4: String,
    pub accuracy_percent: f64,
    pub kilo_ops: f64,
    pub aoc: f64,
    pub saturations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    /// Present in JSON only.
    #[serde(default)]
    pub pattern_stats: Vec<PatternStats>,
}

fn row_from(rank: usize, pattern: &str, r: &EvalReport) -> ReportRow {
    let layer = |i| r.assignment.conv_kernel(i).to_string();
    ReportRow {
        rank,
        pattern: pattern.to_string(),
        layer1: layer(1),
        layer2: layer(2),
        layer3: layer(3),
        layer4: layer(4),
        accuracy_percent: r.accuracy_percent,
        kilo_ops: r.kilo_ops,
        aoc: r.aoc,
        saturations: r.saturations,
    }
}

pub fn table_from_sweep(report: &SweepReport) -> ReportTable {
    ReportTable {
        rows: report.rows.iter().enumerate().map(|(i, r)| row_from(i + 1, &r.pattern, &r.report)).collect(),
        pattern_stats: report.pattern_stats.clone(),
    }
}

pub fn table_from_eval(report: &EvalReport) -> ReportTable {
    ReportTable { rows: vec![row_from(1, CUSTOM_PATTERN, report)], pattern_stats: Vec::new() }
}

pub fn emit_report(report: &SweepReport, format: ReportFormat) -> Vec<u8> {
    emit_table(&table_from_sweep(report), format)
}

/// CSV gives the single-row table; JSON gives the full report including
/// per-image outcomes.
pub fn emit_eval(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => emit_table(&table_from_eval(report), format),
        ReportFormat::Json => to_json(report),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report values are finite");
    out.push(b'\n');
    out
}

pub fn emit_table(table: &ReportTable, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => to_json(table),
        ReportFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in &table.rows {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.rank,
                    r.pattern,
                    r.layer1,
                    r.layer2,
                    r.layer3,
                    r.layer4,
                    r.accuracy_percent,
                    r.kilo_ops,
                    r.aoc,
                    r.saturations
                )
                .expect("writing to a String");
            }
            s.into_bytes()
        }
    }
}

pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<ReportTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("report is not UTF-8: {e}")))?;
    match format {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}"))),
        ReportFormat::Csv => parse_csv(text),
    }
}

fn parse_csv(text: &str) -> Result<ReportTable> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("report header does not match".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Format(format!("line {line_no}: expected 10 fields, found {}", f.len())));
        }
        fn num<T: FromStr>(s: &str, line: usize, col: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Format(format!("line {line}: bad {col} `{s}`")))
        }
        rows.push(ReportRow {
            rank: num(f[0], line_no, "rank")?,
            pattern: f[1].to_string(),
            layer1: f[2].to_string(),
            layer2: f[3].to_string(),
            layer3: f[4].to_string(),
            layer4: f[5].to_string(),
            accuracy_percent: num(f[6], line_no, "accuracy_percent")?,
            kilo_ops: num(f[7], line_no, "kilo_ops")?,
            aoc: num(f[8], line_no, "aoc")?,
            saturations: num(f[9], line_no, "saturations")?,
        });
    }
    Ok(ReportTable { rows, pattern_stats: Vec::new() })
}
