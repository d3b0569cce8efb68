//! Selection manifests and learning-curve metrics as CSV.
//!
//! Manifest columns: `round, rank, frame_id, score`. Metrics columns:
//! `strategy, round, labeled_count, labeled_fraction, mAP, ap_class_0, …,
//! train_steps`. Rows are written round-major, then by frame id, so diffs
//! between runs stay meaningful.

use std::path::Path;

use crate::acquisition::SelectionResult;
use crate::alloop::CurveRow;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["round", "rank", "frame_id", "score"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Round in which the frame joins the labeled pool.
    pub round: usize,
    /// 1-based position in the strategy's ranking.
    pub rank: usize,
    pub frame_id: u64,
    pub score: Option<f64>,
}

/// Manifest rows for `result`, labeled in round `round`.
pub fn manifest_rows(result: &SelectionResult, round: usize) -> Vec<ManifestRow> {
    result
        .selected
        .iter()
        .enumerate()
        .map(|(i, &id)| ManifestRow {
            round,
            rank: i + 1,
            frame_id: id,
            score: result.scores.get(&id).copied(),
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest_to(file, rows).map_err(|e| csv_err(path, e))
}

/// Writes manifest CSV to any sink, e.g. standard output.
pub fn write_manifest_to(sink: impl std::io::Write, rows: &[ManifestRow]) -> csv::Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| (r.round, r.frame_id));
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MANIFEST_HEADER)?;
    for r in &sorted {
        w.write_record([
            r.round.to_string(),
            r.rank.to_string(),
            r.frame_id.to_string(),
            r.score.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn record_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| record_error(path, line, format!("missing column `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| record_error(path, line, format!("bad value `{raw}` in column `{name}`")))
}

fn optional_f64(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(i).map(str::trim) {
        None | Some("") => Ok(None),
        Some(_) => field(path, rec, i, name).map(Some),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(record_error(path, 1, format!("expected header {}", MANIFEST_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(ManifestRow {
            round: field(path, &rec, 0, "round")?,
            rank: field(path, &rec, 1, "rank")?,
            frame_id: field(path, &rec, 2, "frame_id")?,
            score: optional_f64(path, &rec, 3, "score")?,
        });
    }
    Ok(rows)
}

/// A learning-curve row as stored in a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub strategy: String,
    pub round: usize,
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub map: f64,
    pub ap: Vec<Option<f64>>,
    pub train_steps: u64,
}

impl From<&CurveRow> for MetricsRow {
    fn from(r: &CurveRow) -> Self {
        Self {
            strategy: r.strategy.to_string(),
            round: r.round,
            labeled_count: r.labeled_count,
            labeled_fraction: r.labeled_fraction,
            map: r.map,
            ap: r.ap.clone(),
            train_steps: r.train_steps,
        }
    }
}

pub fn metrics_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["strategy", "round", "labeled_count", "labeled_fraction", "mAP"]
        .map(String::from)
        .to_vec();
    h.extend((0..num_classes).map(|c| format!("ap_class_{c}")));
    h.push("train_steps".into());
    h
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow], num_classes: usize) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| (a.round, &a.strategy).cmp(&(b.round, &b.strategy)));
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(metrics_header(num_classes)).map_err(|e| csv_err(path, e))?;
    for r in &sorted {
        let mut rec = vec![
            r.strategy.clone(),
            r.round.to_string(),
            r.labeled_count.to_string(),
            fmt_f64(r.labeled_fraction),
            fmt_f64(r.map),
        ];
        rec.extend((0..num_classes).map(|c| r.ap.get(c).copied().flatten().map(fmt_f64).unwrap_or_default()));
        rec.push(r.train_steps.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let num_classes = header.len().saturating_sub(6);
    if header.len() < 6 || header != metrics_header(num_classes) {
        return Err(record_error(path, 1, "not a metrics CSV: unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut ap = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            ap.push(optional_f64(path, &rec, 5 + c, &header[5 + c])?);
        }
        rows.push(MetricsRow {
            strategy: field(path, &rec, 0, "strategy")?,
            round: field(path, &rec, 1, "round")?,
            labeled_count: field(path, &rec, 2, "labeled_count")?,
            labeled_fraction: field(path, &rec, 3, "labeled_fraction")?,
            map: field(path, &rec, 4, "mAP")?,
            ap,
            train_steps: field(path, &rec, 5 + num_classes, "train_steps")?,
        });
    }
    Ok(rows)
}
