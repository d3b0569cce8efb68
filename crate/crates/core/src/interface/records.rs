//! Inference records from an external detector, one JSON object per line.
//!
//! ```text
//! {"frame_id": 7, "sequence_id": 0, "index_in_sequence": 7,
//!  "detections": [{"box": [x, y, z, l, w, h, yaw], "class": 1,
//!                  "probs": [..C+1..], "objectness": 0.8,
//!                  "embedding": [..], "grad_embedding": [..],
//!                  "point_count": 42, "distance": 12.5}],
//!  "pass_probs": [[[..C+1..], ...], ...]}
//! ```
//!
//! `probs` lists the foreground classes followed by background. The
//! optional `pass_probs` holds, per detection, the probabilities of each
//! stochastic pass.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::FrameScoreRecord;
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::surrogate::Detection;

pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub class: usize,
    pub probs: Vec<f64>,
    pub objectness: f64,
    #[serde(default)]
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub grad_embedding: Vec<f64>,
    pub point_count: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceRecord {
    pub frame_id: u64,
    pub sequence_id: u64,
    pub index_in_sequence: u64,
    pub detections: Vec<InferenceDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_probs: Option<Vec<Vec<Vec<f64>>>>,
}

impl InferenceRecord {
    /// Describes a surrogate detection in record form.
    pub fn from_detections(frame_id: u64, sequence_id: u64, index_in_sequence: u64, dets: &[Detection]) -> Self {
        Self {
            frame_id,
            sequence_id,
            index_in_sequence,
            detections: dets
                .iter()
                .map(|d| InferenceDetection {
                    bbox: [
                        d.bbox.center[0],
                        d.bbox.center[1],
                        d.bbox.center[2],
                        d.bbox.dims[0],
                        d.bbox.dims[1],
                        d.bbox.dims[2],
                        d.bbox.yaw,
                    ],
                    class: d.bbox.class_id,
                    probs: d.probs.clone(),
                    objectness: d.objectness,
                    embedding: d.embedding.clone(),
                    grad_embedding: d.grad_embedding.clone(),
                    point_count: d.point_count,
                    distance: d.distance,
                })
                .collect(),
            pass_probs: None,
        }
    }
}

/// Validated records plus the vector lengths shared by the whole file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub records: Vec<FrameScoreRecord>,
    /// Foreground classes `C`, when any detection fixes it.
    pub num_classes: Option<usize>,
    pub embedding_dim: usize,
    pub grad_dim: usize,
}

#[derive(Default)]
struct Dims {
    probs: Option<usize>,
    embedding: Option<usize>,
    grad: Option<usize>,
}

fn same_len(slot: &mut Option<usize>, len: usize, what: &str) -> std::result::Result<(), String> {
    match *slot {
        Some(expected) if expected != len => Err(format!(
            "{what} has length {len} but earlier records use {expected}"
        )),
        _ => {
            *slot = Some(len);
            Ok(())
        }
    }
}

fn check_probs(p: &[f64], what: &str) -> std::result::Result<(), String> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
        return Err(format!("{what} must hold finite values in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(format!("{what} sum to {sum}, not 1 within {PROB_SUM_TOLERANCE:e}"));
    }
    Ok(())
}

fn validate(rec: &InferenceRecord, dims: &mut Dims) -> std::result::Result<(), String> {
    for (i, d) in rec.detections.iter().enumerate() {
        let at = |m: String| format!("detection {i}: {m}");
        if d.probs.len() < 2 {
            return Err(at("probs needs at least one foreground class and background".into()));
        }
        same_len(&mut dims.probs, d.probs.len(), "probs").map_err(at)?;
        same_len(&mut dims.embedding, d.embedding.len(), "embedding").map_err(at)?;
        same_len(&mut dims.grad, d.grad_embedding.len(), "grad_embedding").map_err(at)?;
        check_probs(&d.probs, "probs").map_err(at)?;
        if d.class + 1 >= d.probs.len() {
            return Err(at(format!("class {} out of range for {} probabilities", d.class, d.probs.len())));
        }
        if !(0.0..=1.0).contains(&d.objectness) {
            return Err(at(format!("objectness {} outside [0, 1]", d.objectness)));
        }
        if d.bbox.iter().any(|v| !v.is_finite()) || d.bbox[3..6].iter().any(|v| *v <= 0.0) {
            return Err(at("box must be finite with positive dimensions".into()));
        }
        if !(d.distance.is_finite() && d.distance >= 0.0) {
            return Err(at(format!("distance {} must be finite and >= 0", d.distance)));
        }
        if d.embedding.iter().chain(&d.grad_embedding).any(|v| !v.is_finite()) {
            return Err(at("embeddings must be finite".into()));
        }
    }
    if let Some(passes) = &rec.pass_probs {
        if passes.len() != rec.detections.len() {
            return Err(format!(
                "pass_probs has {} entries for {} detections",
                passes.len(),
                rec.detections.len()
            ));
        }
        for (i, per_det) in passes.iter().enumerate() {
            for (k, p) in per_det.iter().enumerate() {
                if p.len() != rec.detections[i].probs.len() {
                    return Err(format!("pass_probs[{i}][{k}] has length {}", p.len()));
                }
                check_probs(p, &format!("pass_probs[{i}][{k}]"))?;
            }
        }
    }
    Ok(())
}

fn to_detection(d: &InferenceDetection) -> Detection {
    let classes = d.probs.len() - 1;
    let fg_max = d.probs[..classes].iter().copied().fold(0.0, f64::max);
    Detection {
        bbox: Box3D::new(
            [d.bbox[0], d.bbox[1], d.bbox[2]],
            [d.bbox[3], d.bbox[4], d.bbox[5]],
            d.bbox[6],
            d.class,
        ),
        probs: d.probs.clone(),
        objectness: d.objectness,
        score: d.objectness * fg_max,
        embedding: d.embedding.clone(),
        grad_embedding: d.grad_embedding.clone(),
        point_count: d.point_count,
        distance: d.distance,
    }
}

/// Parses and validates records from any line source. `origin` names the
/// source in error messages.
pub fn parse_records(reader: impl BufRead, origin: &Path) -> Result<RecordSet> {
    let err = |line: usize, message: String| Error::Record {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut dims = Dims::default();
    let mut seen = BTreeSet::new();
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InferenceRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
        validate(&rec, &mut dims).map_err(|m| err(n, format!("frame {}: {m}", rec.frame_id)))?;
        if !seen.insert(rec.frame_id) {
            return Err(err(n, format!("duplicate frame_id {}", rec.frame_id)));
        }
        raw.push(rec);
    }
    let embedding_dim = dims.embedding.unwrap_or(0);
    let grad_dim = dims.grad.unwrap_or(0);
    let records = raw
        .into_iter()
        .map(|r| {
            FrameScoreRecord::new(
                r.frame_id,
                r.sequence_id,
                r.index_in_sequence,
                r.detections.iter().map(to_detection).collect(),
                r.pass_probs,
                embedding_dim,
                grad_dim,
            )
        })
        .collect();
    Ok(RecordSet {
        records,
        num_classes: dims.probs.map(|p| p - 1),
        embedding_dim,
        grad_dim,
    })
}

pub fn read_records(path: &Path) -> Result<RecordSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file), path)
}
