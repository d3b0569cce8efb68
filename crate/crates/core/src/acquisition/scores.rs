//! Per-frame uncertainty scores.

use serde::{Deserialize, Serialize};

use super::FrameScoreRecord;
use crate::error::{Error, Result};

/// How per-detection scores are reduced to a frame score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    Max,
}

impl Aggregation {
    /// Reduces `values`; an empty frame scores 0.
    pub fn reduce(self, values: impl IntoIterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut acc = match self {
            Aggregation::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        for v in values {
            n += 1;
            acc = match self {
                Aggregation::Max => acc.max(v),
                _ => acc + v,
            };
        }
        match (self, n) {
            (_, 0) => 0.0,
            (Aggregation::Mean, n) => acc / n as f64,
            _ => acc,
        }
    }
}

/// Shannon entropy with natural log and `0 · ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Entropy of the foreground entries renormalized to sum to one.
pub fn foreground_entropy(probs: &[f64]) -> f64 {
    let fg = &probs[..probs.len().saturating_sub(1)];
    let total: f64 = fg.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -fg.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            q * q.ln()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreOptions {
    pub aggregation: Aggregation,
    /// Score entropy over renormalized foreground classes instead of the full
    /// `C + 1` vector.
    pub entropy_foreground_only: bool,
}

pub fn entropy_score(record: &FrameScoreRecord, opts: &ScoreOptions) -> f64 {
    opts.aggregation.reduce(record.detections.iter().map(|d| {
        if opts.entropy_foreground_only {
            foreground_entropy(&d.probs)
        } else {
            entropy(&d.probs)
        }
    }))
}

/// Uncertainty of objectness: aggregate of `1 − objectness`.
pub fn confidence_score(record: &FrameScoreRecord, opts: &ScoreOptions) -> f64 {
    opts.aggregation
        .reduce(record.detections.iter().map(|d| 1.0 - d.objectness))
}

/// Trace of the per-class sample variance (divisor `N − 1`) of the
/// stochastic-pass probabilities. A single pass has zero variance.
pub fn pass_variance_trace(passes: &[Vec<f64>]) -> f64 {
    let n = passes.len();
    if n < 2 {
        return 0.0;
    }
    let dim = passes[0].len();
    (0..dim)
        .map(|k| {
            let mean = passes.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            passes.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        })
        .sum()
}

pub fn mc_variance_score(record: &FrameScoreRecord, opts: &ScoreOptions) -> Result<f64> {
    let passes = record.pass_probs.as_ref().ok_or_else(|| {
        Error::Selection(format!(
            "frame {} has no stochastic-pass probabilities for the montecarlo strategy",
            record.frame_id
        ))
    })?;
    if passes.len() != record.detections.len() {
        return Err(Error::Data(format!(
            "frame {}: {} pass lists for {} detections",
            record.frame_id,
            passes.len(),
            record.detections.len()
        )));
    }
    Ok(opts
        .aggregation
        .reduce(passes.iter().map(|p| pass_variance_trace(p))))
}
