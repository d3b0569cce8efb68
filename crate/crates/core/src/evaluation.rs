//! Per-class average precision from confidence-ranked IoU matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_3d, Box3D};
use crate::surrogate::{infer, Detection, ModelState, ProposalParams};
use crate::synthetic::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IouKind {
    #[default]
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_kind: IouKind,
    /// Threshold for every class without an entry in `class_thresholds`.
    pub iou_threshold: f64,
    /// Optional per-class overrides, indexed by class id.
    pub class_thresholds: Vec<f64>,
    pub recall_points: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_kind: IouKind::Bev,
            iou_threshold: 0.5,
            class_thresholds: Vec::new(),
            recall_points: 40,
        }
    }
}

impl MatchConfig {
    pub fn threshold(&self, class_id: usize) -> f64 {
        self.class_thresholds.get(class_id).copied().unwrap_or(self.iou_threshold)
    }

    pub fn validate(&self) -> Result<()> {
        let valid = |t: f64| t > 0.0 && t <= 1.0;
        if !valid(self.iou_threshold) || !self.class_thresholds.iter().all(|&t| valid(t)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.recall_points == 0 {
            return Err(Error::Config("recall_points must be >= 1".into()));
        }
        Ok(())
    }

    fn iou(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self.iou_kind {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

/// Marks each detection as a true positive (`true`) or false positive.
///
/// Per class, detections are visited by descending score (ties by smaller
/// index) and each claims the still-unmatched ground-truth box of the same
/// class with the highest IoU at or above the class threshold.
pub fn match_frame(dets: &[Detection], gts: &[Box3D], cfg: &MatchConfig) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut gt_taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order {
        let class = dets[i].bbox.class_id;
        let threshold = cfg.threshold(class);
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if gt_taken[j] || gt.class_id != class {
                continue;
            }
            let iou = cfg.iou(&dets[i].bbox, gt);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            gt_taken[j] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Interpolated AP over `points` recall levels `k / points`, `k = 1..=points`:
/// each level contributes the best precision reached at a recall no lower
/// than it (zero if never reached). `scored` holds `(score, is_tp)` pairs;
/// equal scores keep their input order.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize, points: usize) -> f64 {
    if num_gt == 0 || points == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    // best[k] = max precision over prefixes whose recall reaches (k+1)/points.
    let mut best = vec![0.0f64; points];
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        let precision = tp as f64 / (rank + 1) as f64;
        // Recall levels reached exactly: k·num_gt ≤ tp·points.
        let reached = (tp * points / num_gt).min(points);
        for b in best.iter_mut().take(reached) {
            if precision > *b {
                *b = precision;
            }
        }
    }
    best.iter().sum::<f64>() / points as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP per class; `None` for classes without ground truth.
    pub ap: Vec<Option<f64>>,
    /// Unweighted mean AP over classes with at least one ground-truth box;
    /// zero when no class has any.
    pub map: f64,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
    pub num_gt: Vec<usize>,
}

/// Scores detections against ground truth, one `(detections, gt)` pair per frame.
pub fn evaluate_detections(
    frames: &[(Vec<Detection>, Vec<Box3D>)],
    num_classes: usize,
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test set".into()));
    }
    let flags: Vec<Vec<bool>> = frames.par_iter().map(|(d, g)| match_frame(d, g, cfg)).collect();

    let mut scored: Vec<Vec<(f64, bool)>> = vec![Vec::new(); num_classes];
    let mut num_gt = vec![0usize; num_classes];
    for ((dets, gts), tp) in frames.iter().zip(&flags) {
        for (d, &t) in dets.iter().zip(tp) {
            if let Some(s) = scored.get_mut(d.bbox.class_id) {
                s.push((d.score, t));
            }
        }
        for g in gts {
            if g.class_id < num_classes {
                num_gt[g.class_id] += 1;
            }
        }
    }

    let tp: Vec<usize> = scored.iter().map(|s| s.iter().filter(|x| x.1).count()).collect();
    let fp: Vec<usize> = scored.iter().zip(&tp).map(|(s, t)| s.len() - t).collect();
    let fn_: Vec<usize> = num_gt.iter().zip(&tp).map(|(g, t)| g - t).collect();
    let ap: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (num_gt[c] > 0).then(|| average_precision(&scored[c], num_gt[c], cfg.recall_points)))
        .collect();
    let present: Vec<f64> = ap.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalReport {
        ap,
        map,
        tp,
        fp,
        fn_,
        num_gt,
    })
}

/// Runs the surrogate detector on every test frame and scores the result.
pub fn evaluate(
    model: &ModelState,
    test_frames: &[&Frame],
    proposal: &ProposalParams,
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    if !model.trained {
        return Err(Error::Untrained);
    }
    let pairs: Vec<(Vec<Detection>, Vec<Box3D>)> = test_frames
        .par_iter()
        .map(|f| (infer(model, f, proposal), f.gt_boxes.clone()))
        .collect();
    evaluate_detections(&pairs, model.num_classes, cfg)
}
