//! A small trainable 3D detector.
//!
//! Proposals come from 8-connected components of a BEV occupancy grid over
//! the above-ground points. Each proposal is described by eight handcrafted
//! features and classified by a softmax-linear model over `C + 1` outputs,
//! the last of which is background. The model exposes everything the
//! acquisition strategies consume: class probabilities, objectness, gradient
//! embeddings at the pseudo-label, and stochastic (feature-dropout) passes.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, Box3D};
use crate::synthetic::{derive_seed, Frame};

/// Number of handcrafted candidate features.
pub const FEATURE_DIM: usize = 8;
/// Feature vector augmented with a constant 1 for the bias column.
pub const AUGMENTED_DIM: usize = FEATURE_DIM + 1;
/// Candidate-to-ground-truth BEV IoU needed for a foreground training label.
pub const TRAIN_MATCH_IOU: f64 = 0.3;
pub const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalParams {
    pub grid_cell: f64,
    pub min_cluster_points: usize,
    /// Points at or below this height are treated as ground.
    pub ground_threshold: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            grid_cell: 0.5,
            min_cluster_points: 5,
            ground_threshold: 0.25,
        }
    }
}

/// One object proposal. `feature` holds the raw (unstandardized) values
/// `[ln(1+n), l, w, h, mean z, mean reflectance, BEV distance, l·w]`; the
/// model standardizes them with its own statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: Box3D,
    pub feature: [f64; FEATURE_DIM],
    pub point_count: usize,
}

fn fit_candidate(xs: &[[f64; 4]]) -> Candidate {
    let n = xs.len() as f64;
    let mut mean = [0.0; 4];
    for p in xs {
        for k in 0..4 {
            mean[k] += p[k] / n;
        }
    }
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    let (mut zmin, mut zmax) = (f64::MAX, f64::MIN);
    for p in xs {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        cxx += dx * dx / n;
        cyy += dy * dy / n;
        cxy += dx * dy / n;
        zmin = zmin.min(p[2]);
        zmax = zmax.max(p[2]);
    }
    let yaw = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let (s, c) = yaw.sin_cos();
    let (mut vu, mut vv) = (0.0, 0.0);
    for p in xs {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        vu += u * u / n;
        vv += v * v / n;
    }
    let l = (2.5 * vu.sqrt()).clamp(0.3, 20.0);
    let w = (2.5 * vv.sqrt()).clamp(0.3, 20.0);
    let h = (zmax - zmin).max(0.1);
    let bbox = Box3D::new([mean[0], mean[1], (zmin + zmax) / 2.0], [l, w, h], yaw, 0);
    let distance = mean[0].hypot(mean[1]);
    Candidate {
        bbox,
        feature: [(1.0 + n).ln(), l, w, h, mean[2], mean[3], distance, l * w],
        point_count: xs.len(),
    }
}

/// Clusters the above-ground points of `frame` into object proposals,
/// largest first, at most [`MAX_CANDIDATES`].
pub fn propose(frame: &Frame, params: &ProposalParams) -> Vec<Candidate> {
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in frame.cloud.points.iter().enumerate() {
        if p.z > params.ground_threshold {
            let key = (
                (p.x / params.grid_cell).floor() as i64,
                (p.y / params.grid_cell).floor() as i64,
            );
            cells.entry(key).or_default().push(i);
        }
    }
    let mut visited: BTreeMap<(i64, i64), bool> = cells.keys().map(|k| (*k, false)).collect();
    let mut candidates = Vec::new();
    for &start in cells.keys() {
        if visited[&start] {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start, true);
        while let Some((cx, cy)) = queue.pop_front() {
            members.extend_from_slice(&cells[&(cx, cy)]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let nb = (cx + dx, cy + dy);
                    if let Some(seen) = visited.get_mut(&nb) {
                        if !*seen {
                            *seen = true;
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        if members.len() >= params.min_cluster_points {
            members.sort_unstable();
            let xs: Vec<[f64; 4]> = members
                .iter()
                .map(|&i| {
                    let p = &frame.cloud.points[i];
                    [p.x, p.y, p.z, p.reflectance]
                })
                .collect();
            candidates.push(fit_candidate(&xs));
        }
    }
    // Stable sort keeps grid order among equal sizes.
    candidates.sort_by_key(|c| std::cmp::Reverse(c.point_count));
    candidates.truncate(MAX_CANDIDATES);
    candidates
}

/// A labeled training example: raw candidate features and the class index
/// (`num_classes` denotes background).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub feature: [f64; FEATURE_DIM],
    pub label: usize,
}

/// Labels each candidate with the class of its best-overlapping ground-truth
/// box when that BEV IoU reaches [`TRAIN_MATCH_IOU`], background otherwise.
pub fn label_candidates(candidates: &[Candidate], gts: &[Box3D], num_classes: usize) -> Vec<TrainingSample> {
    candidates
        .iter()
        .map(|c| {
            let best = gts
                .iter()
                .map(|g| (bev_iou(&c.bbox, g), g.class_id))
                .fold(None::<(f64, usize)>, |acc, cur| match acc {
                    Some(a) if a.0 >= cur.0 => Some(a),
                    _ => Some(cur),
                });
            let label = match best {
                Some((iou, class)) if iou >= TRAIN_MATCH_IOU => class,
                _ => num_classes,
            };
            TrainingSample {
                feature: c.feature,
                label,
            }
        })
        .collect()
}

/// Output of the detector for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Box with `class_id` set to the most likely foreground class.
    pub bbox: Box3D,
    /// Probabilities over `C` foreground classes followed by background.
    pub probs: Vec<f64>,
    pub objectness: f64,
    /// Ranking score for evaluation: objectness × max foreground probability.
    pub score: f64,
    /// Standardized candidate features.
    pub embedding: Vec<f64>,
    /// Gradient of the cross-entropy at the pseudo-label with respect to the
    /// output-layer weights, flattened row-major.
    pub grad_embedding: Vec<f64>,
    pub point_count: usize,
    pub distance: f64,
}

impl Detection {
    /// A perfectly confident detection that echoes a ground-truth box.
    pub fn oracle(bbox: Box3D, num_classes: usize) -> Self {
        let mut probs = vec![0.0; num_classes + 1];
        probs[bbox.class_id] = 1.0;
        Self {
            bbox,
            probs,
            objectness: 1.0,
            score: 1.0,
            embedding: Vec::new(),
            grad_embedding: Vec::new(),
            point_count: 0,
            distance: crate::geometry::box_distance(&bbox),
        }
    }

    /// Index of the most likely foreground class.
    pub fn predicted_class(&self) -> usize {
        self.bbox.class_id
    }
}

/// Softmax-linear model state: weights of shape `(C+1) × (F+1)` stored
/// row-major, bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub num_classes: usize,
    pub weights: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Cumulative mini-batch updates.
    pub train_steps: u64,
    /// Cumulative number of training examples visited.
    pub candidate_visits: u64,
    pub rng_stream_id: u64,
    pub trained: bool,
}

impl ModelState {
    pub fn new(num_classes: usize, rng_stream_id: u64) -> Self {
        Self {
            num_classes,
            weights: vec![0.0; (num_classes + 1) * AUGMENTED_DIM],
            feature_mean: vec![0.0; FEATURE_DIM],
            feature_std: vec![1.0; FEATURE_DIM],
            train_steps: 0,
            candidate_visits: 0,
            rng_stream_id,
            trained: false,
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.num_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.num_classes >= 1
            && self.weights.len() == self.num_outputs() * AUGMENTED_DIM
            && self.feature_mean.len() == FEATURE_DIM
            && self.feature_std.len() == FEATURE_DIM
            && self.weights.iter().all(|w| w.is_finite())
            && self.feature_mean.iter().all(|m| m.is_finite())
            && self.feature_std.iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Data("inconsistent model state".into()))
        }
    }

    /// Standardized features with a trailing 1.
    pub fn augment(&self, raw: &[f64; FEATURE_DIM]) -> [f64; AUGMENTED_DIM] {
        let mut x = [1.0; AUGMENTED_DIM];
        for k in 0..FEATURE_DIM {
            x[k] = (raw[k] - self.feature_mean[k]) / self.feature_std[k];
        }
        x
    }

    pub fn probabilities(&self, x: &[f64; AUGMENTED_DIM]) -> Vec<f64> {
        softmax_logits(&self.weights, self.num_outputs(), x)
    }
}

fn softmax_logits(weights: &[f64], outputs: usize, x: &[f64; AUGMENTED_DIM]) -> Vec<f64> {
    let mut z: Vec<f64> = weights
        .chunks_exact(AUGMENTED_DIM)
        .take(outputs)
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect();
    softmax_in_place(&mut z);
    z
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy over `(x, label)` pairs plus `l2/2 · ‖W‖²` over the
/// non-bias weights, and its gradient with respect to `weights`.
pub fn loss_and_gradient(
    weights: &[f64],
    outputs: usize,
    xs: &[[f64; AUGMENTED_DIM]],
    labels: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let n = xs.len().max(1) as f64;
    for (x, &y) in xs.iter().zip(labels) {
        let p = softmax_logits(weights, outputs, x);
        loss -= p[y].max(f64::MIN_POSITIVE).ln() / n;
        for (k, pk) in p.iter().enumerate() {
            let coeff = (pk - if k == y { 1.0 } else { 0.0 }) / n;
            let row = &mut grad[k * AUGMENTED_DIM..(k + 1) * AUGMENTED_DIM];
            for (g, v) in row.iter_mut().zip(x) {
                *g += coeff * v;
            }
        }
    }
    for k in 0..outputs {
        for j in 0..FEATURE_DIM {
            let i = k * AUGMENTED_DIM + j;
            loss += 0.5 * l2 * weights[i] * weights[i];
            grad[i] += l2 * weights[i];
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// Keep the weights and frozen feature statistics of a trained model.
    pub resume: bool,
    pub batch_size: usize,
    pub lr_decay: f64,
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.1,
            resume: false,
            batch_size: 32,
            lr_decay: 0.95,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    /// Full-data objective before the first epoch and after every epoch.
    pub epoch_losses: Vec<f64>,
    /// Examples visited by this call.
    pub candidate_visits: u64,
    /// Mini-batch updates performed by this call.
    pub steps: u64,
}

/// Proposes and labels candidates for every frame.
pub fn training_samples(frames: &[&Frame], num_classes: usize, proposal: &ProposalParams) -> Vec<TrainingSample> {
    frames
        .iter()
        .flat_map(|f| label_candidates(&propose(f, proposal), &f.gt_boxes, num_classes))
        .collect()
}

/// Trains on the candidates of `labeled` frames; see [`train_samples`].
pub fn train(
    model: &ModelState,
    labeled: &[&Frame],
    params: &TrainParams,
    proposal: &ProposalParams,
) -> Result<TrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::NoCandidates { frames: 0 });
    }
    let samples = training_samples(labeled, model.num_classes, proposal);
    if samples.is_empty() {
        return Err(Error::NoCandidates {
            frames: labeled.len(),
        });
    }
    train_samples(model, &samples, params)
}

/// Mini-batch gradient descent on the softmax-linear objective.
///
/// Unless `params.resume` is set, the feature standardization is refit to
/// `samples`. Each epoch shuffles with a stream derived from
/// `(rng_stream_id, train_steps)`, so the result is fully determined by the
/// inputs and a resumed model continues on fresh shuffles.
pub fn train_samples(model: &ModelState, samples: &[TrainingSample], params: &TrainParams) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::NoCandidates { frames: 0 });
    }
    if params.resume && !model.trained {
        return Err(Error::Untrained);
    }
    if params.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            epoch_losses: Vec::new(),
            candidate_visits: 0,
            steps: 0,
        });
    }
    if params.batch_size == 0 || !(params.lr > 0.0) {
        return Err(Error::Config("batch_size and lr must be positive".into()));
    }
    let outputs = model.num_outputs();
    if let Some(bad) = samples.iter().find(|s| s.label >= outputs) {
        return Err(Error::Data(format!("training label {} out of range", bad.label)));
    }
    let mut m = model.clone();
    if !params.resume {
        let n = samples.len() as f64;
        for k in 0..FEATURE_DIM {
            let mean = samples.iter().map(|s| s.feature[k]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.feature[k] - mean).powi(2)).sum::<f64>() / n;
            m.feature_mean[k] = mean;
            m.feature_std[k] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
    }
    let xs: Vec<[f64; AUGMENTED_DIM]> = samples.iter().map(|s| m.augment(&s.feature)).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

    let mut epoch_losses = vec![loss_and_gradient(&m.weights, outputs, &xs, &labels, params.l2).0];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let (mut visits, mut steps) = (0u64, 0u64);
    let mut lr = params.lr;
    let mut bx = Vec::with_capacity(params.batch_size);
    let mut by = Vec::with_capacity(params.batch_size);
    for _ in 0..params.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(m.rng_stream_id, &[m.train_steps]));
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(batch.iter().map(|&i| xs[i]));
            by.extend(batch.iter().map(|&i| labels[i]));
            let (_, grad) = loss_and_gradient(&m.weights, outputs, &bx, &by, params.l2);
            for (w, g) in m.weights.iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            m.train_steps += 1;
            steps += 1;
            visits += batch.len() as u64;
        }
        lr *= params.lr_decay;
        epoch_losses.push(loss_and_gradient(&m.weights, outputs, &xs, &labels, params.l2).0);
    }
    m.candidate_visits += visits;
    m.trained = true;
    Ok(TrainOutcome {
        model: m,
        epoch_losses,
        candidate_visits: visits,
        steps,
    })
}

fn detection_from_probs(model: &ModelState, c: &Candidate, x: &[f64; AUGMENTED_DIM], probs: Vec<f64>) -> Detection {
    let classes = model.num_classes;
    let (fg_class, fg_prob) = probs[..classes]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
    let pseudo = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc })
        .0;
    let objectness = (1.0 - probs[classes]).clamp(0.0, 1.0);
    let mut grad_embedding = Vec::with_capacity(probs.len() * AUGMENTED_DIM);
    for (k, p) in probs.iter().enumerate() {
        let coeff = p - if k == pseudo { 1.0 } else { 0.0 };
        grad_embedding.extend(x.iter().map(|v| coeff * v));
    }
    let mut bbox = c.bbox;
    bbox.class_id = fg_class;
    Detection {
        bbox,
        score: objectness * fg_prob,
        objectness,
        probs,
        embedding: x[..FEATURE_DIM].to_vec(),
        grad_embedding,
        point_count: c.point_count,
        distance: c.feature[6],
    }
}

/// Runs the classifier over precomputed candidates.
pub fn infer_candidates(model: &ModelState, candidates: &[Candidate]) -> Vec<Detection> {
    candidates
        .iter()
        .map(|c| {
            let x = model.augment(&c.feature);
            let probs = model.probabilities(&x);
            detection_from_probs(model, c, &x, probs)
        })
        .collect()
}

pub fn infer(model: &ModelState, frame: &Frame, proposal: &ProposalParams) -> Vec<Detection> {
    infer_candidates(model, &propose(frame, proposal))
}

/// A deterministic detection together with the probabilities of each
/// stochastic pass.
pub type StochasticDetection = (Detection, Vec<Vec<f64>>);

/// Feature-dropout passes over precomputed candidates. Each pass draws its
/// masks from a stream derived from `(rng_stream_id, frame_id, pass)`.
pub fn infer_stochastic_candidates(
    model: &ModelState,
    frame_id: u64,
    candidates: &[Candidate],
    passes: usize,
    drop_rate: f64,
) -> Result<Vec<StochasticDetection>> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::Config(format!("drop_rate {drop_rate} outside [0, 1)")));
    }
    let base = infer_candidates(model, candidates);
    let xs: Vec<[f64; AUGMENTED_DIM]> = candidates.iter().map(|c| model.augment(&c.feature)).collect();
    let mut per_pass: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(passes); candidates.len()];
    let keep_scale = 1.0 / (1.0 - drop_rate);
    for pass in 0..passes as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.rng_stream_id, &[frame_id, pass]));
        for (i, x) in xs.iter().enumerate() {
            let mut masked = *x;
            if drop_rate > 0.0 {
                for v in masked[..FEATURE_DIM].iter_mut() {
                    if rng.random::<f64>() < drop_rate {
                        *v = 0.0;
                    } else {
                        *v *= keep_scale;
                    }
                }
            }
            per_pass[i].push(model.probabilities(&masked));
        }
    }
    Ok(base.into_iter().zip(per_pass).collect())
}

pub fn infer_stochastic(
    model: &ModelState,
    frame: &Frame,
    proposal: &ProposalParams,
    passes: usize,
    drop_rate: f64,
) -> Result<Vec<StochasticDetection>> {
    infer_stochastic_candidates(model, frame.frame_id, &propose(frame, proposal), passes, drop_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, PointCloud};
    use crate::synthetic::{generate_dataset, SceneConfig};

    fn frame_with(points: Vec<Point>) -> Frame {
        Frame {
            frame_id: 0,
            sequence_id: 0,
            index_in_sequence: 0,
            cloud: PointCloud::new(points),
            gt_boxes: Vec::new(),
            track_ids: Vec::new(),
        }
    }

    fn blob(cx: f64, cy: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n)
            .map(|_| {
                Point::new(
                    cx + rng.random_range(-0.6..0.6),
                    cy + rng.random_range(-0.4..0.4),
                    rng.random_range(0.4..1.5),
                    0.5,
                )
            })
            .collect()
    }

    // Reference connected components: union-find over occupied cells with
    // an explicit all-pairs adjacency scan.
    fn brute_force_components(frame: &Frame, p: &ProposalParams) -> usize {
        let mut cells: Vec<((i64, i64), usize)> = Vec::new();
        for pt in frame.cloud.points.iter().filter(|q| q.z > p.ground_threshold) {
            let key = ((pt.x / p.grid_cell).floor() as i64, (pt.y / p.grid_cell).floor() as i64);
            match cells.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += 1,
                None => cells.push((key, 1)),
            }
        }
        let mut parent: Vec<usize> = (0..cells.len()).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                i = parent[i];
            }
            i
        }
        for i in 0..cells.len() {
            for j in 0..cells.len() {
                let (a, b) = (cells[i].0, cells[j].0);
                if (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1 {
                    let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..cells.len() {
            let r = root(&mut parent, i);
            *sizes.entry(r).or_default() += cells[i].1;
        }
        sizes.values().filter(|&&n| n >= p.min_cluster_points).count()
    }

    #[test]
    fn proposals_from_clusters() {
        let p = ProposalParams::default();
        assert!(propose(&frame_with(Vec::new()), &p).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = frame_with(blob(5.0, 5.0, 50, &mut rng));
        let cands = propose(&one, &p);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].point_count, 50);
        assert!((cands[0].bbox.center[0] - 5.0).abs() < 0.2);

        let mut pts = blob(0.0, 0.0, 40, &mut rng);
        pts.extend(blob(10.0, 0.0, 30, &mut rng));
        let two = frame_with(pts);
        assert_eq!(brute_force_components(&two, &p), 2);
        let cands = propose(&two, &p);
        assert_eq!(cands.len(), 2);
        assert_eq!(cands[0].point_count, 40);
    }

    #[test]
    fn proposals_match_reference_components_on_scenes() {
        let p = ProposalParams::default();
        let cfg = SceneConfig {
            num_sequences: 3,
            frames_per_sequence: 2,
            ..SceneConfig::default()
        };
        for f in generate_dataset(&cfg).unwrap() {
            let expected = brute_force_components(&f, &p).min(MAX_CANDIDATES);
            assert_eq!(propose(&f, &p).len(), expected);
        }
    }

    #[test]
    fn ground_points_and_small_clusters_ignored() {
        let p = ProposalParams::default();
        let mut pts: Vec<Point> = (0..100).map(|i| Point::new(i as f64 * 0.1, 0.0, 0.0, 0.1)).collect();
        pts.extend((0..4).map(|i| Point::new(20.0 + 0.01 * i as f64, 0.0, 1.0, 0.1)));
        assert!(propose(&frame_with(pts), &p).is_empty());
    }

    fn random_model(seed: u64, classes: usize) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ModelState::new(classes, seed);
        for w in m.weights.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        m.trained = true;
        m
    }

    fn candidate(feature: [f64; FEATURE_DIM]) -> Candidate {
        Candidate {
            bbox: Box3D::new([1.0, 2.0, 0.8], [4.0, 2.0, 1.6], 0.0, 0),
            feature,
            point_count: 20,
        }
    }

    #[test]
    fn inference_outputs_are_normalized() {
        let m = random_model(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let f: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let d = &infer_candidates(&m, &[candidate(f)])[0];
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.probs.iter().all(|p| *p >= 0.0));
            assert!((0.0..=1.0).contains(&d.objectness));
            assert_eq!(d.grad_embedding.len(), 4 * AUGMENTED_DIM);
            assert!(d.bbox.class_id < 3);
        }
    }

    #[test]
    fn uniform_probs_give_three_quarter_objectness() {
        let m = ModelState::new(3, 0);
        let d = &infer_candidates(&m, &[candidate([0.5; FEATURE_DIM])])[0];
        assert!(d.probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!((d.objectness - 0.75).abs() < 1e-15);
    }

    #[test]
    fn confident_detection_has_zero_gradient_embedding() {
        // Huge logit on class 1 saturates the softmax to exactly one-hot.
        let mut m = ModelState::new(2, 0);
        m.weights[AUGMENTED_DIM + FEATURE_DIM] = 1e4;
        let d = &infer_candidates(&m, &[candidate([0.0; FEATURE_DIM])])[0];
        assert_eq!(d.probs[1], 1.0);
        assert!(d.grad_embedding.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_embedding_norm_grows_toward_uniform() {
        let norm_for = |t: f64| {
            // Interpolate logits toward zero: probs move toward uniform.
            let mut m = ModelState::new(3, 0);
            m.feature_std = vec![1.0; FEATURE_DIM];
            m.weights[AUGMENTED_DIM * 2 + FEATURE_DIM] = 6.0 * (1.0 - t);
            let c = Candidate {
                feature: [1.0; FEATURE_DIM],
                ..candidate([0.0; FEATURE_DIM])
            };
            let d = &infer_candidates(&m, &[c])[0];
            d.grad_embedding.iter().map(|g| g * g).sum::<f64>().sqrt()
        };
        let mut prev = norm_for(0.0);
        for step in 1..=10 {
            let cur = norm_for(step as f64 / 10.0);
            assert!(cur > prev, "step {step}: {cur} <= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let outputs = 3 + trial % 2;
            let weights: Vec<f64> = (0..outputs * AUGMENTED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xs: Vec<[f64; AUGMENTED_DIM]> = (0..6)
                .map(|_| {
                    let mut x: [f64; AUGMENTED_DIM] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
                    x[FEATURE_DIM] = 1.0;
                    x
                })
                .collect();
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..outputs)).collect();
            let (_, grad) = loss_and_gradient(&weights, outputs, &xs, &labels, 1e-2);
            let h = 1e-5;
            let mut num = vec![0.0; weights.len()];
            for i in 0..weights.len() {
                let mut wp = weights.clone();
                let mut wm = weights.clone();
                wp[i] += h;
                wm[i] -= h;
                num[i] = (loss_and_gradient(&wp, outputs, &xs, &labels, 1e-2).0
                    - loss_and_gradient(&wm, outputs, &xs, &labels, 1e-2).0)
                    / (2.0 * h);
            }
            let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / scale < 1e-4, "trial {trial}: rel err {}", diff / scale);
        }
    }

    fn separable_samples(n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let mut feature: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                feature[1] = sign * rng.random_range(0.5..2.0);
                TrainingSample { feature, label }
            })
            .collect()
    }

    fn accuracy(m: &ModelState, samples: &[TrainingSample]) -> f64 {
        let correct = samples
            .iter()
            .filter(|s| {
                let p = m.probabilities(&m.augment(&s.feature));
                let arg = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
                arg == s.label
            })
            .count();
        correct as f64 / samples.len() as f64
    }

    #[test]
    fn separable_data_is_learned() {
        let samples = separable_samples(200, 2);
        let params = TrainParams::default();
        let out = train_samples(&ModelState::new(2, 7), &samples, &params).unwrap();
        assert!(accuracy(&out.model, &samples) >= 0.95);
        assert_eq!(out.model.train_steps, 50 * 7);
        assert_eq!(out.candidate_visits, 50 * 200);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let samples = separable_samples(40, 3);
        let m = ModelState::new(2, 1);
        let out = train_samples(&m, &samples, &TrainParams { epochs: 0, ..TrainParams::default() }).unwrap();
        assert_eq!(out.model, m);
    }

    #[test]
    fn training_is_deterministic() {
        let samples = separable_samples(100, 4);
        let params = TrainParams { epochs: 5, ..TrainParams::default() };
        let a = train_samples(&ModelState::new(2, 9), &samples, &params).unwrap();
        let b = train_samples(&ModelState::new(2, 9), &samples, &params).unwrap();
        assert_eq!(a.model.weights, b.model.weights);
        let c = train_samples(&ModelState::new(2, 10), &samples, &params).unwrap();
        assert_ne!(a.model.weights, c.model.weights);
    }

    #[test]
    fn loss_is_non_increasing_at_small_lr() {
        let samples = separable_samples(300, 5);
        let params = TrainParams {
            epochs: 50,
            lr: 0.01,
            ..TrainParams::default()
        };
        let out = train_samples(&ModelState::new(2, 3), &samples, &params).unwrap();
        for w in out.epoch_losses.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn resume_requires_trained_model_and_freezes_statistics() {
        let samples = separable_samples(60, 6);
        let resume = TrainParams { epochs: 2, resume: true, ..TrainParams::default() };
        assert!(matches!(train_samples(&ModelState::new(2, 0), &samples, &resume), Err(Error::Untrained)));
        let first = train_samples(&ModelState::new(2, 0), &samples, &TrainParams { epochs: 2, ..TrainParams::default() })
            .unwrap()
            .model;
        let shifted: Vec<TrainingSample> = samples
            .iter()
            .map(|s| TrainingSample {
                feature: s.feature.map(|v| v + 5.0),
                label: s.label,
            })
            .collect();
        let resumed = train_samples(&first, &shifted, &resume).unwrap().model;
        assert_eq!(resumed.feature_mean, first.feature_mean);
        assert_eq!(resumed.feature_std, first.feature_std);
        assert!(resumed.train_steps > first.train_steps);
    }

    #[test]
    fn train_errors_without_candidates() {
        let m = ModelState::new(2, 0);
        let empty = frame_with(Vec::new());
        let err = train(&m, &[&empty], &TrainParams::default(), &ProposalParams::default()).unwrap_err();
        assert!(matches!(err, Error::NoCandidates { frames: 1 }));
    }

    #[test]
    fn stochastic_passes() {
        let m = random_model(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cands: Vec<Candidate> = (0..4)
            .map(|_| candidate(std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
            .collect();
        let plain = infer_candidates(&m, &cands);
        let none = infer_stochastic_candidates(&m, 5, &cands, 10, 0.0).unwrap();
        for ((det, passes), base) in none.iter().zip(&plain) {
            assert_eq!(det, base);
            assert_eq!(passes.len(), 10);
            assert!(passes.iter().all(|p| *p == base.probs));
        }
        let a = infer_stochastic_candidates(&m, 5, &cands, 10, 0.3).unwrap();
        let b = infer_stochastic_candidates(&m, 5, &cands, 10, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|(d, passes)| passes.iter().any(|p| *p != d.probs)));
        for (_, passes) in &a {
            for p in passes {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(infer_stochastic_candidates(&m, 5, &cands, 2, 1.0).is_err());
    }
}
