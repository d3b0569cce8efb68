//! Query strategies: map detector outputs over the unlabeled pool to a batch
//! of frame ids.
//!
//! All strategies are pure functions of their inputs and seed. Records are
//! processed in ascending `frame_id` order regardless of how they are passed
//! in, and every tie is broken toward the smaller frame id.

mod badge;
mod coreset;
mod crb;
mod scores;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use badge::badge_select;
pub use coreset::{coreset_select, covering_radius, euclidean, k_center_greedy};
pub use crb::{
    crb_select, density_signature, geometric_balance_pick, smoothed_kl_to_uniform, tcrb_select, CrbParams,
    CrbStages,
};
pub use scores::{
    confidence_score, entropy, entropy_score, foreground_entropy, mc_variance_score, pass_variance_trace,
    Aggregation, ScoreOptions,
};

use crate::error::{Error, Result};
use crate::surrogate::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Entropy,
    Confidence,
    #[serde(rename = "montecarlo")]
    MonteCarlo,
    Coreset,
    Badge,
    Crb,
    Tcrb,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Confidence,
        Strategy::MonteCarlo,
        Strategy::Coreset,
        Strategy::Badge,
        Strategy::Crb,
        Strategy::Tcrb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Confidence => "confidence",
            Strategy::MonteCarlo => "montecarlo",
            Strategy::Coreset => "coreset",
            Strategy::Badge => "badge",
            Strategy::Crb => "crb",
            Strategy::Tcrb => "tcrb",
        }
    }

    pub fn needs_passes(self) -> bool {
        self == Strategy::MonteCarlo
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Detector output for one unlabeled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScoreRecord {
    pub frame_id: u64,
    pub sequence_id: u64,
    pub index_in_sequence: u64,
    pub detections: Vec<Detection>,
    /// Mean detection embedding; zeros when the frame has no detections.
    pub frame_embedding: Vec<f64>,
    /// Mean detection gradient embedding; zeros when empty.
    pub frame_grad_embedding: Vec<f64>,
    /// Per detection, per stochastic pass, the class probabilities.
    pub pass_probs: Option<Vec<Vec<Vec<f64>>>>,
}

/// Component-wise mean of `vectors`, or zeros of length `dim` when empty.
pub fn mean_vector<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
    }
    acc
}

impl FrameScoreRecord {
    /// Builds a record, deriving the frame-level embeddings. `embedding_dim`
    /// and `grad_dim` size the zero vectors of detection-free frames.
    pub fn new(
        frame_id: u64,
        sequence_id: u64,
        index_in_sequence: u64,
        detections: Vec<Detection>,
        pass_probs: Option<Vec<Vec<Vec<f64>>>>,
        embedding_dim: usize,
        grad_dim: usize,
    ) -> Self {
        let frame_embedding = mean_vector(detections.iter().map(|d| d.embedding.as_slice()), embedding_dim);
        let frame_grad_embedding = mean_vector(detections.iter().map(|d| d.grad_embedding.as_slice()), grad_dim);
        Self {
            frame_id,
            sequence_id,
            index_in_sequence,
            detections,
            frame_embedding,
            frame_grad_embedding,
            pass_probs,
        }
    }

    /// Histogram of predicted foreground classes.
    pub fn predicted_histogram(&self, num_classes: usize) -> Vec<usize> {
        crate::synthetic::box_class_histogram(self.detections.iter().map(|d| &d.bbox), num_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub round: usize,
    /// Selected frame ids in rank order.
    pub selected: Vec<u64>,
    /// Diagnostic score per frame (not necessarily only the selected ones).
    pub scores: BTreeMap<u64, f64>,
    /// Stage outputs, recorded by the CRB strategy.
    pub crb_stages: Option<CrbStages>,
}

impl SelectionResult {
    fn new(strategy: Strategy, round: usize) -> Self {
        Self {
            strategy,
            round,
            selected: Vec::new(),
            scores: BTreeMap::new(),
            crb_stages: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionParams {
    #[serde(flatten)]
    pub scoring: ScoreOptions,
    pub mc_passes: usize,
    pub mc_drop_rate: f64,
    pub crb: CrbParams,
    pub tcrb_window: usize,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            scoring: ScoreOptions::default(),
            mc_passes: 10,
            mc_drop_rate: 0.3,
            crb: CrbParams::default(),
            tcrb_window: 10,
        }
    }
}

/// Everything a strategy may look at besides the unlabeled records.
#[derive(Debug, Clone, Copy)]
pub struct SelectionInput<'a> {
    /// One record per unlabeled frame.
    pub records: &'a [FrameScoreRecord],
    /// Frame embeddings of the labeled pool (CoreSet distance anchor).
    pub labeled_embeddings: &'a [Vec<f64>],
    /// Per-class label counts of the labeled pool.
    pub labeled_hist: &'a [usize],
    pub num_classes: usize,
}

pub(crate) fn sorted_records(records: &[FrameScoreRecord]) -> Result<Vec<&FrameScoreRecord>> {
    let mut sorted: Vec<&FrameScoreRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.frame_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(Error::Data(format!("duplicate record for frame {}", w[0].frame_id)));
    }
    Ok(sorted)
}

pub(crate) fn check_budget(b: usize) -> Result<()> {
    if b == 0 {
        Err(Error::InvalidBudget("budget must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// Uniform sample of `min(b, |pool|)` ids without replacement.
pub fn random_select(pool_ids: &[u64], b: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(b)?;
    let unique: BTreeSet<u64> = pool_ids.iter().copied().collect();
    let mut ids: Vec<u64> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = b.min(ids.len());
    let (chosen, _) = ids.partial_shuffle(&mut rng, take);
    let mut result = SelectionResult::new(Strategy::Random, 0);
    result.selected = chosen.to_vec();
    Ok(result)
}

/// Ranks frames by a scalar score, highest first, ties to smaller id.
pub fn top_k(scores: &BTreeMap<u64, f64>, b: usize) -> Vec<u64> {
    let mut ranked: Vec<(u64, f64)> = scores.iter().map(|(&id, &s)| (id, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(b).map(|(id, _)| id).collect()
}

/// Dispatches to the requested strategy. Returns `min(b, |records|)`
/// distinct frame ids drawn from `input.records`.
pub fn select(
    strategy: Strategy,
    input: &SelectionInput<'_>,
    b: usize,
    seed: u64,
    round: usize,
    params: &AcquisitionParams,
) -> Result<SelectionResult> {
    check_budget(b)?;
    let records = sorted_records(input.records)?;
    let mut result = match strategy {
        Strategy::Random => {
            let ids: Vec<u64> = records.iter().map(|r| r.frame_id).collect();
            random_select(&ids, b, seed)?
        }
        Strategy::Entropy | Strategy::Confidence | Strategy::MonteCarlo => {
            let mut scores = BTreeMap::new();
            for r in &records {
                let s = match strategy {
                    Strategy::Entropy => entropy_score(r, &params.scoring),
                    Strategy::Confidence => confidence_score(r, &params.scoring),
                    _ => mc_variance_score(r, &params.scoring)?,
                };
                scores.insert(r.frame_id, s);
            }
            let mut res = SelectionResult::new(strategy, round);
            res.selected = top_k(&scores, b);
            res.scores = scores;
            res
        }
        Strategy::Coreset => coreset_select(input.records, input.labeled_embeddings, b)?,
        Strategy::Badge => badge_select(input.records, b, seed)?,
        Strategy::Crb => crb_select(input.records, input.labeled_hist, input.num_classes, b, &params.crb)?,
        Strategy::Tcrb => tcrb_select(
            input.records,
            input.labeled_hist,
            input.num_classes,
            b,
            params.tcrb_window,
            &params.crb,
        )?,
    };
    result.strategy = strategy;
    result.round = round;
    Ok(result)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use super::Strategy;
    use proptest::strategy::Strategy as _;
    use crate::geometry::Box3D;
    use proptest::prelude::*;

    pub(crate) fn det_with(probs: Vec<f64>, objectness: f64) -> Detection {
        let classes = probs.len() - 1;
        let fg = (0..classes)
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        Detection {
            bbox: Box3D::new([5.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0, fg),
            score: objectness,
            objectness,
            embedding: vec![0.0; 2],
            grad_embedding: vec![0.0; 2],
            probs,
            point_count: 10,
            distance: 5.0,
        }
    }

    pub(crate) fn record_with(frame_id: u64, detections: Vec<Detection>) -> FrameScoreRecord {
        FrameScoreRecord::new(frame_id, 0, frame_id, detections, None, 2, 2)
    }

    fn entropy_record(id: u64, score_target: f64) -> FrameScoreRecord {
        // Distribution (p, 1 − p) bisected to the requested entropy.
        let (mut lo, mut hi) = (1e-15, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if entropy(&[mid, 1.0 - mid]) < score_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        record_with(id, vec![det_with(vec![lo, 1.0 - lo], 1.0)])
    }

    fn input(records: &[FrameScoreRecord]) -> SelectionInput<'_> {
        SelectionInput {
            records,
            labeled_embeddings: &[],
            labeled_hist: &[0, 0],
            num_classes: 1,
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("greedy".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn entropy_top_k() {
        let recs = vec![entropy_record(0, 0.1), entropy_record(1, 0.6), entropy_record(2, 0.5)];
        let p = AcquisitionParams::default();
        let r = select(Strategy::Entropy, &input(&recs), 2, 0, 0, &p).unwrap();
        assert_eq!(r.selected, vec![1, 2]);
        let all = select(Strategy::Entropy, &input(&recs), 10, 0, 0, &p).unwrap();
        assert_eq!(all.selected.len(), 3);
    }

    #[test]
    fn ties_go_to_smaller_ids() {
        let recs: Vec<FrameScoreRecord> = [7, 3, 9, 5].iter().map(|&id| record_with(id, vec![])).collect();
        let p = AcquisitionParams::default();
        let r = select(Strategy::Confidence, &input(&recs), 2, 0, 0, &p).unwrap();
        assert_eq!(r.selected, vec![3, 5]);
    }

    #[test]
    fn montecarlo_without_passes_is_an_error() {
        let recs = vec![record_with(0, vec![det_with(vec![0.5, 0.5], 0.5)])];
        let p = AcquisitionParams::default();
        assert!(select(Strategy::MonteCarlo, &input(&recs), 1, 0, 0, &p).is_err());
    }

    #[test]
    fn random_sampling() {
        let ids: Vec<u64> = (0..20).collect();
        assert!(matches!(random_select(&ids, 0, 1), Err(Error::InvalidBudget(_))));
        let mut all = random_select(&ids, 20, 1).unwrap().selected;
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(random_select(&ids, 5, 3).unwrap(), random_select(&ids, 5, 3).unwrap());
        assert_ne!(random_select(&ids, 5, 3).unwrap().selected, random_select(&ids, 5, 4).unwrap().selected);
    }

    #[test]
    fn duplicate_records_are_rejected() {
        let recs = vec![record_with(1, vec![]), record_with(1, vec![])];
        let p = AcquisitionParams::default();
        assert!(select(Strategy::Entropy, &input(&recs), 1, 0, 0, &p).is_err());
    }

    fn arb_records() -> impl proptest::strategy::Strategy<Value = Vec<FrameScoreRecord>> {
        proptest::collection::vec(
            (0u64..4, proptest::collection::vec((0.01f64..1.0, 0.0f64..1.0, 0.0f64..60.0, 1usize..200), 0..4)),
            1..25,
        )
        .prop_map(|frames| {
            frames
                .into_iter()
                .enumerate()
                .map(|(i, (seq, dets))| {
                    let detections: Vec<Detection> = dets
                        .into_iter()
                        .map(|(p, obj, dist, n)| {
                            let mut d = det_with(vec![p / 2.0, 1.0 - p, p / 2.0], obj);
                            d.embedding = vec![p, dist / 60.0];
                            d.grad_embedding = vec![p - 0.5, obj, dist / 30.0];
                            d.distance = dist;
                            d.point_count = n;
                            d
                        })
                        .collect();
                    let passes = detections
                        .iter()
                        .map(|d| vec![d.probs.clone(), vec![1.0 / 3.0; 3]])
                        .collect();
                    FrameScoreRecord::new(i as u64 * 3 + 1, seq, i as u64, detections, Some(passes), 2, 3)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn every_strategy_returns_distinct_pool_ids(records in arb_records(), b in 1usize..30, seed in 0u64..1000) {
            let pool: BTreeSet<u64> = records.iter().map(|r| r.frame_id).collect();
            let labeled = vec![vec![0.1, 0.2]];
            let input = SelectionInput {
                records: &records,
                labeled_embeddings: &labeled,
                labeled_hist: &[5, 1],
                num_classes: 2,
            };
            let params = AcquisitionParams { tcrb_window: 1, ..AcquisitionParams::default() };
            for s in Strategy::ALL {
                let r = select(s, &input, b, seed, 0, &params).unwrap();
                let set: BTreeSet<u64> = r.selected.iter().copied().collect();
                prop_assert_eq!(set.len(), r.selected.len(), "{} duplicated ids", s);
                prop_assert!(set.is_subset(&pool));
                prop_assert_eq!(r.selected.len(), b.min(pool.len()), "{} size", s);
                let again = select(s, &input, b, seed, 0, &params).unwrap();
                prop_assert_eq!(&r, &again);
            }
        }

        #[test]
        fn entropy_score_is_bounded(raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..6)) {
            let dets: Vec<Detection> = raw.into_iter().map(|mut v| {
                v[0] += 1e-3;
                let s: f64 = v.iter().sum();
                det_with(v.into_iter().map(|x| x / s).collect(), 0.5)
            }).collect();
            let h = entropy_score(&record_with(0, dets), &ScoreOptions::default());
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
        }
    }
}
