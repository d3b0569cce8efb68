//! Three-stage CRB filter (label conciseness, gradient representativeness,
//! geometric balance) and its temporal variant over contiguous windows.
//!
//! Both strategies run the same staged core over "units": a unit is a
//! single frame for CRB and a window of consecutive frames of one sequence
//! for T-CRB. A unit's label histogram, gradient embedding and density
//! signature are computed from the concatenation of its frames' detections.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::coreset::k_center_greedy;
use super::{check_budget, mean_vector, sorted_records, FrameScoreRecord, SelectionResult, Strategy};
use crate::error::{Error, Result};
use crate::surrogate::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbParams {
    /// Stage-C survivors: `k1_factor · b`.
    pub k1_factor: usize,
    /// Stage-R survivors: `k2_factor · b`.
    pub k2_factor: usize,
    /// Distance bins of the density signature.
    pub bins: usize,
    /// Reference distance of the density normalization `n · max(d, d0)²`.
    pub d0: f64,
    /// Upper edge of the distance bins; the largest detection distance in the
    /// pool when unset.
    pub distance_range: Option<f64>,
}

impl Default for CrbParams {
    fn default() -> Self {
        Self {
            k1_factor: 4,
            k2_factor: 2,
            bins: 10,
            d0: 10.0,
            distance_range: None,
        }
    }
}

impl CrbParams {
    fn validate(&self) -> Result<()> {
        if self.k2_factor < 1 || self.k1_factor < self.k2_factor {
            return Err(Error::Config(format!(
                "CRB factors must satisfy k1 >= k2 >= 1 (got k1={}, k2={})",
                self.k1_factor, self.k2_factor
            )));
        }
        if self.bins == 0 || !(self.d0 > 0.0) {
            return Err(Error::Config("CRB needs bins >= 1 and d0 > 0".into()));
        }
        Ok(())
    }
}

/// Unit ids surviving each CRB stage, in id order, plus the final picks in
/// pick order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbStages {
    pub pool: Vec<u64>,
    pub stage_c: Vec<u64>,
    pub stage_r: Vec<u64>,
    pub selected: Vec<u64>,
}

/// Distribution over equal-width distance bins of the normalized density
/// `ρ = point_count · max(distance, d0)²`, summed per bin and scaled to sum
/// to one. All zeros when there are no detections.
pub fn density_signature<'a>(
    detections: impl IntoIterator<Item = &'a Detection>,
    bins: usize,
    range: f64,
    d0: f64,
) -> Vec<f64> {
    let mut sig = vec![0.0; bins];
    for d in detections {
        let bin = if range > 0.0 {
            ((d.distance / range * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        sig[bin] += d.point_count as f64 * d.distance.max(d0).powi(2);
    }
    let total: f64 = sig.iter().sum();
    if total > 0.0 {
        for s in sig.iter_mut() {
            *s /= total;
        }
    }
    sig
}

/// `KL(Ĥ ‖ U)` where `Ĥ` is `pooled` with add-one smoothing and `U` is
/// uniform over the bins.
pub fn smoothed_kl_to_uniform(pooled: &[f64]) -> f64 {
    let k = pooled.len() as f64;
    let total: f64 = pooled.iter().sum::<f64>() + k;
    pooled
        .iter()
        .map(|s| {
            let h = (s + 1.0) / total;
            h * (h * k).ln()
        })
        .sum()
}

fn normalized_entropy(counts: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = counts.clone().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let q = c / total;
            q * q.ln()
        })
        .sum::<f64>()
}

// Greedy stage B. `tiers` are candidate index lists tried in order: a later
// tier is consulted only once no candidate of an earlier tier is admissible.
fn balance_greedy(
    signatures: &[&[f64]],
    prior: &[f64],
    tiers: &[Vec<usize>],
    n: usize,
    admissible: &mut dyn FnMut(usize, &[usize]) -> bool,
) -> Vec<(usize, f64)> {
    let mut pooled = prior.to_vec();
    let mut picks: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut taken: Vec<usize> = Vec::new();
    while picks.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for tier in tiers {
            for &i in tier {
                if taken.contains(&i) || !admissible(i, &taken) {
                    continue;
                }
                let trial: Vec<f64> = pooled.iter().zip(signatures[i]).map(|(a, b)| a + b).collect();
                let kl = smoothed_kl_to_uniform(&trial);
                // Tiers are in ascending-id order, so a strict improvement
                // keeps the smaller id on ties.
                match best {
                    Some((_, b)) if kl >= b => {}
                    _ => best = Some((i, kl)),
                }
            }
            if best.is_some() {
                break;
            }
        }
        let Some((i, kl)) = best else { break };
        for (a, b) in pooled.iter_mut().zip(signatures[i]) {
            *a += b;
        }
        taken.push(i);
        picks.push((i, kl));
    }
    picks
}

/// Geometric-balance stage on its own: greedily picks `n` signatures, each
/// minimizing the smoothed KL of `prior` plus everything picked so far plus
/// the candidate against the uniform distribution. Ties go to the smaller
/// index.
pub fn geometric_balance_pick(signatures: &[Vec<f64>], prior: &[f64], n: usize) -> Vec<(usize, f64)> {
    let refs: Vec<&[f64]> = signatures.iter().map(Vec::as_slice).collect();
    let all: Vec<usize> = (0..signatures.len()).collect();
    balance_greedy(&refs, prior, &[all], n, &mut |_, _| true)
}

struct Unit<'a> {
    frames: Vec<&'a FrameScoreRecord>,
    first_id: u64,
    hist: Vec<usize>,
    grad: Vec<f64>,
    signature: Vec<f64>,
}

struct UnitBuilder {
    num_classes: usize,
    grad_dim: usize,
    bins: usize,
    range: f64,
    d0: f64,
}

impl UnitBuilder {
    fn new(records: &[&FrameScoreRecord], num_classes: usize, params: &CrbParams) -> Self {
        let range = params.distance_range.unwrap_or_else(|| {
            records
                .iter()
                .flat_map(|r| r.detections.iter().map(|d| d.distance))
                .fold(0.0, f64::max)
        });
        Self {
            num_classes,
            grad_dim: records.first().map_or(0, |r| r.frame_grad_embedding.len()),
            bins: params.bins,
            range,
            d0: params.d0,
        }
    }

    fn build<'a>(&self, frames: Vec<&'a FrameScoreRecord>) -> Unit<'a> {
        let dets = || frames.iter().flat_map(|r| r.detections.iter());
        let mut hist = vec![0usize; self.num_classes];
        for d in dets() {
            if d.bbox.class_id < self.num_classes {
                hist[d.bbox.class_id] += 1;
            }
        }
        Unit {
            first_id: frames.iter().map(|r| r.frame_id).min().expect("non-empty unit"),
            grad: mean_vector(dets().map(|d| d.grad_embedding.as_slice()), self.grad_dim),
            signature: density_signature(dets(), self.bins, self.range, self.d0),
            hist,
            frames,
        }
    }
}

struct StageTrace {
    stage_c: Vec<usize>,
    stage_r: Vec<usize>,
    picks: Vec<(usize, f64)>,
}

// `units` must be ordered by ascending first_id.
fn crb_core(units: &[Unit<'_>], labeled_hist: &[usize], n: usize, params: &CrbParams) -> StageTrace {
    let n = n.min(units.len());
    let conciseness: Vec<f64> = units
        .iter()
        .map(|u| {
            let joined = u
                .hist
                .iter()
                .enumerate()
                .map(|(k, &c)| (c + labeled_hist.get(k).copied().unwrap_or(0)) as f64);
            normalized_entropy(joined)
        })
        .collect();
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| conciseness[b].total_cmp(&conciseness[a]).then(a.cmp(&b)));
    let k1 = (params.k1_factor * n).min(units.len());
    let mut stage_c: Vec<usize> = order[..k1].to_vec();
    stage_c.sort_unstable();

    let k2 = (params.k2_factor * n).min(k1);
    let points: Vec<&[f64]> = stage_c.iter().map(|&i| units[i].grad.as_slice()).collect();
    let mut stage_r: Vec<usize> = k_center_greedy(&points, &[], k2)
        .into_iter()
        .map(|(j, _)| stage_c[j])
        .collect();
    stage_r.sort_unstable();

    let in_r: BTreeSet<usize> = stage_r.iter().copied().collect();
    let rest: Vec<usize> = (0..units.len()).filter(|i| !in_r.contains(i)).collect();
    let signatures: Vec<&[f64]> = units.iter().map(|u| u.signature.as_slice()).collect();
    let prior = vec![0.0; params.bins];
    let mut admissible = |i: usize, taken: &[usize]| {
        taken.iter().all(|&t| {
            units[t]
                .frames
                .iter()
                .all(|a| units[i].frames.iter().all(|b| a.frame_id != b.frame_id))
        })
    };
    let picks = balance_greedy(&signatures, &prior, &[stage_r.clone(), rest], n, &mut admissible);
    StageTrace {
        stage_c,
        stage_r,
        picks,
    }
}

/// Per-frame CRB selection of `min(b, |records|)` frames.
pub fn crb_select(
    records: &[FrameScoreRecord],
    labeled_hist: &[usize],
    num_classes: usize,
    b: usize,
    params: &CrbParams,
) -> Result<SelectionResult> {
    check_budget(b)?;
    params.validate()?;
    let sorted = sorted_records(records)?;
    let builder = UnitBuilder::new(&sorted, num_classes, params);
    let units: Vec<Unit<'_>> = sorted.iter().map(|r| builder.build(vec![*r])).collect();
    let trace = crb_core(&units, labeled_hist, b, params);
    let ids = |idx: &[usize]| idx.iter().map(|&i| units[i].first_id).collect::<Vec<u64>>();
    let mut result = SelectionResult::new(Strategy::Crb, 0);
    for &(i, kl) in &trace.picks {
        result.selected.push(units[i].first_id);
        result.scores.insert(units[i].first_id, kl);
    }
    result.crb_stages = Some(CrbStages {
        pool: sorted.iter().map(|r| r.frame_id).collect(),
        stage_c: ids(&trace.stage_c),
        stage_r: ids(&trace.stage_r),
        selected: result.selected.clone(),
    });
    Ok(result)
}

/// Temporal CRB: selects non-overlapping windows of `window` consecutive
/// frames of one sequence, `⌊b / window⌋` of them, through the CRB stages at
/// window granularity, then fills the remaining budget with per-frame CRB
/// over the leftover frames. Ids are returned ordered by
/// `(sequence_id, index_in_sequence)`.
pub fn tcrb_select(
    records: &[FrameScoreRecord],
    labeled_hist: &[usize],
    num_classes: usize,
    b: usize,
    window: usize,
    params: &CrbParams,
) -> Result<SelectionResult> {
    check_budget(b)?;
    params.validate()?;
    if window == 0 {
        return Err(Error::Config("tcrb window must be >= 1".into()));
    }
    if b < window {
        return Err(Error::InvalidBudget(format!("tcrb budget {b} is smaller than the window {window}")));
    }
    let sorted = sorted_records(records)?;
    let mut sequences: BTreeMap<u64, Vec<&FrameScoreRecord>> = BTreeMap::new();
    for r in &sorted {
        sequences.entry(r.sequence_id).or_default().push(r);
    }
    if !sequences.values().any(|s| s.len() >= window) {
        return Err(Error::Selection(format!("no sequence has at least {window} unlabeled frames")));
    }

    let builder = UnitBuilder::new(&sorted, num_classes, params);
    let mut units: Vec<Unit<'_>> = Vec::new();
    for seq in sequences.values_mut() {
        seq.sort_by_key(|r| r.index_in_sequence);
        for run in seq.windows(window) {
            if run[window - 1].index_in_sequence - run[0].index_in_sequence == (window - 1) as u64 {
                units.push(builder.build(run.to_vec()));
            }
        }
    }
    units.sort_by_key(|u| u.first_id);

    let mut result = SelectionResult::new(Strategy::Tcrb, 0);
    let mut chosen: BTreeSet<u64> = BTreeSet::new();
    let mut chosen_hist = labeled_hist.to_vec();
    chosen_hist.resize(num_classes, 0);
    let trace = crb_core(&units, labeled_hist, b / window, params);
    for &(i, kl) in &trace.picks {
        for r in &units[i].frames {
            chosen.insert(r.frame_id);
            result.scores.insert(r.frame_id, kl);
        }
        for (c, h) in chosen_hist.iter_mut().zip(&units[i].hist) {
            *c += h;
        }
    }

    let target = b.min(sorted.len());
    if chosen.len() < target {
        let leftovers: Vec<FrameScoreRecord> = sorted
            .iter()
            .filter(|r| !chosen.contains(&r.frame_id))
            .map(|r| (*r).clone())
            .collect();
        let fill = crb_select(&leftovers, &chosen_hist, num_classes, target - chosen.len(), params)?;
        for id in fill.selected {
            chosen.insert(id);
            result.scores.insert(id, fill.scores[&id]);
        }
    }

    let mut ordered: Vec<&FrameScoreRecord> = sorted.into_iter().filter(|r| chosen.contains(&r.frame_id)).collect();
    ordered.sort_by_key(|r| (r.sequence_id, r.index_in_sequence));
    result.selected = ordered.iter().map(|r| r.frame_id).collect();
    Ok(result)
}
