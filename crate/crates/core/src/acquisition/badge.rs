//! BADGE: k-means++ seeding over gradient embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_budget, coreset::euclidean, sorted_records, FrameScoreRecord, SelectionResult, Strategy};
use crate::error::Result;

// Draws an index with probability proportional to `weights`, skipping taken
// entries; uniform over the untaken ones when all weights vanish.
fn weighted_draw(weights: &[f64], taken: &[bool], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights
        .iter()
        .zip(taken)
        .filter(|(_, &t)| !t)
        .map(|(w, _)| *w)
        .sum();
    if total > 0.0 {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, (&w, &t)) in weights.iter().zip(taken).enumerate() {
            if t || w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(i);
            if acc > target {
                return i;
            }
        }
        // Rounding left `target` at the very top of the range.
        return last.expect("positive total implies a candidate");
    }
    let free: Vec<usize> = (0..weights.len()).filter(|&i| !taken[i]).collect();
    free[rng.random_range(0..free.len())]
}

/// Picks `min(b, |records|)` frames by k-means++ seeding on the frame
/// gradient embeddings: the first with probability proportional to its
/// squared norm, each next one proportional to its squared distance to the
/// nearest frame already picked.
pub fn badge_select(records: &[FrameScoreRecord], b: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(b)?;
    let sorted = sorted_records(records)?;
    let n = sorted.len();
    let k = b.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = vec![false; n];
    let mut weights: Vec<f64> = sorted
        .iter()
        .map(|r| r.frame_grad_embedding.iter().map(|g| g * g).sum())
        .collect();
    let mut result = SelectionResult::new(Strategy::Badge, 0);
    for _ in 0..k {
        let pick = weighted_draw(&weights, &taken, &mut rng);
        taken[pick] = true;
        let id = sorted[pick].frame_id;
        result.selected.push(id);
        result.scores.insert(id, weights[pick]);
        let center = &sorted[pick].frame_grad_embedding;
        let first = result.selected.len() == 1;
        for (i, r) in sorted.iter().enumerate() {
            let d = euclidean(&r.frame_grad_embedding, center);
            weights[i] = if first { d * d } else { weights[i].min(d * d) };
        }
    }
    Ok(result)
}
