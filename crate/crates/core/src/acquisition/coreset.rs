//! Farthest-first (k-center greedy) selection.

use super::{check_budget, sorted_records, FrameScoreRecord, SelectionResult, Strategy};
use crate::error::Result;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy k-center over `points`, which must be ordered by ascending id so
/// that index order breaks ties. Each pick maximizes the minimum distance to
/// `anchors` and the points already picked. Without anchors the first pick
/// is the point farthest from the centroid.
///
/// Returns `(index, distance at pick time)` for `min(k, points.len())` picks.
pub fn k_center_greedy(points: &[&[f64]], anchors: &[&[f64]], k: usize) -> Vec<(usize, f64)> {
    let n = points.len();
    let k = k.min(n);
    let mut picks = Vec::with_capacity(k);
    if k == 0 {
        return picks;
    }
    let mut chosen = vec![false; n];
    let mut min_dist: Vec<f64> = if anchors.is_empty() {
        let dim = points[0].len();
        let centroid = super::mean_vector(points.iter().copied(), dim);
        points.iter().map(|p| euclidean(p, &centroid)).collect()
    } else {
        points
            .iter()
            .map(|p| anchors.iter().map(|a| euclidean(p, a)).fold(f64::INFINITY, f64::min))
            .collect()
    };
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            match best {
                Some(j) if min_dist[i] <= min_dist[j] => {}
                _ => best = Some(i),
            }
        }
        let pick = best.expect("k <= n");
        picks.push((pick, min_dist[pick]));
        chosen[pick] = true;
        if picks.len() == 1 && anchors.is_empty() {
            // Centroid distances were only for the seed pick.
            for i in 0..n {
                min_dist[i] = euclidean(points[i], points[pick]);
            }
        } else {
            for i in 0..n {
                min_dist[i] = min_dist[i].min(euclidean(points[i], points[pick]));
            }
        }
    }
    picks
}

/// Largest distance from any point to its nearest center.
pub fn covering_radius(points: &[&[f64]], centers: &[&[f64]]) -> f64 {
    points
        .iter()
        .map(|p| centers.iter().map(|c| euclidean(p, c)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// CoreSet selection on frame embeddings, anchored at the labeled pool.
pub fn coreset_select(
    records: &[FrameScoreRecord],
    labeled_embeddings: &[Vec<f64>],
    b: usize,
) -> Result<SelectionResult> {
    check_budget(b)?;
    let sorted = sorted_records(records)?;
    let points: Vec<&[f64]> = sorted.iter().map(|r| r.frame_embedding.as_slice()).collect();
    let anchors: Vec<&[f64]> = labeled_embeddings.iter().map(Vec::as_slice).collect();
    let mut result = SelectionResult::new(Strategy::Coreset, 0);
    for (i, d) in k_center_greedy(&points, &anchors, b) {
        let id = sorted[i].frame_id;
        result.selected.push(id);
        result.scores.insert(id, d);
    }
    Ok(result)
}
