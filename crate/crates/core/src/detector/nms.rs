//! Greedy non-maximum suppression.

use std::cmp::Ordering;

use super::boxes::iou;
use crate::dataset::BBox;

/// Indices sorted by descending score, ties broken by lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]).then(a.cmp(&b)));
    order
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Keeps the highest-scoring box, drops every remaining box overlapping it
/// with IoU above `threshold`, and repeats. Returns kept indices in
/// descending score order.
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Vec<usize> {
    nms_limit(boxes, scores, threshold, usize::MAX)
}

/// [`nms`] stopped once `limit` boxes are kept.
pub fn nms_limit(boxes: &[BBox], scores: &[f64], threshold: f64, limit: usize) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let order = rank_by_score(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        if keep.len() >= limit {
            break;
        }
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}
