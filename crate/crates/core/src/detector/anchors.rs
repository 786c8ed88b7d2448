//! Anchor grid and anchor-to-ground-truth labelling.

use serde::{Deserialize, Serialize};

use super::boxes::{iou, BoxCoder};
use crate::dataset::BBox;
use crate::{Error, Result};

/// Anchors laid out row-major over feature cells, `scales x ratios` per
/// cell with the scale index varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub feature_size: (usize, usize),
    pub per_cell: usize,
    pub stride: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Flat index of anchor `a` at feature cell `(row, col)`.
    pub fn index(&self, row: usize, col: usize, a: usize) -> usize {
        (row * self.feature_size.1 + col) * self.per_cell + a
    }
}

/// Anchors of side `s` and aspect ratio `r = w / h` get `w = s sqrt(r)`,
/// `h = s / sqrt(r)`, centred at `((col + 0.5) stride, (row + 0.5) stride)`.
pub fn generate_anchors(feature_size: (usize, usize), stride: usize, scales: &[f64], ratios: &[f64]) -> Result<AnchorSet> {
    if stride == 0 || scales.is_empty() || ratios.is_empty() {
        return Err(Error::Config("anchors need a stride, scales and ratios".into()));
    }
    if scales.iter().chain(ratios).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Config("anchor scales and ratios must be positive".into()));
    }
    let (fh, fw) = feature_size;
    let shapes: Vec<(f64, f64)> = scales
        .iter()
        .flat_map(|&s| ratios.iter().map(move |&r| (s * r.sqrt(), s / r.sqrt())))
        .collect();
    let mut boxes = Vec::with_capacity(fh * fw * shapes.len());
    for row in 0..fh {
        for col in 0..fw {
            let cx = (col as f64 + 0.5) * stride as f64;
            let cy = (row as f64 + 0.5) * stride as f64;
            for &(w, h) in &shapes {
                boxes.push(BBox::raw(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h));
            }
        }
    }
    Ok(AnchorSet {
        boxes,
        feature_size,
        per_cell: shapes.len(),
        stride,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMatch {
    pub labels: Vec<AnchorLabel>,
    /// Best-overlapping ground truth per anchor (meaningless without boxes).
    pub matched_gt: Vec<usize>,
    /// Regression targets of positive anchors, zero elsewhere.
    pub targets: Vec<[f64; 4]>,
}

impl AnchorMatch {
    pub fn positives(&self) -> Vec<usize> {
        self.indices(AnchorLabel::Positive)
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.indices(AnchorLabel::Negative)
    }

    fn indices(&self, label: AnchorLabel) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == label).map(|(i, _)| i).collect()
    }
}

/// Labels anchors: positive at IoU >= `pos_iou` or when an anchor has the
/// highest IoU (ties included) for some ground truth it overlaps; negative
/// below `neg_iou`; ignored otherwise.
pub fn match_anchors(anchors: &[BBox], gts: &[BBox], pos_iou: f64, neg_iou: f64) -> Result<AnchorMatch> {
    if !(0.0..=1.0).contains(&neg_iou) || !(neg_iou..=1.0).contains(&pos_iou) {
        return Err(Error::Config(format!("invalid matching thresholds {neg_iou} / {pos_iou}")));
    }
    let n = anchors.len();
    if gts.is_empty() {
        return Ok(AnchorMatch {
            labels: vec![AnchorLabel::Negative; n],
            matched_gt: vec![0; n],
            targets: vec![[0.0; 4]; n],
        });
    }
    let mut best = vec![(0.0f64, 0usize); n];
    let mut gt_best = vec![0.0f64; gts.len()];
    let overlaps: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| iou(a, g)).collect())
        .collect();
    for (i, row) in overlaps.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > best[i].0 {
                best[i] = (v, j);
            }
            gt_best[j] = gt_best[j].max(v);
        }
    }
    let mut labels: Vec<AnchorLabel> = best
        .iter()
        .map(|&(v, _)| {
            if v >= pos_iou {
                AnchorLabel::Positive
            } else if v < neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for (i, row) in overlaps.iter().enumerate() {
        if row.iter().zip(&gt_best).any(|(&v, &m)| m > 0.0 && v == m) {
            labels[i] = AnchorLabel::Positive;
        }
    }
    let coder = BoxCoder::default();
    let mut targets = vec![[0.0; 4]; n];
    for i in 0..n {
        if labels[i] == AnchorLabel::Positive {
            targets[i] = coder.encode(&gts[best[i].1], &anchors[i])?;
        }
    }
    Ok(AnchorMatch {
        labels,
        matched_gt: best.iter().map(|b| b.1).collect(),
        targets,
    })
}
