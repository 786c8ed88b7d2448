//! VOC-style evaluation: greedy matching, precision/recall and average
//! precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, BBox};
use crate::detector::{iou, Detection};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApVariant {
    /// Area under the monotone precision envelope at every recall change.
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// Orders detections by descending confidence, ties by input position.
fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Marks each detection of one image as a true positive (`true`) or false
/// positive. In descending confidence, each detection claims the
/// highest-IoU unclaimed ground truth with IoU at least `iou_threshold`.
/// Flags are returned in input order.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let v = iou(&dets[i].bbox, g);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// Average precision of a precision/recall curve given as `(recall,
/// precision)` points in ranking order. Empty curves score 0.
pub fn voc_ap(curve: &[(f64, f64)], variant: ApVariant) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    match variant {
        ApVariant::AllPoint => {
            let mut rec = Vec::with_capacity(curve.len() + 2);
            let mut pre = Vec::with_capacity(curve.len() + 2);
            rec.push(0.0);
            pre.push(0.0);
            for &(r, p) in curve {
                rec.push(r);
                pre.push(p);
            }
            rec.push(1.0);
            pre.push(0.0);
            for i in (0..pre.len() - 1).rev() {
                pre[i] = pre[i].max(pre[i + 1]);
            }
            (0..rec.len() - 1)
                .filter(|&i| rec[i + 1] != rec[i])
                .map(|i| (rec[i + 1] - rec[i]) * pre[i + 1])
                .sum()
        }
        ApVariant::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    curve.iter().filter(|(r, _)| *r >= t).map(|(_, p)| *p).fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_per_class: BTreeMap<u32, f64>,
    /// Mean over classes with at least one ground truth.
    pub map: f64,
    pub variant: ApVariant,
    pub iou_threshold: f64,
    /// `(recall, precision)` after each ranked detection, all classes pooled
    /// when there is only one.
    pub pr_curve: Vec<(f64, f64)>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
}

/// Pools detections over images per class, ranks them globally and computes
/// AP. Every detection key must name an image with ground truth listed
/// (possibly empty).
pub fn evaluate(
    detections: &BTreeMap<String, Vec<Detection>>,
    ground_truth: &BTreeMap<String, Vec<Annotation>>,
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<EvalResult> {
    if let Some(unknown) = detections.keys().find(|k| !ground_truth.contains_key(*k)) {
        return Err(Error::Evaluation(format!("detections for unknown image {unknown}")));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::Evaluation(format!("IoU threshold {iou_threshold} outside [0, 1]")));
    }
    let mut classes: Vec<u32> = ground_truth.values().flatten().map(|a| a.class_id).collect();
    classes.extend(detections.values().flatten().map(|d| d.class_id));
    classes.sort_unstable();
    classes.dedup();

    let mut ap_per_class = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let (mut tp_total, mut fp_total, mut gt_total) = (0, 0, 0);
    for &class in &classes {
        // (confidence, image key, index within image, is_tp)
        let mut ranked: Vec<(f64, &str, usize, bool)> = Vec::new();
        let mut n_gt = 0;
        for (image, anns) in ground_truth {
            let gts: Vec<BBox> = anns.iter().filter(|a| a.class_id == class).map(|a| a.bbox).collect();
            n_gt += gts.len();
            let dets: Vec<Detection> = detections
                .get(image)
                .map(|d| d.iter().filter(|d| d.class_id == class).copied().collect())
                .unwrap_or_default();
            let flags = match_detections(&dets, &gts, iou_threshold);
            ranked.extend(dets.iter().zip(flags).enumerate().map(|(k, (d, f))| (d.confidence, image.as_str(), k, f)));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut curve = Vec::with_capacity(ranked.len());
        for &(_, _, _, is_tp) in &ranked {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            curve.push((recall, tp as f64 / (tp + fp) as f64));
        }
        tp_total += tp;
        fp_total += fp;
        gt_total += n_gt;
        if n_gt > 0 {
            ap_per_class.insert(class, voc_ap(&curve, variant));
        }
        curves.insert(class, curve);
    }
    let map = if ap_per_class.is_empty() {
        0.0
    } else {
        ap_per_class.values().sum::<f64>() / ap_per_class.len() as f64
    };
    let pr_curve = if classes.len() == 1 {
        curves.into_values().next().unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(EvalResult {
        ap_per_class,
        map,
        variant,
        iou_threshold,
        pr_curve,
        true_positives: tp_total,
        false_positives: fp_total,
        ground_truths: gt_total,
    })
}
