use std::collections::BTreeMap;

use proptest::prelude::*;
use sixchan_core::dataset::{Annotation, BBox, CAR};
use sixchan_core::detector::Detection;
use sixchan_core::metrics::{evaluate, match_detections, ApVariant};

type Dets = BTreeMap<String, Vec<Detection>>;
type Gts = BTreeMap<String, Vec<Annotation>>;

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Single-class reference evaluator written from the VOC definitions.
fn reference_ap(dets: &Dets, gts: &Gts, thr: f64, variant: ApVariant) -> f64 {
    let mut ranked: Vec<(f64, &str, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for (key, anns) in gts {
        n_gt += anns.len();
        let d = dets.get(key).cloned().unwrap_or_default();
        let mut claimed = vec![false; anns.len()];
        let mut done = vec![false; d.len()];
        for _ in 0..d.len() {
            let i = (0..d.len()).filter(|&i| !done[i]).fold(None, |p: Option<usize>, i| match p {
                Some(p) if d[p].confidence >= d[i].confidence => Some(p),
                _ => Some(i),
            });
            let i = i.unwrap();
            done[i] = true;
            let mut best: Option<(usize, f64)> = None;
            for (j, a) in anns.iter().enumerate() {
                let v = overlap(&d[i].bbox, &a.bbox);
                if !claimed[j] && v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                claimed[j] = true;
            }
            ranked.push((d[i].confidence, key, i, best.is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    if n_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for r in &ranked {
        if r.3 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        prec.push(tp / (tp + fp));
        rec.push(tp / n_gt as f64);
    }
    match variant {
        ApVariant::AllPoint => (0..ranked.len())
            .filter(|&k| ranked[k].3)
            .map(|k| prec[k..].iter().copied().fold(0.0, f64::max) / n_gt as f64)
            .sum(),
        ApVariant::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    (0..rec.len()).filter(|&k| rec[k] >= t).map(|k| prec[k]).fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::raw(x, y, x + w, y + h)
}

fn car(b: BBox) -> Annotation {
    Annotation::car(b)
}

fn det(b: BBox, c: f64) -> Detection {
    Detection {
        bbox: b,
        class_id: CAR,
        confidence: c,
    }
}

fn arb_image() -> impl Strategy<Value = (Vec<Annotation>, Vec<Detection>)> {
    let boxes = prop::collection::vec((0.0..80.0, 0.0..80.0, 2.0..30.0, 2.0..30.0), 0..6);
    (boxes, prop::collection::vec((any::<prop::sample::Index>(), any::<bool>(), -5.0..5.0f64, 0u8..8, 0.0..80.0f64), 0..8)).prop_map(
        |(gts, picks)| {
            let gts: Vec<Annotation> = gts.into_iter().map(|(x, y, w, h)| car(bx(x, y, w, h))).collect();
            let dets = picks
                .into_iter()
                .map(|(i, near, d, s, far)| {
                    let b = if near && !gts.is_empty() {
                        let g = i.get(&gts).bbox;
                        BBox::raw(g.x_min + d, g.y_min + d / 2.0, g.x_max + d, g.y_max + d / 2.0)
                    } else {
                        bx(far, far / 2.0, 12.0, 12.0)
                    };
                    det(b, s as f64 / 8.0 + 0.01)
                })
                .collect();
            (gts, dets)
        },
    )
}

fn arb_dataset() -> impl Strategy<Value = (Dets, Gts)> {
    prop::collection::vec(arb_image(), 1..12).prop_map(|images| {
        let mut dets = BTreeMap::new();
        let mut gts = BTreeMap::new();
        for (k, (g, d)) in images.into_iter().enumerate() {
            gts.insert(format!("im{k:02}"), g);
            dets.insert(format!("im{k:02}"), d);
        }
        (dets, gts)
    })
}

proptest! {
    #[test]
    fn evaluate_matches_reference((dets, gts) in arb_dataset(), thr in 0.3..0.8f64, eleven in any::<bool>()) {
        let variant = if eleven { ApVariant::ElevenPoint } else { ApVariant::AllPoint };
        let got = evaluate(&dets, &gts, thr, variant).unwrap();
        let want = reference_ap(&dets, &gts, thr, variant);
        prop_assert!((got.map - want).abs() < 1e-9, "{} vs {}", got.map, want);
        prop_assert!((0.0..=1.0).contains(&got.map));
        prop_assert_eq!(got.true_positives + got.false_positives, dets.values().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn detection_order_within_an_image_is_irrelevant((dets, gts) in arb_dataset(), seed in any::<u64>()) {
        // Distinct confidences make the ranking unambiguous.
        let mut unique = dets.clone();
        let mut k = 0.0;
        for list in unique.values_mut() {
            for d in list.iter_mut() {
                k += 1.0;
                d.confidence = (d.confidence + k * 1e-6).min(1.0);
            }
        }
        let mut shuffled = unique.clone();
        for (n, list) in shuffled.values_mut().enumerate() {
            let len = list.len().max(1);
            list.rotate_left((seed as usize + n) % len);
            list.reverse();
        }
        let a = evaluate(&unique, &gts, 0.5, ApVariant::AllPoint).unwrap();
        let b = evaluate(&shuffled, &gts, 0.5, ApVariant::AllPoint).unwrap();
        prop_assert!((a.map - b.map).abs() < 1e-12);
    }

    #[test]
    fn matching_claims_each_truth_once(img in arb_image(), thr in 0.1..0.9f64) {
        let (gts, dets) = img;
        let boxes: Vec<BBox> = gts.iter().map(|a| a.bbox).collect();
        let flags = match_detections(&dets, &boxes, thr);
        prop_assert!(flags.iter().filter(|f| **f).count() <= boxes.len());
        for (d, f) in dets.iter().zip(&flags) {
            if *f {
                prop_assert!(boxes.iter().any(|g| overlap(&d.bbox, g) >= thr));
            }
        }
    }
}

#[test]
fn hand_computed_curve() {
    let g1 = bx(0.0, 0.0, 10.0, 10.0);
    let g2 = bx(50.0, 50.0, 10.0, 10.0);
    let mut gts = BTreeMap::new();
    gts.insert("a".to_string(), vec![car(g1), car(g2)]);
    let mut dets = BTreeMap::new();
    dets.insert("a".to_string(), vec![det(g1, 0.9), det(bx(30.0, 0.0, 5.0, 5.0), 0.8), det(g2, 0.7)]);
    // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    let all = evaluate(&dets, &gts, 0.5, ApVariant::AllPoint).unwrap();
    assert!((all.map - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    let eleven = evaluate(&dets, &gts, 0.5, ApVariant::ElevenPoint).unwrap();
    assert!((eleven.map - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    assert_eq!(all.pr_curve.len(), 3);
    assert_eq!((all.true_positives, all.false_positives, all.ground_truths), (2, 1, 2));
}

#[test]
fn duplicate_detections_are_false_positives() {
    let g = bx(0.0, 0.0, 10.0, 10.0);
    let mut gts = BTreeMap::new();
    gts.insert("a".to_string(), vec![car(g)]);
    let mut dets = BTreeMap::new();
    dets.insert("a".to_string(), vec![det(g, 0.9), det(g, 0.8)]);
    let r = evaluate(&dets, &gts, 0.5, ApVariant::AllPoint).unwrap();
    assert_eq!((r.true_positives, r.false_positives), (1, 1));
    assert_eq!(r.map, 1.0);
}

#[test]
fn missing_truth_scores_zero() {
    let mut gts = BTreeMap::new();
    gts.insert("a".to_string(), vec![car(bx(0.0, 0.0, 10.0, 10.0))]);
    let r = evaluate(&BTreeMap::new(), &gts, 0.5, ApVariant::AllPoint).unwrap();
    assert_eq!(r.map, 0.0);
    assert_eq!(r.ground_truths, 1);
}
