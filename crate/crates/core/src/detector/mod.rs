//! Two-stage car detector: anchors and a region proposal network on a small
//! convolutional backbone, followed by RoI pooling and a classification and
//! box-refinement head. Accepts 3- or 6-channel input.

mod anchors;
mod boxes;
mod net;
mod nms;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use anchors::{generate_anchors, match_anchors, AnchorLabel, AnchorMatch, AnchorSet};
pub use boxes::{decode_box, encode_box, iou, BoxCoder, MAX_LOG_SCALE};
pub use net::{DetectorNet, Head, RpnLayout, Trunk, FEATURE_STRIDE};
pub use nms::{nms, nms_limit, rank_by_score};
pub use train::{
    compute_loss, history_csv, loss_and_backward, sample_targets, train_detector, EpochRecord, InitMode, LossBreakdown, TrainSchedule,
    TrainTargets,
};

use crate::checkpoint::Bundle;
use crate::dataset::{BBox, ImageBuffer, CAR};
use crate::sixchannel::{normalize, NormStats};
use crate::{Error, Result};
use sixchan_nn::loss::{sigmoid, softmax_rows};
use sixchan_nn::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// 3 or 6.
    pub input_channels: usize,
    pub image_size: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub feature_stride: usize,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    pub rpn_nms_iou: f64,
    pub pre_nms_topk_train: usize,
    pub post_nms_topk_train: usize,
    pub pre_nms_topk_test: usize,
    pub post_nms_topk_test: usize,
    /// Proposals narrower or shorter than this (pixels) are dropped.
    pub min_proposal_size: f64,
    pub roi_batch: usize,
    pub roi_pos_fraction: f64,
    pub roi_fg_iou: f64,
    pub roi_bg_iou: (f64, f64),
    pub roi_pool_size: usize,
    pub head_box_weights: [f64; 4],
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub backbone_channels: [usize; 4],
    pub rpn_channels: usize,
    pub head_hidden: usize,
    /// Halve both copies of duplicated first-layer kernels when building a
    /// 6-channel model from a 3-channel one.
    pub halve_expanded: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            image_size: 256,
            anchor_scales: vec![24.0, 48.0, 96.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            feature_stride: FEATURE_STRIDE,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            rpn_batch: 256,
            rpn_pos_fraction: 0.5,
            rpn_nms_iou: 0.7,
            pre_nms_topk_train: 600,
            post_nms_topk_train: 100,
            pre_nms_topk_test: 600,
            post_nms_topk_test: 50,
            min_proposal_size: 2.0,
            roi_batch: 128,
            roi_pos_fraction: 0.25,
            roi_fg_iou: 0.5,
            roi_bg_iou: (0.0, 0.5),
            roi_pool_size: 7,
            head_box_weights: [10.0, 10.0, 5.0, 5.0],
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
            backbone_channels: [16, 32, 48, 48],
            rpn_channels: 48,
            head_hidden: 128,
            halve_expanded: true,
        }
    }
}

impl DetectorConfig {
    pub fn with_channels(channels: usize) -> Self {
        Self {
            input_channels: channels,
            ..Self::default()
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    pub fn feature_size(&self) -> (usize, usize) {
        let s = self.image_size.div_ceil(FEATURE_STRIDE);
        (s, s)
    }

    pub fn anchors(&self) -> Result<AnchorSet> {
        generate_anchors(self.feature_size(), self.feature_stride, &self.anchor_scales, &self.anchor_ratios)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("detector configuration: {m}")));
        if self.input_channels != 3 && self.input_channels != 6 {
            return bad(format!("input_channels must be 3 or 6, got {}", self.input_channels));
        }
        if self.feature_stride != FEATURE_STRIDE {
            return bad(format!("the backbone has stride {FEATURE_STRIDE}, not {}", self.feature_stride));
        }
        if !self.image_size.is_multiple_of(FEATURE_STRIDE) || self.image_size == 0 {
            return bad(format!("image_size must be a positive multiple of {FEATURE_STRIDE}"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.rpn_neg_iou) && unit(self.rpn_pos_iou) && self.rpn_neg_iou <= self.rpn_pos_iou) {
            return bad("rpn IoU thresholds must satisfy 0 <= neg <= pos <= 1".into());
        }
        if !(unit(self.rpn_nms_iou) && unit(self.nms_iou) && unit(self.roi_fg_iou)) {
            return bad("IoU thresholds must lie in [0, 1]".into());
        }
        let (lo, hi) = self.roi_bg_iou;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return bad("roi_bg_iou must be an interval inside [0, 1]".into());
        }
        if !(unit(self.rpn_pos_fraction) && unit(self.roi_pos_fraction) && unit(self.score_threshold)) {
            return bad("fractions and score_threshold must lie in [0, 1]".into());
        }
        if self.rpn_batch == 0 || self.roi_batch == 0 || self.post_nms_topk_test == 0 || self.post_nms_topk_train == 0 {
            return bad("batch sizes and proposal counts must be positive".into());
        }
        if self.roi_pool_size == 0 || self.head_hidden == 0 || self.rpn_channels == 0 || self.backbone_channels.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        if self.head_box_weights.iter().any(|w| *w <= 0.0) {
            return bad("head_box_weights must be positive".into());
        }
        self.anchors().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

/// A scored region proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
}

/// Decodes anchors in descending objectness until `pre` valid boxes are
/// found, applies NMS and returns at most `post` proposals in descending score order.
pub fn propose<T: Scalar>(config: &DetectorConfig, anchors: &AnchorSet, trunk: &Trunk<T>, pre: usize, post: usize) -> Result<Vec<Proposal>> {
    let layout = RpnLayout {
        per_cell: anchors.per_cell,
        plane: trunk.rpn_logits.plane(),
    };
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let size = config.image_size;
    let mut scores = Vec::with_capacity(anchors.len());
    for i in 0..anchors.len() {
        let logit = f(trunk.rpn_logits.data[layout.logit_index(i)]);
        if !logit.is_finite() {
            return Err(Error::NumericDomain("non-finite RPN output".into()));
        }
        scores.push(sigmoid(logit));
    }
    let coder = BoxCoder::default();
    let mut top = Vec::with_capacity(pre.min(anchors.len()));
    for i in rank_by_score(&scores) {
        if top.len() == pre {
            break;
        }
        let d = [0, 1, 2, 3].map(|k| f(trunk.rpn_deltas.data[layout.delta_index(i, k)]));
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("non-finite RPN output".into()));
        }
        let b = coder.decode_clipped(&d, &anchors.boxes[i], size, size)?;
        if b.width() >= config.min_proposal_size && b.height() >= config.min_proposal_size {
            top.push(Proposal {
                bbox: b,
                score: scores[i],
            });
        }
    }
    let boxes: Vec<BBox> = top.iter().map(|p| p.bbox).collect();
    let keep = nms_limit(&boxes, &top.iter().map(|p| p.score).collect::<Vec<_>>(), config.rpn_nms_iou, post);
    Ok(keep.into_iter().map(|i| top[i]).collect())
}

/// Everything computed by one inference pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub proposals: Vec<Proposal>,
    /// Car probability of every proposal after the head.
    pub car_probability: Vec<f64>,
    /// Refined and clipped box of every proposal.
    pub refined: Vec<BBox>,
}

/// Trained (or freshly initialised) detector with its input statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionModel {
    pub config: DetectorConfig,
    pub net: DetectorNet<f32>,
    pub norm: NormStats,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl DetectionModel {
    /// Seeded random initialisation; statistics are the identity until
    /// training computes them.
    pub fn initialize(config: &DetectorConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de7e_c70a);
        Ok(Self {
            config: config.clone(),
            net: DetectorNet::new(config, &mut rng),
            norm: NormStats {
                mean: vec![0.0; config.input_channels],
                std: vec![1.0; config.input_channels],
            },
            seed,
            history: Vec::new(),
        })
    }

    /// Runs the network on an image already normalised with `self.norm`.
    pub fn forward(&self, normalized: &ImageBuffer) -> Result<ForwardOutput> {
        let c = &self.config;
        if normalized.channels() != c.input_channels {
            return Err(Error::Dimension(format!(
                "model expects {} channels, got {}",
                c.input_channels,
                normalized.channels()
            )));
        }
        if normalized.height() != c.image_size || normalized.width() != c.image_size {
            return Err(Error::Dimension(format!(
                "model expects {0}x{0} images, got {1}x{2}",
                c.image_size,
                normalized.height(),
                normalized.width()
            )));
        }
        let x: Tensor<f32> = normalized.to_tensor();
        let anchors = c.anchors()?;
        let trunk = self.net.trunk(&x)?;
        let proposals = propose(c, &anchors, &trunk, c.pre_nms_topk_test, c.post_nms_topk_test)?;
        let rois: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let head = self.net.head(&trunk.feature, &rois, c.roi_pool_size)?;
        let probs = softmax_rows(&head.logits, 2);
        let coder = BoxCoder::new(c.head_box_weights);
        let mut car_probability = Vec::with_capacity(rois.len());
        let mut refined = Vec::with_capacity(rois.len());
        for (r, roi) in rois.iter().enumerate() {
            car_probability.push(probs[2 * r + 1] as f64);
            let d = [0, 1, 2, 3].map(|k| head.deltas[4 * r + k] as f64);
            refined.push(coder.decode_clipped(&d, roi, c.image_size, c.image_size)?);
        }
        Ok(ForwardOutput {
            proposals,
            car_probability,
            refined,
        })
    }

    /// Detections on a normalised image: score threshold, per-class NMS,
    /// sorted by confidence.
    pub fn detect(&self, normalized: &ImageBuffer) -> Result<Vec<Detection>> {
        let out = self.forward(normalized)?;
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (b, &p) in out.refined.iter().zip(&out.car_probability) {
            if p >= self.config.score_threshold && b.width() > 0.0 && b.height() > 0.0 {
                boxes.push(*b);
                scores.push(p);
            }
        }
        let keep = nms(&boxes, &scores, self.config.nms_iou);
        Ok(keep
            .into_iter()
            .take(self.config.max_detections)
            .map(|i| Detection {
                bbox: boxes[i],
                class_id: CAR,
                confidence: scores[i],
            })
            .collect())
    }

    /// Normalises a raw `[0, 1]` image with the model statistics, then
    /// detects.
    pub fn detect_raw(&self, image: &ImageBuffer) -> Result<Vec<Detection>> {
        self.detect(&normalize(image, &self.norm)?)
    }

    /// Epoch timings are not stored; a loaded model reports zero seconds.
    pub fn to_bundle(&self) -> Bundle {
        let history: Vec<EpochRecord> = self.history.iter().map(|r| EpochRecord { seconds: 0.0, ..*r }).collect();
        let mut bundle = Bundle::new(json!({
            "format": "detector",
            "version": 1,
            "config": self.config,
            "norm": self.norm,
            "seed": self.seed,
            "history": history,
        }));
        bundle.push_module("net", &self.net);
        bundle
    }

    pub fn from_bundle(bundle: &Bundle) -> Result<Self> {
        let meta = &bundle.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some("detector") {
            return Err(Error::Format {
                offset: 0,
                message: "bundle is not a detector".into(),
            });
        }
        let get = |k: &str| meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let parse_err = |k: &str, e: serde_json::Error| Error::Format {
            offset: 0,
            message: format!("detector bundle field `{k}`: {e}"),
        };
        let config: DetectorConfig = serde_json::from_value(get("config")).map_err(|e| parse_err("config", e))?;
        let norm: NormStats = serde_json::from_value(get("norm")).map_err(|e| parse_err("norm", e))?;
        let seed: u64 = serde_json::from_value(get("seed")).map_err(|e| parse_err("seed", e))?;
        let history: Vec<EpochRecord> = serde_json::from_value(get("history")).map_err(|e| parse_err("history", e))?;
        let mut model = Self::initialize(&config, seed)?;
        bundle.load_module("net", &mut model.net)?;
        model.norm = norm;
        model.history = history;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&Bundle::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        assert!(DetectorConfig::with_channels(6).validate().is_ok());
        assert!(DetectorConfig::with_channels(4).validate().is_err());
        let c = DetectorConfig {
            rpn_neg_iou: 0.8,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = DetectorConfig {
            feature_stride: 16,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn untrained_model_detects_without_error() {
        let model = DetectionModel::initialize(&DetectorConfig::default(), 1).unwrap();
        let img = ImageBuffer::filled(256, 256, 3, 0.3).unwrap();
        let out = model.forward(&img).unwrap();
        assert!(out.proposals.len() <= 50);
        let dets = model.detect(&img).unwrap();
        assert!(dets.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        assert!(dets.iter().all(|d| d.bbox.is_inside(256, 256)));
        assert!(matches!(
            model.detect(&ImageBuffer::filled(256, 256, 6, 0.3).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let model = DetectionModel::initialize(&DetectorConfig::with_channels(6), 9).unwrap();
        model.save(&p).unwrap();
        assert_eq!(DetectionModel::load(&p).unwrap(), model);
    }
}
