//! Target sampling, the four-term detection loss and the SGD training loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixchan_nn::loss::{bce_with_logits, smooth_l1, softmax_cross_entropy};
use sixchan_nn::optim::Sgd;
use sixchan_nn::{Module, Scalar, Tensor};

use super::anchors::{match_anchors, AnchorSet};
use super::boxes::{iou, BoxCoder};
use super::net::{DetectorNet, Head, RpnLayout, Trunk};
use super::{propose, DetectionModel, DetectorConfig};
use crate::dataset::{BBox, ImageSet};
use crate::sixchannel::{compute_norm_stats, expand_first_layer, normalize};
use crate::{Error, Result};

const RPN_BETA: f64 = 1.0 / 9.0;
const HEAD_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `decay_factor` every this many epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
    /// Random horizontal flips.
    pub hflip: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_every: 5,
            decay_factor: 0.1,
            seed: 0,
            hflip: true,
            max_grad_norm: Some(10.0),
        }
    }
}

impl TrainSchedule {
    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(1).checked_div(self.decay_every).unwrap_or(0);
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.decay_factor <= 0.0 {
            return Err(Error::Config("invalid momentum, weight decay or decay factor".into()));
        }
        Ok(())
    }
}

/// How the network weights start.
#[derive(Debug, Clone)]
pub enum InitMode {
    /// Seeded random initialisation.
    Random,
    /// Copy a 3-channel model, duplicating its first-layer kernels.
    Expand3(Box<DetectionModel>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.rpn_cls += other.rpn_cls;
        self.rpn_reg += other.rpn_reg;
        self.head_cls += other.head_cls;
        self.head_reg += other.head_reg;
        self.total += other.total;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.rpn_cls *= s;
        self.rpn_reg *= s;
        self.head_cls *= s;
        self.head_reg *= s;
        self.total *= s;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

/// One CSV line per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,learning_rate,rpn_cls,rpn_reg,head_cls,head_reg,total,seconds\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            r.epoch, r.learning_rate, r.loss.rpn_cls, r.loss.rpn_reg, r.loss.head_cls, r.loss.head_reg, r.loss.total, r.seconds
        ));
    }
    out
}

/// Sampled anchors, regions and their targets for one image. Once built,
/// the loss is a smooth function of the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTargets {
    pub rpn_picks: Vec<(usize, bool)>,
    pub rpn_reg: Vec<(usize, [f64; 4])>,
    pub rois: Vec<BBox>,
    /// 1 for car, 0 for background.
    pub roi_labels: Vec<usize>,
    pub roi_reg: Vec<(usize, [f64; 4])>,
}

fn sample<R: Rng + ?Sized>(items: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, items.len(), n).into_iter().map(|i| items[i]).collect();
    picked.sort_unstable();
    picked
}

/// Labels anchors, samples the RPN minibatch, generates proposals from the
/// current RPN outputs and samples the head minibatch.
pub fn sample_targets<T: Scalar, R: Rng + ?Sized>(
    config: &DetectorConfig,
    anchors: &AnchorSet,
    trunk: &Trunk<T>,
    gts: &[BBox],
    rng: &mut R,
) -> Result<TrainTargets> {
    let m = match_anchors(&anchors.boxes, gts, config.rpn_pos_iou, config.rpn_neg_iou)?;
    let max_pos = (config.rpn_batch as f64 * config.rpn_pos_fraction).floor() as usize;
    let pos = sample(&m.positives(), max_pos, rng);
    let neg = sample(&m.negatives(), config.rpn_batch - pos.len(), rng);
    let mut rpn_picks: Vec<(usize, bool)> = pos.iter().map(|&i| (i, true)).chain(neg.iter().map(|&i| (i, false))).collect();
    rpn_picks.sort_unstable();
    let rpn_reg = pos.iter().map(|&i| (i, m.targets[i])).collect();

    let proposals = propose(config, anchors, trunk, config.pre_nms_topk_train, config.post_nms_topk_train)?;
    let candidates: Vec<BBox> = proposals.iter().map(|p| p.bbox).chain(gts.iter().copied()).collect();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut best_gt = vec![0usize; candidates.len()];
    let (lo, hi) = config.roi_bg_iou;
    for (i, c) in candidates.iter().enumerate() {
        let (mut best, mut arg) = (0.0f64, 0usize);
        for (j, g) in gts.iter().enumerate() {
            let v = iou(c, g);
            if v > best {
                best = v;
                arg = j;
            }
        }
        best_gt[i] = arg;
        if !gts.is_empty() && best >= config.roi_fg_iou {
            fg.push(i);
        } else if best >= lo && best < hi {
            bg.push(i);
        }
    }
    let max_fg = (config.roi_batch as f64 * config.roi_pos_fraction).floor() as usize;
    let fg = sample(&fg, max_fg, rng);
    let bg = sample(&bg, config.roi_batch - fg.len(), rng);
    let coder = BoxCoder::new(config.head_box_weights);
    let mut rois = Vec::with_capacity(fg.len() + bg.len());
    let mut roi_labels = Vec::with_capacity(rois.capacity());
    let mut roi_reg = Vec::with_capacity(fg.len());
    for &i in &fg {
        roi_reg.push((rois.len(), coder.encode(&gts[best_gt[i]], &candidates[i])?));
        rois.push(candidates[i]);
        roi_labels.push(1);
    }
    for &i in &bg {
        rois.push(candidates[i]);
        roi_labels.push(0);
    }
    Ok(TrainTargets {
        rpn_picks,
        rpn_reg,
        rois,
        roi_labels,
        roi_reg,
    })
}

struct LossGrads<T> {
    head: Head<T>,
    d_rpn_logits: Tensor<T>,
    d_rpn_deltas: Tensor<T>,
    d_head_logits: Vec<T>,
    d_head_deltas: Vec<T>,
}

fn evaluate<T: Scalar>(
    net: &DetectorNet<T>,
    config: &DetectorConfig,
    trunk: &Trunk<T>,
    targets: &TrainTargets,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let layout = RpnLayout {
        per_cell: config.anchors_per_cell(),
        plane: trunk.rpn_logits.plane(),
    };
    let norm = T::of(targets.rpn_picks.len().max(1) as f64);
    let picks: Vec<(usize, bool)> = targets.rpn_picks.iter().map(|&(i, p)| (layout.logit_index(i), p)).collect();
    let (rpn_cls, g_logits) = bce_with_logits(&trunk.rpn_logits.data, &picks, norm);
    let mut pred = Vec::with_capacity(4 * targets.rpn_reg.len());
    let mut target = Vec::with_capacity(pred.capacity());
    for (i, t) in &targets.rpn_reg {
        for (k, tv) in t.iter().enumerate() {
            pred.push(trunk.rpn_deltas.data[layout.delta_index(*i, k)]);
            target.push(T::of(*tv));
        }
    }
    let (rpn_reg, g_pred) = smooth_l1(&pred, &target, RPN_BETA, norm);
    let mut g_deltas = vec![T::zero(); trunk.rpn_deltas.data.len()];
    for (n, (i, _)) in targets.rpn_reg.iter().enumerate() {
        for k in 0..4 {
            g_deltas[layout.delta_index(*i, k)] += g_pred[4 * n + k];
        }
    }

    let head = net.head(&trunk.feature, &targets.rois, config.roi_pool_size)?;
    let r = targets.rois.len();
    let (head_cls, d_head_logits) = if r > 0 {
        softmax_cross_entropy(&head.logits, 2, &targets.roi_labels)
    } else {
        (T::zero(), Vec::new())
    };
    let hnorm = T::of(r.max(1) as f64);
    let mut hp = Vec::with_capacity(4 * targets.roi_reg.len());
    let mut ht = Vec::with_capacity(hp.capacity());
    for (i, t) in &targets.roi_reg {
        for (k, tv) in t.iter().enumerate() {
            hp.push(head.deltas[4 * i + k]);
            ht.push(T::of(*tv));
        }
    }
    let (head_reg, g_hp) = smooth_l1(&hp, &ht, HEAD_BETA, hnorm);
    let mut d_head_deltas = vec![T::zero(); head.deltas.len()];
    for (n, (i, _)) in targets.roi_reg.iter().enumerate() {
        for k in 0..4 {
            d_head_deltas[4 * i + k] += g_hp[4 * n + k];
        }
    }
    let losses = LossBreakdown {
        rpn_cls: f(rpn_cls),
        rpn_reg: f(rpn_reg),
        head_cls: f(head_cls),
        head_reg: f(head_reg),
        total: f(rpn_cls + rpn_reg + head_cls + head_reg),
    };
    let like = |t: &Tensor<T>, data: Vec<T>| Tensor::from_vec(t.channels, t.height, t.width, data);
    Ok((
        losses,
        LossGrads {
            head,
            d_rpn_logits: like(&trunk.rpn_logits, g_logits)?,
            d_rpn_deltas: like(&trunk.rpn_deltas, g_deltas)?,
            d_head_logits,
            d_head_deltas,
        },
    ))
}

/// Loss for fixed targets, without gradients.
pub fn compute_loss<T: Scalar>(net: &DetectorNet<T>, config: &DetectorConfig, x: &Tensor<T>, targets: &TrainTargets) -> Result<LossBreakdown> {
    let trunk = net.trunk(x)?;
    Ok(evaluate(net, config, &trunk, targets)?.0)
}

/// Loss for fixed targets with parameter gradients accumulated into `net`.
pub fn loss_and_backward<T: Scalar>(
    net: &mut DetectorNet<T>,
    config: &DetectorConfig,
    trunk: &Trunk<T>,
    targets: &TrainTargets,
) -> Result<LossBreakdown> {
    let (losses, g) = evaluate(net, config, trunk, targets)?;
    let d_feature = if g.head.rois > 0 {
        Some(net.head_backward(&g.head, &g.d_head_logits, &g.d_head_deltas)?)
    } else {
        None
    };
    net.trunk_backward(trunk, &g.d_rpn_logits, &g.d_rpn_deltas, d_feature.as_ref())?;
    Ok(losses)
}

fn flip_horizontal(x: &Tensor<f32>, boxes: &[BBox]) -> (Tensor<f32>, Vec<BBox>) {
    let w = x.width;
    let mut out = x.clone();
    for row in out.data.chunks_mut(w) {
        row.reverse();
    }
    let wf = w as f64;
    let flipped = boxes.iter().map(|b| BBox::raw(wf - b.x_max, b.y_min, wf - b.x_min, b.y_max)).collect();
    (out, flipped)
}

fn clip_gradients(net: &mut DetectorNet<f32>, max_norm: f64) {
    let sq: f64 = net
        .params()
        .iter()
        .flat_map(|(_, p)| p.grad.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for (_, p) in net.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn initial_model(set: &dyn ImageSet, config: &DetectorConfig, schedule: &TrainSchedule, init: &InitMode) -> Result<DetectionModel> {
    let mut model = DetectionModel::initialize(config, schedule.seed)?;
    if let InitMode::Expand3(src) = init {
        if src.config.input_channels != 3 || config.input_channels != 6 {
            return Err(Error::Config("kernel expansion goes from a 3-channel to a 6-channel model".into()));
        }
        let same_arch = src.config.backbone_channels == config.backbone_channels
            && src.config.rpn_channels == config.rpn_channels
            && src.config.head_hidden == config.head_hidden
            && src.config.roi_pool_size == config.roi_pool_size
            && src.config.anchors_per_cell() == config.anchors_per_cell();
        if !same_arch {
            return Err(Error::Config("source model architecture differs from the configuration".into()));
        }
        let mut net = src.net.clone();
        net.backbone[0] = expand_first_layer(&src.net.backbone[0], config.halve_expanded)?;
        model.net = net;
    }
    if set.channels() != config.input_channels {
        return Err(Error::Dimension(format!(
            "training images have {} channels, model expects {}",
            set.channels(),
            config.input_channels
        )));
    }
    model.norm = compute_norm_stats(set, config.input_channels)?;
    Ok(model)
}

/// Trains on `set` and calls `on_epoch` after every epoch with the current
/// model. With zero epochs the initialised model (with statistics of `set`)
/// is returned.
pub fn train_detector(
    set: &dyn ImageSet,
    config: &DetectorConfig,
    schedule: &TrainSchedule,
    init: &InitMode,
    on_epoch: &mut dyn FnMut(&DetectionModel) -> Result<()>,
) -> Result<DetectionModel> {
    config.validate()?;
    schedule.validate()?;
    if set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut model = initial_model(set, config, schedule, init)?;
    let anchors = config.anchors()?;
    let mut opt = Sgd::new(schedule.momentum, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x7a11);
    for epoch in 1..=schedule.epochs {
        let start = Instant::now();
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..set.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut sum = LossBreakdown::default();
        for &idx in &order {
            let img = normalize(&set.image(idx)?, &model.norm)?;
            let mut x = img.to_tensor();
            let mut gts = set.boxes(idx);
            if schedule.hflip && rng.random_bool(0.5) {
                (x, gts) = flip_horizontal(&x, &gts);
            }
            model.net.zero_grad();
            let trunk = model.net.trunk(&x)?;
            let targets = sample_targets(config, &anchors, &trunk, &gts, &mut rng)?;
            let losses = loss_and_backward(&mut model.net, config, &trunk, &targets)?;
            if !losses.total.is_finite() {
                return Err(Error::NumericDomain(format!(
                    "detector loss diverged at epoch {epoch} on {}",
                    set.id(idx)
                )));
            }
            if let Some(max) = schedule.max_grad_norm {
                clip_gradients(&mut model.net, max);
            }
            opt.step(model.net.params_mut(), lr);
            sum.accumulate(&losses);
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: sum.scaled(1.0 / set.len() as f64),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "detector epoch {epoch}: lr {lr:e}, loss {:.4} (rpn {:.4}/{:.4}, head {:.4}/{:.4}), {:.1}s",
            record.loss.total,
            record.loss.rpn_cls,
            record.loss.rpn_reg,
            record.loss.head_cls,
            record.loss.head_reg,
            record.seconds
        );
        model.history.push(record);
        on_epoch(&model)?;
    }
    Ok(model)
}
