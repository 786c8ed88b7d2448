//! Convolutional backbone, region proposal head and RoI classification head.

use rand::Rng;
use sixchan_nn::layers::{relu, relu_backward};
use sixchan_nn::param::{scoped, scoped_mut};
use sixchan_nn::roi_pool::{roi_pool, roi_pool_backward, RoiPoolOutput};
use sixchan_nn::{Conv2d, ConvCache, ConvSpec, Linear, Module, Param, Scalar, Tensor};

use super::DetectorConfig;
use crate::dataset::BBox;
use crate::Result;

/// Total downsampling of the backbone.
pub const FEATURE_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet<T> {
    /// Three stride-2 convolutions then one dilated stride-1 convolution,
    /// each followed by ReLU.
    pub backbone: Vec<Conv2d<T>>,
    pub rpn_conv: Conv2d<T>,
    /// One objectness logit per anchor shape.
    pub rpn_cls: Conv2d<T>,
    /// Four deltas per anchor shape.
    pub rpn_reg: Conv2d<T>,
    pub fc: Linear<T>,
    /// Background and car logits.
    pub cls: Linear<T>,
    pub reg: Linear<T>,
}

/// Backbone and RPN activations of one image.
pub struct Trunk<T> {
    pub feature: Tensor<T>,
    pub rpn_logits: Tensor<T>,
    pub rpn_deltas: Tensor<T>,
    backbone: Vec<(ConvCache<T>, Tensor<T>)>,
    rpn_hidden: Tensor<T>,
    rpn_conv: ConvCache<T>,
    rpn_cls: ConvCache<T>,
    rpn_reg: ConvCache<T>,
}

/// RoI head activations for a set of regions.
pub struct Head<T> {
    pub rois: usize,
    /// `rois x 2`
    pub logits: Vec<T>,
    /// `rois x 4`
    pub deltas: Vec<T>,
    pooled: RoiPoolOutput<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> DetectorNet<T> {
    pub fn new<R: Rng + ?Sized>(config: &DetectorConfig, rng: &mut R) -> Self {
        let c = &config.backbone_channels;
        let mut backbone = Vec::with_capacity(4);
        let mut prev = config.input_channels;
        for (i, &out) in c.iter().enumerate() {
            let spec = if i < 3 {
                ConvSpec::new(prev, out, 3, 2, 1)
            } else {
                ConvSpec::new(prev, out, 3, 1, 2).dilated(2)
            };
            backbone.push(Conv2d::he(spec, rng));
            prev = out;
        }
        let a = config.anchors_per_cell();
        let r = config.rpn_channels;
        let pooled = prev * config.roi_pool_size * config.roi_pool_size;
        Self {
            backbone,
            rpn_conv: Conv2d::normal(ConvSpec::new(prev, r, 3, 1, 1), 0.01, rng),
            rpn_cls: Conv2d::normal(ConvSpec::new(r, a, 1, 1, 0), 0.01, rng),
            rpn_reg: Conv2d::normal(ConvSpec::new(r, 4 * a, 1, 1, 0), 0.01, rng),
            fc: Linear::he(pooled, config.head_hidden, rng),
            cls: Linear::normal(config.head_hidden, 2, 0.01, rng),
            reg: Linear::normal(config.head_hidden, 4, 0.001, rng),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.backbone[0].spec.in_channels
    }

    pub fn cast<U: Scalar>(&self) -> DetectorNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            spec: c.spec,
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let lin = |l: &Linear<T>| Linear {
            inputs: l.inputs,
            outputs: l.outputs,
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        DetectorNet {
            backbone: self.backbone.iter().map(conv).collect(),
            rpn_conv: conv(&self.rpn_conv),
            rpn_cls: conv(&self.rpn_cls),
            rpn_reg: conv(&self.rpn_reg),
            fc: lin(&self.fc),
            cls: lin(&self.cls),
            reg: lin(&self.reg),
        }
    }

    pub fn trunk(&self, x: &Tensor<T>) -> Result<Trunk<T>> {
        let mut h = x.clone();
        let mut backbone = Vec::with_capacity(self.backbone.len());
        for conv in &self.backbone {
            let (y, cache) = conv.forward_train(&h)?;
            h = relu(&y);
            backbone.push((cache, h.clone()));
        }
        let (pre, rpn_conv) = self.rpn_conv.forward_train(&h)?;
        let rpn_hidden = relu(&pre);
        let (rpn_logits, rpn_cls) = self.rpn_cls.forward_train(&rpn_hidden)?;
        let (rpn_deltas, rpn_reg) = self.rpn_reg.forward_train(&rpn_hidden)?;
        Ok(Trunk {
            feature: h,
            rpn_logits,
            rpn_deltas,
            backbone,
            rpn_hidden,
            rpn_conv,
            rpn_cls,
            rpn_reg,
        })
    }

    pub fn head(&self, feature: &Tensor<T>, rois: &[BBox], pool_size: usize) -> Result<Head<T>> {
        let boxes: Vec<[f64; 4]> = rois.iter().map(|b| b.as_array()).collect();
        let pooled = roi_pool(feature, &boxes, 1.0 / FEATURE_STRIDE as f64, pool_size)?;
        let n = rois.len();
        let pre = self.fc.forward(n, &pooled.data)?;
        let hidden: Vec<T> = pre.into_iter().map(|v| if v > T::zero() { v } else { T::zero() }).collect();
        let logits = self.cls.forward(n, &hidden)?;
        let deltas = self.reg.forward(n, &hidden)?;
        Ok(Head {
            rois: n,
            logits,
            deltas,
            pooled,
            hidden,
        })
    }

    /// Backpropagates head gradients; returns the feature-map gradient.
    pub fn head_backward(&mut self, head: &Head<T>, d_logits: &[T], d_deltas: &[T]) -> Result<Tensor<T>> {
        let n = head.rois;
        let mut dh = self.cls.backward(n, &head.hidden, d_logits, true).expect("input grad");
        let dh2 = self.reg.backward(n, &head.hidden, d_deltas, true).expect("input grad");
        for ((g, g2), &h) in dh.iter_mut().zip(&dh2).zip(&head.hidden) {
            *g = if h > T::zero() { *g + *g2 } else { T::zero() };
        }
        let dpooled = self.fc.backward(n, &head.pooled.data, &dh, true).expect("input grad");
        Ok(roi_pool_backward(&head.pooled, &dpooled))
    }

    /// Backpropagates RPN output gradients plus an extra feature-map
    /// gradient (from the head) through the trunk.
    pub fn trunk_backward(&mut self, trunk: &Trunk<T>, d_logits: &Tensor<T>, d_deltas: &Tensor<T>, d_feature: Option<&Tensor<T>>) -> Result<()> {
        let g1 = self.rpn_cls.backward(&trunk.rpn_cls, d_logits, true)?.expect("input grad");
        let g2 = self.rpn_reg.backward(&trunk.rpn_reg, d_deltas, true)?.expect("input grad");
        let g = relu_backward(&trunk.rpn_hidden, &g1.add(&g2)?);
        let mut g = self.rpn_conv.backward(&trunk.rpn_conv, &g, true)?.expect("input grad");
        if let Some(d) = d_feature {
            g = g.add(d)?;
        }
        for (i, (conv, (cache, out))) in self.backbone.iter_mut().zip(&trunk.backbone).enumerate().rev() {
            let gy = relu_backward(out, &g);
            match conv.backward(cache, &gy, i > 0)? {
                Some(d) => g = d,
                None => break,
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for DetectorNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = Vec::new();
        for (i, c) in self.backbone.iter().enumerate() {
            v.extend(scoped(&format!("backbone{i}"), vec![("weight".into(), &c.weight), ("bias".into(), &c.bias)]));
        }
        for (name, c) in [("rpn_conv", &self.rpn_conv), ("rpn_cls", &self.rpn_cls), ("rpn_reg", &self.rpn_reg)] {
            v.extend(scoped(name, vec![("weight".into(), &c.weight), ("bias".into(), &c.bias)]));
        }
        for (name, l) in [("fc", &self.fc), ("cls", &self.cls), ("reg", &self.reg)] {
            v.extend(scoped(name, vec![("weight".into(), &l.weight), ("bias".into(), &l.bias)]));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = Vec::new();
        for (i, c) in self.backbone.iter_mut().enumerate() {
            v.extend(scoped_mut(
                &format!("backbone{i}"),
                vec![("weight".into(), &mut c.weight), ("bias".into(), &mut c.bias)],
            ));
        }
        for (name, c) in [("rpn_conv", &mut self.rpn_conv), ("rpn_cls", &mut self.rpn_cls), ("rpn_reg", &mut self.rpn_reg)] {
            v.extend(scoped_mut(name, vec![("weight".into(), &mut c.weight), ("bias".into(), &mut c.bias)]));
        }
        for (name, l) in [("fc", &mut self.fc), ("cls", &mut self.cls), ("reg", &mut self.reg)] {
            v.extend(scoped_mut(name, vec![("weight".into(), &mut l.weight), ("bias".into(), &mut l.bias)]));
        }
        v
    }
}

/// Converts per-anchor indices to positions in the `[A, fh, fw]` and
/// `[4A, fh, fw]` RPN output tensors.
#[derive(Debug, Clone, Copy)]
pub struct RpnLayout {
    pub per_cell: usize,
    pub plane: usize,
}

impl RpnLayout {
    pub fn logit_index(&self, anchor: usize) -> usize {
        let (cell, a) = (anchor / self.per_cell, anchor % self.per_cell);
        a * self.plane + cell
    }

    pub fn delta_index(&self, anchor: usize, k: usize) -> usize {
        let (cell, a) = (anchor / self.per_cell, anchor % self.per_cell);
        (4 * a + k) * self.plane + cell
    }
}
