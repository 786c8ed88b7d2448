//! Day/night image translation: a learned cycle-consistent GAN and an
//! analytic oracle with the same interface.

mod gan;
pub mod oracle;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use gan::{Discriminator, Generator};
pub use oracle::OracleParams;
pub use train::{train_cycle_gan, CycleGan, Fakes, GeneratorLosses, TranslatorEpoch};

use crate::checkpoint::Bundle;
use crate::dataset::{Authenticity, DatasetSplit, Domain, ImageBuffer, Sample, ValueRange};
use crate::{Error, Result};

/// `Forward` maps the source domain to the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    Learned,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanHyperparams {
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Side of the random training crops; 0 trains on whole images.
    pub crop_size: usize,
    pub base_filters: usize,
    pub residual_blocks: usize,
    /// Defaults to the larger of the two domain sizes.
    pub steps_per_epoch: Option<usize>,
}

impl Default for GanHyperparams {
    fn default() -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_identity: 5.0,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 5,
            batch_size: 1,
            seed: 0,
            crop_size: 64,
            base_filters: 8,
            residual_blocks: 2,
            steps_per_epoch: None,
        }
    }
}

impl GanHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("translator hyperparameters: {m}")));
        if self.batch_size != 1 {
            return bad("only batch size 1 is supported");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.lambda_cycle < 0.0 || self.lambda_identity < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.base_filters == 0 {
            return bad("base_filters must be positive");
        }
        if !self.crop_size.is_multiple_of(4) {
            return bad("crop_size must be a multiple of 4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Translator {
    Oracle { params: OracleParams, inverse: bool },
    Learned(Generator<f32>),
}

/// Two opposite translators between a source and a target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorPair {
    pub source: Domain,
    pub target: Domain,
    pub forward: Translator,
    pub backward: Translator,
    /// Present for learned pairs.
    pub hyperparams: Option<GanHyperparams>,
    pub history: Vec<TranslatorEpoch>,
}

impl TranslatorPair {
    pub fn oracle(source: Domain, params: OracleParams) -> Result<Self> {
        if !params.is_valid() {
            return Err(Error::Config(format!("invalid oracle parameters {params:?}")));
        }
        Ok(Self {
            source,
            target: source.flipped(),
            forward: Translator::Oracle { params, inverse: false },
            backward: Translator::Oracle { params, inverse: true },
            hyperparams: None,
            history: Vec::new(),
        })
    }

    pub fn kind(&self) -> TranslatorKind {
        match self.forward {
            Translator::Oracle { .. } => TranslatorKind::Oracle,
            Translator::Learned(_) => TranslatorKind::Learned,
        }
    }

    fn translator(&self, direction: Direction) -> &Translator {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Domain produced by translating in `direction`.
    pub fn output_domain(&self, direction: Direction) -> Domain {
        match direction {
            Direction::Forward => self.target,
            Direction::Backward => self.source,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (kind_meta, nets) = match (&self.forward, &self.backward) {
            (Translator::Oracle { params, .. }, _) => (json!({"kind": "oracle", "oracle": params}), None),
            (Translator::Learned(f), Translator::Learned(b)) => (json!({"kind": "learned"}), Some((f, b))),
            _ => return Err(Error::Config("mixed translator pair cannot be saved".into())),
        };
        let mut meta = json!({
            "format": "translator",
            "version": 1,
            "source": self.source,
            "target": self.target,
            "hyperparams": self.hyperparams,
            "history": self.history,
        });
        for (k, v) in kind_meta.as_object().expect("object") {
            meta[k] = v.clone();
        }
        let mut bundle = Bundle::new(meta);
        if let Some((f, b)) = nets {
            bundle.push_module("forward", f);
            bundle.push_module("backward", b);
        }
        bundle.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle = Bundle::load(path)?;
        let meta = &bundle.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some("translator") {
            return Err(Error::Format {
                offset: 0,
                message: "bundle is not a translator".into(),
            });
        }
        let source: Domain = meta_field(meta, "source")?;
        let hyperparams: Option<GanHyperparams> = meta_field(meta, "hyperparams")?;
        let history: Vec<TranslatorEpoch> = meta_field(meta, "history")?;
        let kind: TranslatorKind = meta_field(meta, "kind")?;
        let mut pair = match kind {
            TranslatorKind::Oracle => Self::oracle(source, meta_field(meta, "oracle")?)?,
            TranslatorKind::Learned => {
                let hp = hyperparams.clone().ok_or_else(|| Error::Format {
                    offset: 0,
                    message: "learned translator bundle lacks hyperparameters".into(),
                })?;
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                let mut f = Generator::new(hp.base_filters, hp.residual_blocks, &mut rng);
                let mut b = Generator::new(hp.base_filters, hp.residual_blocks, &mut rng);
                bundle.load_module("forward", &mut f)?;
                bundle.load_module("backward", &mut b)?;
                Self {
                    source,
                    target: source.flipped(),
                    forward: Translator::Learned(f),
                    backward: Translator::Learned(b),
                    hyperparams: None,
                    history: Vec::new(),
                }
            }
        };
        pair.hyperparams = hyperparams;
        pair.history = history;
        Ok(pair)
    }
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T> {
    let v = meta.get(key).cloned().ok_or_else(|| Error::Format {
        offset: 0,
        message: format!("translator bundle lacks `{key}`"),
    })?;
    serde_json::from_value(v).map_err(|e| Error::Format {
        offset: 0,
        message: format!("translator bundle field `{key}`: {e}"),
    })
}

/// Trains a learned pair mapping `source` images (domain A) to `target`
/// images (domain B) and back.
pub fn train_translator(source: &DatasetSplit, target: &DatasetSplit, hp: &GanHyperparams) -> Result<TranslatorPair> {
    let source_domain = source
        .samples
        .first()
        .map(|s| s.domain)
        .ok_or_else(|| Error::Config("empty source split".into()))?;
    let target_domain = target
        .samples
        .first()
        .map(|s| s.domain)
        .ok_or_else(|| Error::Config("empty target split".into()))?;
    let (gan, history) = train_cycle_gan(source, target, hp)?;
    Ok(TranslatorPair {
        source: source_domain,
        target: target_domain,
        forward: Translator::Learned(gan.g_ab),
        backward: Translator::Learned(gan.g_ba),
        hyperparams: Some(hp.clone()),
        history,
    })
}

/// Translates one 3-channel image; the output has the input's shape and
/// value range.
pub fn translate(pair: &TranslatorPair, image: &ImageBuffer, direction: Direction) -> Result<ImageBuffer> {
    if image.channels() != 3 {
        return Err(Error::Dimension(format!("translators take 3 channels, got {}", image.channels())));
    }
    match pair.translator(direction) {
        Translator::Oracle { params, inverse } => {
            let inverse = *inverse;
            Ok(oracle::apply(params, image, inverse))
        }
        Translator::Learned(g) => {
            let x = image.to_range(ValueRange::Sym11).to_tensor();
            let y = g.forward(&x)?;
            Ok(ImageBuffer::from_tensor_clamped(&y, ValueRange::Sym11).to_range(image.range()))
        }
    }
}

/// Mean absolute difference between an image and its reconstruction.
pub fn cycle_loss(image: &ImageBuffer, reconstruction: &ImageBuffer) -> Result<f64> {
    if (image.channels(), image.height(), image.width())
        != (reconstruction.channels(), reconstruction.height(), reconstruction.width())
    {
        return Err(Error::Dimension("reconstruction shape differs from input".into()));
    }
    let r = reconstruction.to_range(image.range());
    let n = image.data().len().max(1) as f64;
    Ok(image.data().iter().zip(r.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n)
}

/// `train-day` becomes `fake-train-night`, and so on.
pub fn fake_split_name(name: &str) -> String {
    let swapped: Vec<&str> = name
        .split('-')
        .map(|t| match t {
            "day" => "night",
            "night" => "day",
            other => other,
        })
        .collect();
    format!("fake-{}", swapped.join("-"))
}

/// Translates every sample. Outputs are snapped to 8 bits so that a split
/// written to disk and read back equals the in-memory result.
pub fn translate_split(pair: &TranslatorPair, split: &DatasetSplit, direction: Direction) -> Result<DatasetSplit> {
    let out_domain = pair.output_domain(direction);
    let mut samples = Vec::with_capacity(split.len());
    for s in &split.samples {
        if s.domain == out_domain {
            log::warn!("sample {} is already in the {} domain", s.id, out_domain.as_str());
        }
        let image = translate(pair, &s.image, direction)?.quantized();
        samples.push(Sample {
            id: format!("fake-{}", s.id),
            image,
            annotations: s.annotations.clone(),
            domain: out_domain,
            authenticity: Authenticity::Fake,
            extra: s.extra.clone(),
        });
    }
    Ok(DatasetSplit {
        name: fake_split_name(&split.name),
        seed: split.seed,
        samples,
        extra: split.extra.clone(),
    })
}
