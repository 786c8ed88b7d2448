//! Six-channel samples: a real image stacked with its translated
//! counterpart, per-channel normalisation and first-layer kernel expansion.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sixchan_nn::{Conv2d, ConvSpec, Param, Scalar};

use crate::dataset::{read_split, Annotation, Authenticity, BBox, DatasetSplit, Domain, ImageBuffer, ImageSet, Sample, ValueRange};
use crate::{Error, Result};

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOrder {
    /// Real image in channels 0..3, translated image in 3..6.
    RealFirst,
    /// Day-domain image first, whichever of the two is real.
    DayFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SixChannelSample {
    pub id: String,
    pub data: ImageBuffer,
    pub channel_order: ChannelOrder,
    pub real_domain: Domain,
    pub annotations: Vec<Annotation>,
    /// Ids of the real and fake halves.
    pub source_ids: (String, String),
}

impl SixChannelSample {
    pub fn boxes(&self) -> Vec<BBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }
}

/// Stacks a real sample with its translated counterpart.
pub fn concat6(real: &Sample, fake: &Sample, order: ChannelOrder) -> Result<SixChannelSample> {
    if real.authenticity != Authenticity::Real || fake.authenticity != Authenticity::Fake {
        return Err(Error::Pairing(format!(
            "expected a real and a fake sample, got {} ({:?}) and {} ({:?})",
            real.id, real.authenticity, fake.id, fake.authenticity
        )));
    }
    if fake.id != format!("fake-{}", real.id) {
        return Err(Error::Pairing(format!("{} is not the translation of {}", fake.id, real.id)));
    }
    if real.image.channels() != 3 || fake.image.channels() != 3 {
        return Err(Error::Dimension("both halves must have 3 channels".into()));
    }
    if (real.image.height(), real.image.width()) != (fake.image.height(), fake.image.width()) {
        return Err(Error::Dimension(format!(
            "{} is {}x{} but {} is {}x{}",
            real.id,
            real.image.height(),
            real.image.width(),
            fake.id,
            fake.image.height(),
            fake.image.width()
        )));
    }
    let r = real.image.to_range(ValueRange::Unit01);
    let f = fake.image.to_range(ValueRange::Unit01);
    let real_first = match order {
        ChannelOrder::RealFirst => true,
        ChannelOrder::DayFirst => real.domain == Domain::Day,
    };
    let data = if real_first { r.concat(&f)? } else { f.concat(&r)? };
    Ok(SixChannelSample {
        id: real.id.clone(),
        data,
        channel_order: order,
        real_domain: real.domain,
        annotations: real.annotations.clone(),
        source_ids: (real.id.clone(), fake.id.clone()),
    })
}

/// Matches every real sample with `fake-<id>` from the fake split.
pub fn pair_indices(real: &DatasetSplit, fake: &DatasetSplit) -> Result<Vec<(usize, usize)>> {
    let by_id: HashMap<&str, usize> = fake.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut pairs = Vec::with_capacity(real.len());
    let mut missing = Vec::new();
    for (i, s) in real.samples.iter().enumerate() {
        match by_id.get(format!("fake-{}", s.id).as_str()) {
            Some(&j) => pairs.push((i, j)),
            None => missing.push(s.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Pairing(format!("no translated counterpart for: {}", missing.join(", "))));
    }
    if fake.len() != real.len() {
        let known: std::collections::HashSet<String> = real.samples.iter().map(|s| format!("fake-{}", s.id)).collect();
        let extra: Vec<&str> = fake.samples.iter().map(|s| s.id.as_str()).filter(|id| !known.contains(*id)).collect();
        return Err(Error::Pairing(format!("translated samples without a real source: {}", extra.join(", "))));
    }
    Ok(pairs)
}

/// A real split and its translation viewed as six-channel samples, built on
/// demand.
pub struct PairedSplit<'a> {
    real: &'a DatasetSplit,
    fake: &'a DatasetSplit,
    pairs: Vec<(usize, usize)>,
    order: ChannelOrder,
}

impl<'a> PairedSplit<'a> {
    pub fn new(real: &'a DatasetSplit, fake: &'a DatasetSplit, order: ChannelOrder) -> Result<Self> {
        let pairs = pair_indices(real, fake)?;
        Ok(Self { real, fake, pairs, order })
    }

    pub fn sample(&self, index: usize) -> Result<SixChannelSample> {
        let (i, j) = self.pairs[index];
        concat6(&self.real.samples[i], &self.fake.samples[j], self.order)
    }

    pub fn order(&self) -> ChannelOrder {
        self.order
    }
}

impl ImageSet for PairedSplit<'_> {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn channels(&self) -> usize {
        6
    }

    fn id(&self, index: usize) -> String {
        self.real.samples[self.pairs[index].0].id.clone()
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        Ok(self.sample(index)?.data)
    }

    fn boxes(&self, index: usize) -> Vec<BBox> {
        self.real.samples[self.pairs[index].0].boxes()
    }
}

impl ImageSet for Vec<SixChannelSample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn channels(&self) -> usize {
        6
    }

    fn id(&self, index: usize) -> String {
        self[index].id.clone()
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        Ok(self[index].data.clone())
    }

    fn boxes(&self, index: usize) -> Vec<BBox> {
        self[index].boxes()
    }
}

/// Per-channel mean and (floored) population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Stats of `[a, b]` stacked along channels.
    pub fn concat(&self, other: &NormStats) -> NormStats {
        NormStats {
            mean: self.mean.iter().chain(&other.mean).copied().collect(),
            std: self.std.iter().chain(&other.std).copied().collect(),
        }
    }
}

/// Exact statistics over every pixel of every image in `set`.
pub fn compute_norm_stats(set: &dyn ImageSet, channels: usize) -> Result<NormStats> {
    if set.is_empty() {
        return Err(Error::Config("cannot compute statistics of an empty set".into()));
    }
    let mut sum = vec![0.0f64; channels];
    let mut count = 0usize;
    for i in 0..set.len() {
        let img = checked(set, i, channels)?;
        for (c, s) in sum.iter_mut().enumerate() {
            *s += img.channel(c).iter().map(|&v| v as f64).sum::<f64>();
        }
        count += img.plane();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; channels];
    for i in 0..set.len() {
        let img = checked(set, i, channels)?;
        for (c, s) in sq.iter_mut().enumerate() {
            *s += img.channel(c).iter().map(|&v| (v as f64 - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

fn checked(set: &dyn ImageSet, i: usize, channels: usize) -> Result<ImageBuffer> {
    let img = set.image(i)?.to_range(ValueRange::Unit01);
    if img.channels() != channels {
        return Err(Error::Dimension(format!(
            "image {} has {} channels, expected {channels}",
            set.id(i),
            img.channels()
        )));
    }
    Ok(img)
}

/// `(x - mean) / std` per channel on the `[0, 1]` representation.
pub fn normalize(image: &ImageBuffer, stats: &NormStats) -> Result<ImageBuffer> {
    if image.channels() != stats.channels() {
        return Err(Error::Dimension(format!(
            "image has {} channels, statistics cover {}",
            image.channels(),
            stats.channels()
        )));
    }
    let u = image.to_range(ValueRange::Unit01);
    let p = u.plane();
    let data = u
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / p;
            ((v as f64 - stats.mean[c]) / stats.std[c]) as f32
        })
        .collect();
    ImageBuffer::new(u.height(), u.width(), u.channels(), ValueRange::Standardized, data)
}

/// Inverse of [`normalize`], returning a `[0, 1]` image.
pub fn denormalize(image: &ImageBuffer, stats: &NormStats) -> Result<ImageBuffer> {
    if image.channels() != stats.channels() {
        return Err(Error::Dimension("statistics do not match image channels".into()));
    }
    let p = image.plane();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / p;
            ((v as f64 * stats.std[c] + stats.mean[c]) as f32).clamp(0.0, 1.0)
        })
        .collect();
    ImageBuffer::new(image.height(), image.width(), image.channels(), ValueRange::Unit01, data)
}

/// Duplicates 3-channel first-layer kernels over 6 input channels. With
/// `halve`, both copies are scaled by 0.5 so that a duplicated input gives
/// the original response.
pub fn expand_first_layer<T: Scalar>(conv: &Conv2d<T>, halve: bool) -> Result<Conv2d<T>> {
    let spec = conv.spec;
    if spec.in_channels != 3 {
        return Err(Error::Dimension(format!(
            "kernel expansion needs 3 input channels, got {}",
            spec.in_channels
        )));
    }
    let k2 = spec.kernel * spec.kernel;
    let scale = if halve { T::of(0.5) } else { T::one() };
    let mut weight = Vec::with_capacity(spec.out_channels * 6 * k2);
    for f in 0..spec.out_channels {
        let src = &conv.weight.value[f * 3 * k2..(f + 1) * 3 * k2];
        for _ in 0..2 {
            weight.extend(src.iter().map(|&w| w * scale));
        }
    }
    let new_spec = ConvSpec { in_channels: 6, ..spec };
    let mut out = Conv2d::zeros(new_spec);
    out.weight = Param {
        value: weight,
        ..Param::zeros(&[spec.out_channels, 6, spec.kernel, spec.kernel], conv.weight.decay)
    };
    out.bias.value.clone_from(&conv.bias.value);
    Ok(out)
}

/// Pairs of image files forming six-channel samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub order: ChannelOrder,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub real: PathBuf,
    pub fake: PathBuf,
}

/// Pairs the on-disk splits in `real_dir` and `fake_dir` by id.
pub fn pack_pair_manifest(real_dir: &Path, fake_dir: &Path, order: ChannelOrder) -> Result<PairManifest> {
    let real = read_split(real_dir)?;
    let fake = read_split(fake_dir)?;
    let pairs = pair_indices(&real, &fake)?
        .into_iter()
        .map(|(i, j)| PairEntry {
            real: real_dir.join(crate::dataset::sample_file_name(&real.samples[i].id)),
            fake: fake_dir.join(crate::dataset::sample_file_name(&fake.samples[j].id)),
        })
        .collect();
    Ok(PairManifest { order, pairs })
}

impl PairManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&text, e))
    }
}

/// Loads every pair of a manifest, reading annotations and tags from the
/// manifests of the splits the image files belong to.
pub fn load_sixchannel(manifest: &PairManifest) -> Result<Vec<SixChannelSample>> {
    let mut splits: BTreeMap<PathBuf, DatasetSplit> = BTreeMap::new();
    let mut lookup = |file: &Path| -> Result<Sample> {
        let dir = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        if !splits.contains_key(&dir) {
            let split = read_split(&dir)?;
            splits.insert(dir.clone(), split);
        }
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        splits[&dir]
            .samples
            .iter()
            .find(|s| crate::dataset::sample_file_name(&s.id) == name)
            .cloned()
            .ok_or_else(|| Error::Pairing(format!("{} is not listed in its split manifest", file.display())))
    };
    manifest
        .pairs
        .iter()
        .map(|p| {
            let real = lookup(&p.real)?;
            let fake = lookup(&p.fake)?;
            concat6(&real, &fake, manifest.order)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_splits, night_oracle_params, write_split, SceneConfig};
    use crate::translate::{translate_split, Direction, TranslatorPair};
    use rand::SeedableRng;

    fn night_pair() -> (DatasetSplit, DatasetSplit) {
        let cfg = SceneConfig::default();
        let splits = generate_splits(&cfg, 3).unwrap();
        let pair = TranslatorPair::oracle(Domain::Day, night_oracle_params(&cfg)).unwrap();
        let real = splits[1].clone();
        let fake = translate_split(&pair, &real, Direction::Backward).unwrap();
        (real, fake)
    }

    #[test]
    fn halves_are_the_inputs() {
        let (real, fake) = night_pair();
        let s = concat6(&real.samples[0], &fake.samples[0], ChannelOrder::RealFirst).unwrap();
        assert_eq!(s.data.channels(), 6);
        assert_eq!(s.data.slice_channels(0, 3), real.samples[0].image);
        assert_eq!(s.data.slice_channels(3, 6), fake.samples[0].image);
        let d = concat6(&real.samples[0], &fake.samples[0], ChannelOrder::DayFirst).unwrap();
        assert_eq!(d.data.slice_channels(0, 3), fake.samples[0].image);
        assert_eq!(d.data.slice_channels(3, 6), real.samples[0].image);
    }

    #[test]
    fn pairing_errors() {
        let (real, fake) = night_pair();
        assert!(matches!(
            concat6(&real.samples[0], &fake.samples[1], ChannelOrder::RealFirst),
            Err(Error::Pairing(_))
        ));
        assert!(matches!(
            concat6(&fake.samples[0], &real.samples[0], ChannelOrder::RealFirst),
            Err(Error::Pairing(_))
        ));
        let mut short = fake.clone();
        short.samples.remove(1);
        match PairedSplit::new(&real, &short, ChannelOrder::RealFirst) {
            Err(Error::Pairing(m)) => assert!(m.contains(&real.samples[1].id), "{m}"),
            _ => panic!("expected pairing error"),
        }
    }

    #[test]
    fn size_mismatch() {
        let (real, fake) = night_pair();
        let mut f = fake.samples[0].clone();
        f.image = ImageBuffer::filled(128, 128, 3, 0.0).unwrap();
        assert!(matches!(
            concat6(&real.samples[0], &f, ChannelOrder::RealFirst),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn normalisation_round_trip() {
        let (real, fake) = night_pair();
        let paired = PairedSplit::new(&real, &fake, ChannelOrder::RealFirst).unwrap();
        let stats = compute_norm_stats(&paired, 6).unwrap();
        let img = paired.image(0).unwrap();
        let n = normalize(&img, &stats).unwrap();
        assert_eq!(n.range(), ValueRange::Standardized);
        let back = denormalize(&n, &stats).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(compute_norm_stats(&real, 6).is_err());
    }

    #[test]
    fn constant_channel_uses_std_floor() {
        let s = DatasetSplit::new(
            "flat",
            0,
            vec![Sample {
                id: "x".into(),
                image: ImageBuffer::filled(4, 4, 3, 0.5).unwrap(),
                annotations: vec![],
                domain: Domain::Day,
                authenticity: Authenticity::Real,
                extra: Default::default(),
            }],
        );
        let stats = compute_norm_stats(&s, 3).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR; 3]);
        assert!(normalize(&s.samples[0].image, &stats).unwrap().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn expansion_reproduces_three_channel_response() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f64>::he(ConvSpec::new(3, 4, 3, 2, 1), &mut rng);
        let six = expand_first_layer(&conv, true).unwrap();
        let x = sixchan_nn::Tensor::from_vec(3, 8, 8, (0..192).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y3 = conv.forward(&x).unwrap();
        let y6 = six.forward(&x.concat_channels(&x).unwrap()).unwrap();
        for (a, b) in y3.data.iter().zip(&y6.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let full = expand_first_layer(&conv, false).unwrap();
        assert_eq!(&full.weight.value[..27], &conv.weight.value[..27]);
        assert_eq!(&full.weight.value[27..54], &conv.weight.value[..27]);
        assert!(expand_first_layer(&six, true).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let (real, fake) = night_pair();
        let dir = tempfile::tempdir().unwrap();
        let (rd, fd) = (dir.path().join("real"), dir.path().join("fake"));
        write_split(&real, &rd).unwrap();
        write_split(&fake, &fd).unwrap();
        let m = pack_pair_manifest(&rd, &fd, ChannelOrder::RealFirst).unwrap();
        let mp = dir.path().join("pairs.json");
        m.save(&mp).unwrap();
        let loaded = load_sixchannel(&PairManifest::load(&mp).unwrap()).unwrap();
        let direct = PairedSplit::new(&real, &fake, ChannelOrder::RealFirst).unwrap();
        assert_eq!(loaded.len(), 3);
        for (i, s) in loaded.iter().enumerate() {
            assert_eq!(s, &direct.sample(i).unwrap());
        }
    }
}
