//! Images, boxes, samples and splits; the synthetic day/night scene
//! generator; BDD100K ingestion; and the PNG + JSON manifest format.

mod bdd;
mod io;
mod scene;

pub use bdd::{ingest_bdd, BddFilter, CropMapping};
pub use io::{read_split, sample_file_name, write_split, MANIFEST_FILE};
pub use scene::{generate_scene, generate_splits, night_oracle_params, SceneConfig};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sixchan_nn::Tensor;

use crate::{Error, Result};

/// Side length of every protocol image.
pub const IMAGE_SIDE: usize = 256;

/// The only object class.
pub const CAR: u32 = 0;

/// Declared value range of an [`ImageBuffer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[0, 1]`
    Unit01,
    /// `[-1, 1]`
    Sym11,
    /// Zero-mean, unit-variance network input; unbounded.
    Standardized,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::Unit01 => (0.0, 1.0),
            ValueRange::Sym11 => (-1.0, 1.0),
            ValueRange::Standardized => (f32::MIN, f32::MAX),
        }
    }
}

/// Channels-first raster with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, range: ValueRange, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{} values cannot fill {height}x{width}x{channels}",
                data.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(bad) = data.iter().position(|v| !(lo..=hi).contains(v)) {
            return Err(Error::NumericDomain(format!(
                "value {} at index {bad} outside {range:?}",
                data[bad]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            range,
            data,
        })
    }

    /// Builds an image from a tensor, clamping values into `range`.
    pub fn from_tensor_clamped(t: &Tensor<f32>, range: ValueRange) -> Self {
        let (lo, hi) = range.bounds();
        Self {
            height: t.height,
            width: t.width,
            channels: t.channels,
            range,
            data: t.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, ValueRange::Unit01, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Converts between `[0, 1]` and `[-1, 1]` with the affine map
    /// `x -> 2x - 1` (or its inverse). Conversions involving standardized
    /// data only clamp into the target bounds.
    pub fn to_range(&self, range: ValueRange) -> Self {
        let (lo, hi) = range.bounds();
        let data = match (self.range, range) {
            (a, b) if a == b => self.data.clone(),
            (ValueRange::Unit01, ValueRange::Sym11) => self.data.iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect(),
            (ValueRange::Sym11, ValueRange::Unit01) => self.data.iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect(),
            _ => self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        };
        Self {
            data,
            range,
            ..self.header()
        }
    }

    /// Snaps every value to the nearest 8-bit level (UNIT01 only).
    pub fn quantized(&self) -> Self {
        let u = self.to_range(ValueRange::Unit01);
        Self {
            data: u.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
            ..u
        }
    }

    /// Stacks `other` after `self` along the channel axis.
    pub fn concat(&self, other: &ImageBuffer) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        if self.range != other.range {
            return Err(Error::Dimension("cannot concatenate images with different value ranges".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            data,
            ..self.header()
        })
    }

    pub fn slice_channels(&self, start: usize, end: usize) -> Self {
        Self {
            channels: end - start,
            data: self.data[start * self.plane()..end * self.plane()].to_vec(),
            ..self.header()
        }
    }

    /// 8-bit RGB rendering of a 3-channel image.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::Dimension(format!("cannot encode {} channels as RGB", self.channels)));
        }
        let u = self.to_range(ValueRange::Unit01);
        let p = self.plane();
        let mut buf = Vec::with_capacity(p * 3);
        for i in 0..p {
            for c in 0..3 {
                buf.push((u.data[c * p + i] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        Ok(image::RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized above"))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let p = w * h;
        let mut data = vec![0.0f32; p * 3];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * p + i] = px.0[c] as f32 / 255.0;
            }
        }
        Self {
            height: h,
            width: w,
            channels: 3,
            range: ValueRange::Unit01,
            data,
        }
    }

    /// A copy with the same geometry, used for struct-update syntax.
    fn header(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            range: self.range,
            data: Vec::new(),
        }
    }
}

/// Indexed access to annotated images, loaded lazily where possible.
pub trait ImageSet {
    fn len(&self) -> usize;
    fn channels(&self) -> usize;
    fn id(&self, index: usize) -> String;
    fn image(&self, index: usize) -> Result<ImageBuffer>;
    fn boxes(&self, index: usize) -> Vec<BBox>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Validated constructor: requires `x_min < x_max`, `y_min < y_max`.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self::raw(x_min, y_min, x_max, y_max);
        if !(x_min < x_max && y_min < y_max) || !b.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain(format!("degenerate box {:?}", b.as_array())));
        }
        Ok(b)
    }

    /// Unchecked constructor.
    pub const fn raw(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn is_inside(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    pub fn clipped(&self, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self::raw(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: u32,
}

impl Annotation {
    pub fn car(bbox: BBox) -> Self {
        Self { bbox, class_id: CAR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Day,
    Night,
}

impl Domain {
    pub fn flipped(self) -> Self {
        match self {
            Domain::Day => Domain::Night,
            Domain::Night => Domain::Day,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Day => "day",
            Domain::Night => "night",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Authenticity {
    Real,
    Fake,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageBuffer,
    pub annotations: Vec<Annotation>,
    pub domain: Domain,
    pub authenticity: Authenticity,
    /// Unrecognised manifest fields, kept verbatim.
    pub extra: Map<String, Value>,
}

impl Sample {
    pub fn boxes(&self) -> Vec<BBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.annotations {
            if !a.bbox.is_inside(self.image.width(), self.image.height()) {
                return Err(Error::NumericDomain(format!(
                    "sample {}: box {:?} outside {}x{} image",
                    self.id,
                    a.bbox.as_array(),
                    self.image.width(),
                    self.image.height()
                )));
            }
        }
        Ok(())
    }
}

/// Canonical names of the four protocol splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitName {
    TrainDay,
    TrainNight,
    TestDay,
    TestNight,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::TrainDay, SplitName::TrainNight, SplitName::TestDay, SplitName::TestNight];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::TrainDay => "train-day",
            SplitName::TrainNight => "train-night",
            SplitName::TestDay => "test-day",
            SplitName::TestNight => "test-night",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            SplitName::TrainDay | SplitName::TestDay => Domain::Day,
            SplitName::TrainNight | SplitName::TestNight => Domain::Night,
        }
    }

    /// Index used to keep generator seed ranges disjoint.
    fn ordinal(self) -> u64 {
        match self {
            SplitName::TrainDay => 0,
            SplitName::TrainNight => 1,
            SplitName::TestDay => 2,
            SplitName::TestNight => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// `train-day`, `fake-train-night`, ...
    pub name: String,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub extra: Map<String, Value>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, seed: u64, samples: Vec<Sample>) -> Self {
        Self {
            name: name.into(),
            seed,
            samples,
            extra: Map::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenates two splits, keeping sample order.
    pub fn union(&self, other: &DatasetSplit, name: impl Into<String>) -> DatasetSplit {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        DatasetSplit::new(name, self.seed, samples)
    }
}

impl ImageSet for DatasetSplit {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn channels(&self) -> usize {
        self.samples.first().map_or(3, |s| s.image.channels())
    }

    fn id(&self, index: usize) -> String {
        self.samples[index].id.clone()
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        Ok(self.samples[index].image.clone())
    }

    fn boxes(&self, index: usize) -> Vec<BBox> {
        self.samples[index].boxes()
    }
}

/// Several image sets seen as one, in order.
pub struct Chain<'a> {
    parts: Vec<&'a dyn ImageSet>,
}

impl<'a> Chain<'a> {
    pub fn new(parts: Vec<&'a dyn ImageSet>) -> Result<Self> {
        if let Some(first) = parts.first() {
            if parts.iter().any(|p| p.channels() != first.channels()) {
                return Err(Error::Dimension("chained image sets differ in channel count".into()));
            }
        }
        Ok(Self { parts })
    }

    fn locate(&self, mut index: usize) -> (&'a dyn ImageSet, usize) {
        for p in &self.parts {
            if index < p.len() {
                return (*p, index);
            }
            index -= p.len();
        }
        panic!("index out of range for chained image sets");
    }
}

impl ImageSet for Chain<'_> {
    fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    fn channels(&self) -> usize {
        self.parts.first().map_or(3, |p| p.channels())
    }

    fn id(&self, index: usize) -> String {
        let (p, i) = self.locate(index);
        p.id(i)
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        let (p, i) = self.locate(index);
        p.image(i)
    }

    fn boxes(&self, index: usize) -> Vec<BBox> {
        let (p, i) = self.locate(index);
        p.boxes(i)
    }
}
