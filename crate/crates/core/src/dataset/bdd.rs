//! Ingestion of BDD100K-style label files.
//!
//! Images are resized so the shorter side is 256, centre-cropped to 256x256,
//! and boxes follow the same mapping. A box is kept when at least a quarter of
//! its (resized) area survives the crop.

use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{Annotation, Authenticity, BBox, DatasetSplit, Domain, ImageBuffer, Sample, IMAGE_SIDE};
use crate::{Error, Result};

/// Minimum fraction of a box's area that must remain inside the crop.
pub const MIN_RETAINED_AREA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct BddFilter {
    pub timeofday: Domain,
    pub weathers: Vec<String>,
}

impl BddFilter {
    /// Clear or partly cloudy images of one time of day.
    pub fn clear(timeofday: Domain) -> Self {
        Self {
            timeofday,
            weathers: vec!["clear".into(), "partly cloudy".into()],
        }
    }

    pub fn accepts(&self, attrs: &BddAttributes) -> bool {
        let tod = match attrs.timeofday.as_str() {
            "daytime" | "day" => Some(Domain::Day),
            "night" => Some(Domain::Night),
            _ => None,
        };
        tod == Some(self.timeofday) && self.weathers.iter().any(|w| w == &attrs.weather)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct BddAttributes {
    #[serde(default)]
    pub weather: String,
    #[serde(default)]
    pub timeofday: String,
}

#[derive(Debug, Deserialize)]
struct BddBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Deserialize)]
struct BddLabel {
    category: String,
    #[serde(default)]
    box2d: Option<BddBox>,
}

#[derive(Debug, Deserialize)]
struct BddRecord {
    name: String,
    attributes: BddAttributes,
    #[serde(default)]
    labels: Vec<BddLabel>,
}

/// Shorter-side resize followed by a centre crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropMapping {
    pub scale: f64,
    pub resized: (u32, u32),
    pub offset: (f64, f64),
    pub side: usize,
}

impl CropMapping {
    pub fn new(width: u32, height: u32, side: usize) -> Self {
        let scale = side as f64 / width.min(height) as f64;
        let rw = ((width as f64 * scale).round() as u32).max(side as u32);
        let rh = ((height as f64 * scale).round() as u32).max(side as u32);
        let offset = (((rw as usize - side) / 2) as f64, ((rh as usize - side) / 2) as f64);
        Self {
            scale,
            resized: (rw, rh),
            offset,
            side,
        }
    }

    /// Maps a source box into the crop; `None` when too little of it remains.
    pub fn map_box(&self, b: &BBox) -> Option<BBox> {
        let t = BBox::raw(
            b.x_min * self.scale - self.offset.0,
            b.y_min * self.scale - self.offset.1,
            b.x_max * self.scale - self.offset.0,
            b.y_max * self.scale - self.offset.1,
        );
        let clipped = t.clipped(self.side, self.side);
        let full = t.area();
        if full <= 0.0 || clipped.width() <= 0.0 || clipped.height() <= 0.0 {
            return None;
        }
        (clipped.area() / full >= MIN_RETAINED_AREA).then_some(clipped)
    }

    pub fn apply(&self, img: &image::RgbImage) -> image::RgbImage {
        let resized = image::imageops::resize(img, self.resized.0, self.resized.1, image::imageops::FilterType::Triangle);
        image::imageops::crop_imm(
            &resized,
            self.offset.0 as u32,
            self.offset.1 as u32,
            self.side as u32,
            self.side as u32,
        )
        .to_image()
    }
}

/// Reads a BDD100K label file and builds a split of cropped 256x256 samples
/// holding only `car` boxes from images accepted by `filter`.
pub fn ingest_bdd(label_file: &Path, image_dir: &Path, filter: &BddFilter, name: &str) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(label_file).map_err(|e| Error::io(label_file, e))?;
    let raw: Vec<Value> = serde_json::from_str(&text).map_err(|e| Error::json(&text, e))?;
    let mut records = Vec::with_capacity(raw.len());
    let mut bad = Vec::new();
    for (i, v) in raw.into_iter().enumerate() {
        let label = v.get("name").and_then(Value::as_str).unwrap_or("<unnamed>").to_string();
        match serde_json::from_value::<BddRecord>(v) {
            Ok(r) => records.push(r),
            Err(e) => bad.push(format!("record {i} ({label}): {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion(format!("unparseable label records: {}", bad.join("; "))));
    }
    let domain = filter.timeofday;
    let mut samples = Vec::new();
    for r in records.into_iter().filter(|r| filter.accepts(&r.attributes)) {
        let path = image_dir.join(&r.name);
        if !path.exists() {
            log::warn!("skipping {}: image file {} not found", r.name, path.display());
            continue;
        }
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.display().to_string(),
                source: e,
            })?
            .to_rgb8();
        let mapping = CropMapping::new(img.width(), img.height(), IMAGE_SIDE);
        let annotations = r
            .labels
            .iter()
            .filter(|l| l.category == "car")
            .filter_map(|l| l.box2d.as_ref())
            .filter_map(|b| BBox::new(b.x1, b.y1, b.x2, b.y2).ok())
            .filter_map(|b| mapping.map_box(&b))
            .map(Annotation::car)
            .collect();
        let id = Path::new(&r.name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| r.name.clone());
        samples.push(Sample {
            id,
            image: ImageBuffer::from_rgb8(&mapping.apply(&img)),
            annotations,
            domain,
            authenticity: Authenticity::Real,
            extra: Map::new(),
        });
    }
    Ok(DatasetSplit::new(name, 0, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn square_source_maps_whole_frame() {
        let m = CropMapping::new(512, 512, 256);
        let b = m.map_box(&BBox::raw(0.0, 0.0, 512.0, 512.0)).unwrap();
        assert_eq!(b, BBox::raw(0.0, 0.0, 256.0, 256.0));
    }

    #[test]
    fn wide_source_is_centre_cropped() {
        let m = CropMapping::new(1280, 720, 256);
        assert_eq!(m.resized, (455, 256));
        assert_eq!(m.offset, (99.0, 0.0));
        // fully outside on the left
        assert!(m.map_box(&BBox::raw(0.0, 100.0, 200.0, 300.0)).is_none());
        // half inside: 50% retained
        let x_edge = 99.0 / m.scale;
        let b = m.map_box(&BBox::raw(x_edge - 100.0, 100.0, x_edge + 100.0, 300.0)).unwrap();
        assert!(b.x_min.abs() < 1e-9);
        // 20% inside: dropped
        assert!(m.map_box(&BBox::raw(x_edge - 160.0, 100.0, x_edge + 40.0, 300.0)).is_none());
    }

    #[test]
    fn clear_weather_filter() {
        let f = BddFilter::clear(Domain::Night);
        let attrs = |w: &str, t: &str| BddAttributes {
            weather: w.into(),
            timeofday: t.into(),
        };
        assert!(f.accepts(&attrs("clear", "night")));
        assert!(f.accepts(&attrs("partly cloudy", "night")));
        assert!(!f.accepts(&attrs("rainy", "night")));
        assert!(!f.accepts(&attrs("clear", "daytime")));
        assert!(BddFilter::clear(Domain::Day).accepts(&attrs("clear", "daytime")));
    }

    #[test]
    fn ingest_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(512, 512, image::Rgb([40, 40, 60]));
        img.save(dir.path().join("a.png")).unwrap();
        img.save(dir.path().join("c.png")).unwrap();
        let labels = json!([
            {"name": "a.png", "attributes": {"weather": "clear", "timeofday": "night"},
             "labels": [
                {"category": "car", "box2d": {"x1": 0.0, "y1": 0.0, "x2": 512.0, "y2": 512.0}},
                {"category": "person", "box2d": {"x1": 10.0, "y1": 10.0, "x2": 50.0, "y2": 90.0}}]},
            {"name": "b.png", "attributes": {"weather": "clear", "timeofday": "night"}, "labels": []},
            {"name": "c.png", "attributes": {"weather": "snowy", "timeofday": "night"}, "labels": []}
        ]);
        let lf = dir.path().join("labels.json");
        std::fs::write(&lf, labels.to_string()).unwrap();
        let split = ingest_bdd(&lf, dir.path(), &BddFilter::clear(Domain::Night), "bdd-night").unwrap();
        // b.png is missing, c.png filtered out by weather
        assert_eq!(split.len(), 1);
        let s = &split.samples[0];
        assert_eq!(s.id, "a");
        assert_eq!(s.image.height(), 256);
        assert_eq!(s.annotations, vec![Annotation::car(BBox::raw(0.0, 0.0, 256.0, 256.0))]);
    }

    #[test]
    fn unparseable_records_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let lf = dir.path().join("labels.json");
        let labels = json!([
            {"name": "ok.png", "attributes": {"weather": "clear", "timeofday": "night"}},
            {"name": "broken.png", "attributes": 5},
            {"attributes": {}}
        ]);
        std::fs::write(&lf, labels.to_string()).unwrap();
        match ingest_bdd(&lf, dir.path(), &BddFilter::clear(Domain::Night), "x") {
            Err(Error::Ingestion(m)) => {
                assert!(m.contains("record 1 (broken.png)"), "{m}");
                assert!(m.contains("record 2"), "{m}");
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
