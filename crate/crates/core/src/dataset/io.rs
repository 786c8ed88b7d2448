//! On-disk split format: one 8-bit RGB PNG per sample plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Annotation, Authenticity, BBox, DatasetSplit, Domain, ImageBuffer, Sample};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    seed: u64,
    samples: Vec<ManifestSample>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    file: String,
    domain: Domain,
    authenticity: Authenticity,
    boxes: Vec<[f64; 4]>,
    classes: Vec<u32>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// PNG file name used for a sample id.
pub fn sample_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.png")
}

/// Writes every image as PNG and the manifest last, so a readable manifest
/// implies complete image files.
pub fn write_split(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(split.samples.len());
    for s in &split.samples {
        let file = sample_file_name(&s.id);
        let path = dir.join(&file);
        s.image.to_rgb8()?.save(&path).map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })?;
        samples.push(ManifestSample {
            id: s.id.clone(),
            file,
            domain: s.domain,
            authenticity: s.authenticity,
            boxes: s.annotations.iter().map(|a| a.bbox.as_array()).collect(),
            classes: s.annotations.iter().map(|a| a.class_id).collect(),
            extra: s.extra.clone(),
        });
    }
    let manifest = Manifest {
        name: split.name.clone(),
        seed: split.seed,
        samples,
        extra: split.extra.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_split(dir: &Path) -> Result<DatasetSplit> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&text, e))?;
    let offset_of = |id: &str| text.find(&format!("\"{id}\"")).unwrap_or(0);
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for m in manifest.samples {
        if m.boxes.len() != m.classes.len() {
            return Err(Error::Format {
                offset: offset_of(&m.id),
                message: format!("sample {}: {} boxes but {} classes", m.id, m.boxes.len(), m.classes.len()),
            });
        }
        let annotations = m
            .boxes
            .iter()
            .zip(&m.classes)
            .map(|(b, &class_id)| {
                BBox::from_array(*b)
                    .map(|bbox| Annotation { bbox, class_id })
                    .map_err(|e| Error::Format {
                        offset: offset_of(&m.id),
                        message: format!("sample {}: {e}", m.id),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let img_path = dir.join(&m.file);
        let img = image::open(&img_path)
            .map_err(|e| Error::Image {
                path: img_path.display().to_string(),
                source: e,
            })?
            .to_rgb8();
        let sample = Sample {
            id: m.id,
            image: ImageBuffer::from_rgb8(&img),
            annotations,
            domain: m.domain,
            authenticity: m.authenticity,
            extra: m.extra,
        };
        sample.validate().map_err(|e| Error::Format {
            offset: offset_of(&sample.id),
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(DatasetSplit {
        name: manifest.name,
        seed: manifest.seed,
        samples,
        extra: manifest.extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_splits, SceneConfig};

    fn small_split() -> DatasetSplit {
        let mut splits = generate_splits(&SceneConfig::default(), 10).unwrap();
        splits.swap_remove(1)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let split = small_split();
        write_split(&split, dir.path()).unwrap();
        assert_eq!(read_split(dir.path()).unwrap(), split);
    }

    #[test]
    fn inverted_box_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_split(&small_split(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        let b = &mut v["samples"][0]["boxes"][0];
        let x_min = b[0].clone();
        b[2] = x_min;
        fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        match read_split(dir.path()) {
            Err(Error::Format { offset, message }) => {
                assert!(offset > 0);
                assert!(message.contains("train-night-00000"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_preserved() {
        let dir = tempfile::tempdir().unwrap();
        write_split(&small_split(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        v["curator"] = Value::from("night shift");
        v["samples"][3]["weather"] = Value::from("clear");
        fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
        let split = read_split(dir.path()).unwrap();
        assert_eq!(split.extra["curator"], "night shift");
        assert_eq!(split.samples[3].extra["weather"], "clear");
        let again = tempfile::tempdir().unwrap();
        write_split(&split, again.path()).unwrap();
        let text = fs::read_to_string(again.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"weather\": \"clear\"") && text.contains("night shift"));
    }

    #[test]
    fn corrupt_manifest_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"name\": \"x\", \"seed\": 1, \"samples\": [}").unwrap();
        match read_split(dir.path()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 37),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
