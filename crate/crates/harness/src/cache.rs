//! Content-addressed stage cache. Each entry is a directory named after the
//! hash of its inputs, holding artifacts plus `record.json`; entries are
//! built in a scratch directory and renamed into place when complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result, Stage};

/// Bumped whenever a change alters stage outputs.
pub const CODE_VERSION: &str = "sixchan-0.1.0/2";

const RECORD_FILE: &str = "record.json";

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn hash_json(value: &Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON values serialise");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record<T> {
    pub stage: Stage,
    pub key: Value,
    pub value: T,
    /// Time spent building the entry.
    pub seconds: f64,
}

/// A stage result with where it lives.
#[derive(Debug, Clone)]
pub struct Entry<T> {
    pub hash: String,
    pub dir: PathBuf,
    pub value: T,
    pub seconds: f64,
    pub hit: bool,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

fn stage_io(stage: Stage, path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Stage {
        stage,
        source: sixchan_core::Error::io(path, e),
    }
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key_hash(stage: Stage, key: &Value) -> String {
        hash_json(&serde_json::json!({"code": CODE_VERSION, "stage": stage, "key": key}))
    }

    pub fn entry_dir(&self, stage: Stage, hash: &str) -> PathBuf {
        self.root.join(stage.as_str()).join(hash)
    }

    /// Returns the cached entry for `key`, or runs `build` in a scratch
    /// directory and commits its output.
    pub fn get_or_build<T, F>(&self, stage: Stage, key: &Value, build: F) -> Result<Entry<T>>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&Path) -> Result<T>,
    {
        let hash = Self::key_hash(stage, key);
        let dir = self.entry_dir(stage, &hash);
        let record_path = dir.join(RECORD_FILE);
        if record_path.is_file() {
            let text = fs::read_to_string(&record_path).map_err(|e| stage_io(stage, &record_path, e))?;
            let record: Record<T> = serde_json::from_str(&text).map_err(|e| HarnessError::json(record_path.display().to_string(), e))?;
            log::debug!("{stage} {hash}: cached");
            return Ok(Entry {
                hash,
                dir,
                value: record.value,
                seconds: record.seconds,
                hit: true,
            });
        }
        let scratch = self.root.join(stage.as_str()).join(format!("{hash}.partial"));
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(|e| stage_io(stage, &scratch, e))?;
        }
        fs::create_dir_all(&scratch).map_err(|e| stage_io(stage, &scratch, e))?;
        let start = Instant::now();
        let value = build(&scratch)?;
        let record = Record {
            stage,
            key: key.clone(),
            value,
            seconds: start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&record).map_err(|e| HarnessError::json("stage record", e))?;
        let scratch_record = scratch.join(RECORD_FILE);
        fs::write(&scratch_record, text).map_err(|e| stage_io(stage, &scratch_record, e))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| stage_io(stage, &dir, e))?;
        }
        fs::rename(&scratch, &dir).map_err(|e| stage_io(stage, &dir, e))?;
        log::debug!("{stage} {hash}: built in {:.1}s", record.seconds);
        Ok(Entry {
            hash,
            dir,
            value: record.value,
            seconds: record.seconds,
            hit: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn second_lookup_is_a_hit_with_the_stored_value() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::new(tmp.path());
        let key = json!({"a": 1});
        let first = cache
            .get_or_build(Stage::Data, &key, |dir| {
                fs::write(dir.join("x.txt"), "hello").unwrap();
                Ok(41u32)
            })
            .unwrap();
        assert!(!first.hit);
        assert_eq!(fs::read_to_string(first.dir.join("x.txt")).unwrap(), "hello");
        let second = cache.get_or_build::<u32, _>(Stage::Data, &key, |_| panic!("rebuilt")).unwrap();
        assert!(second.hit);
        assert_eq!((second.value, second.seconds), (41, first.seconds));
        assert_ne!(Cache::key_hash(Stage::Data, &key), Cache::key_hash(Stage::Train, &key));
    }

    #[test]
    fn failed_builds_leave_no_entry() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::new(tmp.path());
        let key = json!(1);
        let err = cache.get_or_build::<u32, _>(Stage::Train, &key, |_| Err(HarnessError::Config("boom".into())));
        assert!(err.is_err());
        let again = cache.get_or_build(Stage::Train, &key, |_| Ok(7u32)).unwrap();
        assert!(!again.hit);
    }
}
