//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sixchan_core::dataset::SceneConfig;
use sixchan_core::detector::{DetectorConfig, TrainSchedule};
use sixchan_core::metrics::ApVariant;
use sixchan_core::sixchannel::ChannelOrder;
use sixchan_core::translate::{GanHyperparams, TranslatorKind};

use crate::error::{HarnessError, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub grid: Grid,
    pub translator: TranslatorKind,
    pub channel_order: ChannelOrder,
    pub seeds: Vec<u64>,
    pub per_split: usize,
    pub scene: SceneConfig,
    /// Three-channel settings; six-channel rows differ only in input
    /// channels.
    pub detector: DetectorConfig,
    /// The seed field is replaced by each experiment seed.
    pub schedule: TrainSchedule,
    /// Used when `translator` is learned.
    pub gan: GanHyperparams,
    /// Checkpoints are evaluated every this many epochs and after the last.
    pub eval_every: usize,
    pub iou_threshold: f64,
    pub ap_variant: ApVariant,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            grid: Grid::All,
            translator: TranslatorKind::Oracle,
            channel_order: ChannelOrder::RealFirst,
            seeds: vec![1, 2, 3],
            per_split: 300,
            scene: SceneConfig::default(),
            detector: DetectorConfig::default(),
            schedule: desk_schedule(),
            gan: GanHyperparams::default(),
            eval_every: 2,
            iou_threshold: 0.5,
            ap_variant: ApVariant::AllPoint,
            output_dir: PathBuf::from("experiment"),
        }
    }
}

/// Detector schedule used by desk-scale experiments.
pub fn desk_schedule() -> TrainSchedule {
    TrainSchedule {
        epochs: 4,
        learning_rate: 0.01,
        decay_every: 3,
        ..TrainSchedule::default()
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.per_split < 10 {
            return bad(format!("per_split must be at least 10, got {}", self.per_split));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return bad("iou_threshold must lie in [0, 1]".into());
        }
        if self.detector.input_channels != 3 {
            return bad("the detector section describes the 3-channel model".into());
        }
        if self.detector.image_size != self.scene.image_size {
            return bad(format!(
                "detector image_size {} differs from scene image_size {}",
                self.detector.image_size, self.scene.image_size
            ));
        }
        let core = |r: sixchan_core::Result<()>| r.map_err(|e| HarnessError::Config(e.to_string()));
        core(self.scene.validate())?;
        core(self.detector.validate())?;
        core(self.schedule.validate())?;
        if self.translator == TranslatorKind::Learned {
            core(self.gan.validate())?;
        }
        Ok(())
    }

    /// Seeds in ascending order; results never depend on the listed order.
    pub fn sorted_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s
    }

    /// Epochs whose checkpoints are evaluated.
    pub fn eval_epochs(&self) -> Vec<usize> {
        let n = self.schedule.epochs;
        let mut v: Vec<usize> = (1..=n).filter(|e| e % self.eval_every == 0).collect();
        if v.last() != Some(&n) {
            v.push(n);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_seed_lists_and_tiny_splits() {
        let mut s = ExperimentSpec {
            seeds: vec![],
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(HarnessError::Config(_))));
        s.seeds = vec![1, 1];
        assert!(s.validate().is_err());
        s.seeds = vec![2, 1];
        s.per_split = 9;
        assert!(s.validate().is_err());
        s.per_split = 10;
        s.validate().unwrap();
        assert_eq!(s.sorted_seeds(), vec![1, 2]);
    }

    #[test]
    fn eval_epochs_end_with_the_last_epoch() {
        let mut s = ExperimentSpec::default();
        assert_eq!(s.eval_epochs(), vec![2, 4]);
        s.schedule.epochs = 5;
        assert_eq!(s.eval_epochs(), vec![2, 4, 5]);
        s.schedule.epochs = 0;
        assert_eq!(s.eval_epochs(), vec![0]);
    }
}
