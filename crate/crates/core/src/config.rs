//! Pipeline configuration (TOML). Every field has a default; relative paths
//! resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::DEFAULT_IOU_THRESHOLD;
use crate::augment::AugmentConfig;
use crate::dataset::SplitParams;
use crate::densenet::ArchitectureConfig;
use crate::error::{Error, Result};
use crate::patchfilter::DEFAULT_WHITE_THRESHOLD;
use crate::tiler::DEFAULT_MIN_AREA_FRACTION;
use crate::trainer::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: PathBuf,
    /// Directory holding `{wsi_id}.png`, `{wsi_id}.ppm` or a tiled `{wsi_id}/`.
    pub slides: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { annotations: "annotations.json".into(), slides: "slides".into(), output: "output".into() }
    }
}

/// Which slides feed which pool. An empty `set1` means every slide not in
/// `set2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSets {
    pub set1: Vec<String>,
    pub set2: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSelection {
    /// Every resolved region, concordant or not.
    All,
    /// Only regions supported by at least two annotators.
    Concordant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilerConfig {
    pub iou_threshold: f64,
    pub min_area_fraction: f64,
    pub white_threshold: f64,
    pub regions: RegionSelection,
}

impl Default for TilerConfig {
    fn default() -> Self {
        TilerConfig {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_area_fraction: DEFAULT_MIN_AREA_FRACTION,
            white_threshold: DEFAULT_WHITE_THRESHOLD,
            regions: RegionSelection::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub image_sets: ImageSets,
    pub tiler: TilerConfig,
    pub dataset: SplitParams,
    pub architecture: ArchitectureConfig,
    pub train: TrainParams,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { context: origin.to_string(), message: e.message().to_string() })
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.annotations, &mut self.paths.slides, &mut self.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let t = &self.tiler;
        if !(t.iou_threshold > 0.0 && t.iou_threshold <= 1.0) {
            return bad(format!("tiler.iou_threshold must be in (0, 1], got {}", t.iou_threshold));
        }
        if !(t.min_area_fraction > 0.0 && t.min_area_fraction <= 1.0) {
            return bad(format!("tiler.min_area_fraction must be in (0, 1], got {}", t.min_area_fraction));
        }
        if !(0.0..=1.0).contains(&t.white_threshold) {
            return bad(format!("tiler.white_threshold must be in [0, 1], got {}", t.white_threshold));
        }
        let d = &self.dataset;
        if d.per_class == 0 || d.test_per_class == 0 {
            return bad("dataset.per_class and dataset.test_per_class must be positive".into());
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return bad(format!("dataset.val_fraction must be in (0, 1), got {}", d.val_fraction));
        }
        if let Some(id) = self.image_sets.set1.iter().find(|id| self.image_sets.set2.contains(id)) {
            return bad(format!("slide {id} is listed in both image sets"));
        }
        self.architecture.validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: self.seed,
            augment: self.train.augment,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = PipelineConfig::from_toml("", "test").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.dataset.per_class, 5000);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.architecture.input_size, 224);
        assert_eq!(c.tiler.min_area_fraction, 0.8);
        c.validate().unwrap();
    }

    #[test]
    fn partial_sections_merge() {
        let c =
            PipelineConfig::from_toml("seed = 9\n[train]\nepochs = 2\n[architecture]\ngrowth_rate = 4\n", "t").unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.architecture.growth_rate, 4);
        assert_eq!(c.train_config().seed, 9);
        let again = PipelineConfig::from_toml(&c.to_toml(), "t").unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(PipelineConfig::from_toml("[train]\nepoch = 3\n", "t").is_err());
        let c = PipelineConfig::from_toml("[train]\nepochs = 0\n", "t").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig::from_toml("[image_sets]\nset1 = [\"a\"]\nset2 = [\"a\"]\n", "t").unwrap();
        assert!(c.validate().is_err());
    }
}
