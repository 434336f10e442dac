use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::ClassCatalog;
use crate::error::{Error, Result};
use crate::extract::ExtractionConfig;
use crate::loss::LossConfig;
use crate::scorer::EvalConfig;
use crate::tmas::{MergeConfig, SplitConfig};

fn default_classes() -> ClassCatalog {
    ClassCatalog::new(["walking", "standing", "carrying"]).expect("static catalog")
}

/// Everything a run needs. Read from TOML; sections mirror the stage
/// configs:
///
/// ```toml
/// clip_length = 16
/// clip_stride = 16
/// classes = ["walking", "standing"]
///
/// [link]
/// link_threshold = 0.2
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub clip_length: u32,
    pub clip_stride: u32,
    pub height: u32,
    pub width: u32,
    pub workers: usize,
    pub classes: ClassCatalog,
    pub extraction: ExtractionConfig,
    pub link: MergeConfig,
    pub split: SplitConfig,
    pub scorer: EvalConfig,
    pub loss: LossConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            clip_length: 16,
            clip_stride: 16,
            height: 448,
            width: 800,
            workers: 1,
            classes: default_classes(),
            extraction: ExtractionConfig::default(),
            link: MergeConfig::default(),
            split: SplitConfig::default(),
            scorer: EvalConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_length == 0 || self.clip_stride == 0 {
            return Err(Error::Config("clip length and stride must be positive".into()));
        }
        if self.clip_stride > self.clip_length {
            return Err(Error::Config(format!(
                "clip stride {} exceeds clip length {}",
                self.clip_stride, self.clip_length
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        if !(self.scorer.fps > 0.0) || !(self.scorer.fa_limit_rate > 0.0) || !(self.scorer.fa_limit_time > 0.0) {
            return Err(Error::Config("fps and false-alarm limits must be positive".into()));
        }
        self.extraction.validate()?;
        self.link.validate()?;
        self.split.validate()?;
        self.loss.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of clips covering `frames` frames.
    pub fn num_clips(&self, frames: u32) -> usize {
        if frames == 0 {
            return 0;
        }
        if frames <= self.clip_length {
            return 1;
        }
        (frames - self.clip_length).div_ceil(self.clip_stride) as usize + 1
    }

    /// `(start frame, length)` of clip `index` in a video of `frames` frames.
    pub fn clip_span(&self, index: usize, frames: u32) -> (u32, u32) {
        let start = index as u32 * self.clip_stride;
        (start, self.clip_length.min(frames.saturating_sub(start)))
    }
}
