//! TOML run configuration shared by the CLI subcommands.
//!
//! ```toml
//! [data]
//! root = "faces"        # images/, landmarks/, manifest.txt
//! scale = 8
//! eval_count = 2
//!
//! [model]
//! variant = "full"
//! preset = "tiny"
//!
//! [train]
//! max_steps = 50
//! batch_size = 4
//!
//! [metrics]
//! fer = "toy:0"
//!
//! [output]
//! dir = "runs/tiny"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{check_scale, DatasetLayout};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    #[serde(default = "default_scale")]
    pub scale: usize,
    /// Samples held out for evaluation.
    #[serde(default)]
    pub eval_count: usize,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_scale() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Standard,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub preset: Preset,
    pub seed: u64,
    pub pretrained: Option<PathBuf>,
    pub blocks: Option<usize>,
    pub channels: Option<usize>,
    pub growth: Option<usize>,
    pub gcn_dims: Option<Vec<usize>>,
    pub msaf_block_channels: Option<usize>,
    pub msaf_reduction: Option<usize>,
}

impl ModelSection {
    pub fn model_config(&self, scale: usize) -> Result<ModelConfig> {
        let mut cfg = match self.preset {
            Preset::Standard => ModelConfig::standard(scale, self.variant),
            Preset::Tiny => ModelConfig::tiny(scale, self.variant),
        }
        .with_seed(self.seed);
        if let Some(v) = self.blocks {
            cfg.backbone.blocks = v;
        }
        if let Some(v) = self.channels {
            cfg.backbone.channels = v;
        }
        if let Some(v) = self.growth {
            cfg.backbone.growth = v;
        }
        if let Some(v) = &self.gcn_dims {
            cfg.gcn_dims = v.clone();
        }
        if let Some(v) = self.msaf_block_channels {
            cfg.msaf.block_channels = v;
        }
        if let Some(v) = self.msaf_reduction {
            cfg.msaf.reduction = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// FER plugin spec, `toy:<seed>` or `cmd:<command>`.
    pub fer: Option<String>,
    /// Comma-separated metric names.
    pub metrics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.root);
        fix(&mut self.output.dir);
        if let Some(p) = self.model.pretrained.as_mut() {
            fix(p);
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.model_config(self.data.scale)
    }

    pub fn layout(&self) -> DatasetLayout {
        DatasetLayout::under(&self.data.root)
    }

    /// Checks values and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        check_scale(self.data.scale).map_err(|e| Error::Config(e.to_string()))?;
        self.model_config()?;
        self.train.validate()?;
        let layout = self.layout();
        for dir in [&self.data.root, &layout.image_dir, &layout.landmark_dir] {
            if !dir.is_dir() {
                return Err(Error::Config(format!("directory not found: {}", dir.display())));
            }
        }
        if !layout.manifest.is_file() {
            return Err(Error::Config(format!(
                "manifest not found: {}",
                layout.manifest.display()
            )));
        }
        if let Some(p) = &self.model.pretrained {
            if !p.is_file() {
                return Err(Error::Config(format!("pretrained archive not found: {}", p.display())));
            }
        }
        Ok(())
    }
}
