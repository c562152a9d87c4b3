use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::nets::{Geometry, ModelConfig};

/// Optimizer budgets for the three trainable components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub vae_steps: usize,
    pub vae_lr: f64,
    pub diffusion_steps: usize,
    pub diffusion_lr: f64,
    /// Noise draws per example and diffusion optimizer step.
    pub draws: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            vae_steps: 2000,
            vae_lr: 3e-3,
            diffusion_steps: 1000,
            diffusion_lr: 2e-3,
            draws: 4,
        }
    }
}

/// One JSON document describing a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid_dims: [usize; 3],
    pub voxel_size: f64,
    pub num_classes: u16,
    /// Patch extent `(pz, py, px)`.
    pub patch_dims: [usize; 3],
    /// Defaults to [`ModelConfig::new`] on `patch_dims` and `num_classes`.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub seed: u64,
    /// Parameter checkpoint, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(grid_dims: [usize; 3], voxel_size: f64, num_classes: u16, patch_dims: [usize; 3]) -> Self {
        RunConfig {
            grid_dims,
            voxel_size,
            num_classes,
            patch_dims,
            model: None,
            sampler: SamplerConfig::default(),
            train: TrainOptions::default(),
            seed: 0,
            checkpoint: None,
        }
    }

    /// Outdoor scenes: 256×256×32 voxels of 0.2 m.
    pub fn outdoor() -> Self {
        RunConfig::new([256, 256, 32], 0.2, 20, [1, 4, 4])
    }

    /// Reads and validates a config; a relative `checkpoint` is resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))?;
        if let Some(c) = &cfg.checkpoint {
            if c.is_relative() {
                let dir = path.parent().unwrap_or(Path::new(""));
                cfg.checkpoint = Some(dir.join(c));
            }
        }
        cfg.validate().map_err(|e| e.at(path))?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model
            .clone()
            .unwrap_or_else(|| ModelConfig::new(self.patch_dims, self.num_classes))
    }

    /// Cross-field checks: class counts and patch extents agree, the grid
    /// tiles into patches and pools cleanly, and the sampler is usable.
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if let Some(m) = &self.model {
            if m.num_classes != self.num_classes {
                return Err(Error::Config(format!(
                    "num_classes {} differs from model.num_classes {}",
                    self.num_classes, m.num_classes
                )));
            }
            if m.patch_dims != self.patch_dims {
                return Err(Error::Config(format!(
                    "patch_dims {:?} differs from model.patch_dims {:?}",
                    self.patch_dims, m.patch_dims
                )));
            }
        }
        Geometry::new(self.grid_dims, &self.model_config())?;
        self.sampler.schedule()?;
        if self.train.draws == 0 {
            return Err(Error::Config("train.draws must be at least 1".into()));
        }
        Ok(())
    }
}
