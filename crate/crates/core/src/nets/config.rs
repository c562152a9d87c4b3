use serde::{Deserialize, Serialize};

use crate::dualgraph::{dualize, DualOctreeGraph};
use crate::error::{Error, Result};
use crate::octree::{depth_for_dims, grow_by_splits, CoarseSplitGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    /// Channels of the per-voxel convolution inside the patch codec.
    #[serde(default = "d_patch_hidden")]
    pub patch_hidden: usize,
    #[serde(default = "d_vae_hidden")]
    pub vae_hidden: usize,
    /// Width of the VAE code on the coarse graph.
    #[serde(default = "d_code")]
    pub code: usize,
    #[serde(default = "d_denoiser")]
    pub denoiser: usize,
}

fn d_patch_hidden() -> usize {
    16
}
fn d_vae_hidden() -> usize {
    32
}
fn d_code() -> usize {
    8
}
fn d_denoiser() -> usize {
    32
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            patch_hidden: d_patch_hidden(),
            vae_hidden: d_vae_hidden(),
            code: d_code(),
            denoiser: d_denoiser(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Learned,
}

/// Graph VAE and patch codec hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Patch extent in voxels, ordered `(pz, py, px)`.
    pub patch_dims: [usize; 3],
    pub d_patch: usize,
    #[serde(default)]
    pub widths: Widths,
    /// Pooling stages between the patch graph and the code graph.
    pub pool_levels: u32,
    pub beta: f64,
    pub num_classes: u16,
    #[serde(default)]
    pub pool_mode: PoolMode,
    /// Octaves of the sinusoidal position encoding of node centers.
    #[serde(default = "d_bands")]
    pub fourier_bands: usize,
}

fn d_bands() -> usize {
    4
}

impl ModelConfig {
    pub fn new(patch_dims: [usize; 3], num_classes: u16) -> Self {
        ModelConfig {
            patch_dims,
            d_patch: 16,
            widths: Widths::default(),
            pool_levels: 2,
            beta: 1e-3,
            num_classes,
            pool_mode: PoolMode::Mean,
            fourier_bands: d_bands(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.patch_dims.contains(&0) {
            return bad("patch_dims must be positive");
        }
        if self.d_patch == 0
            || self.widths.patch_hidden == 0
            || self.widths.vae_hidden == 0
            || self.widths.code == 0
            || self.widths.denoiser == 0
        {
            return bad("widths must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must include the empty class and at least one more");
        }
        if self.pool_levels == 0 {
            return bad("pool_levels must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a finite non-negative number");
        }
        Ok(())
    }

    /// Voxels per patch.
    pub fn patch_voxels(&self) -> usize {
        self.patch_dims.iter().product()
    }

    /// Patch extent in `(x, y, z)` order.
    pub fn patch_xyz(&self) -> [usize; 3] {
        [self.patch_dims[2], self.patch_dims[1], self.patch_dims[0]]
    }
}

/// Depth plan derived from grid dims and model config.
///
/// Patches are the leaves at `patch_depth`. The coarse split grid lives one
/// level above, so each coarse cell covers 2×2×2 patches. The VAE code lives
/// `pool_levels` above the patches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub grid_dims: [usize; 3],
    /// Patch extent `(x, y, z)` in voxels.
    pub patch: [usize; 3],
    pub patch_grid: [usize; 3],
    pub structure_dims: [usize; 3],
    pub patch_depth: u32,
    pub structure_depth: u32,
    pub code_depth: u32,
}

impl Geometry {
    pub fn new(grid_dims: [usize; 3], cfg: &ModelConfig) -> Result<Geometry> {
        cfg.validate()?;
        let patch = cfg.patch_xyz();
        if (0..3).any(|a| grid_dims[a] == 0 || !grid_dims[a].is_multiple_of(patch[a])) {
            return Err(Error::Config(format!(
                "grid dims {grid_dims:?} not divisible by patch extent {patch:?} (x, y, z)"
            )));
        }
        let patch_grid = [0, 1, 2].map(|a| grid_dims[a] / patch[a]);
        let f = 1usize << cfg.pool_levels;
        if patch_grid.iter().any(|&p| p % f != 0) {
            return Err(Error::Config(format!(
                "patch grid {patch_grid:?} not divisible by 2^pool_levels = {f}"
            )));
        }
        let patch_depth = depth_for_dims(patch_grid);
        Ok(Geometry {
            grid_dims,
            patch,
            patch_grid,
            structure_dims: patch_grid.map(|p| p / 2),
            patch_depth,
            structure_depth: patch_depth - 1,
            code_depth: patch_depth - cfg.pool_levels,
        })
    }

    /// Real extent, in cells, at `depth <= patch_depth`.
    pub fn dims_at(&self, depth: u32) -> [usize; 3] {
        let s = self.patch_depth - depth;
        self.patch_grid.map(|p| p.div_ceil(1 << s))
    }

    /// Graph tiling the real region with cells at `depth`.
    pub fn flat_graph(&self, depth: u32) -> DualOctreeGraph {
        let dims = self.dims_at(depth);
        let empty = CoarseSplitGrid::new(depth, dims, vec![-1.0; dims.iter().product()])
            .expect("dims fit the cube");
        dualize(&grow_by_splits(&empty, &[]).expect("no decisions"))
    }

    pub fn code_graph(&self) -> DualOctreeGraph {
        self.flat_graph(self.code_depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outdoor_constants() {
        let cfg = ModelConfig::new([1, 4, 4], 20);
        let g = Geometry::new([256, 256, 32], &cfg).unwrap();
        assert_eq!(g.patch_grid, [64, 64, 32]);
        assert_eq!(g.patch_depth, 6);
        assert_eq!(g.structure_dims, [32, 32, 16]);
        assert_eq!(g.structure_depth, 5);
        assert_eq!(g.code_depth, 4);
        assert_eq!(g.dims_at(4), [16, 16, 8]);
    }

    #[test]
    fn indoor_patch_grid() {
        let cfg = ModelConfig::new([1, 2, 2], 12);
        let g = Geometry::new([16, 16, 8], &cfg).unwrap();
        assert_eq!(g.patch_grid, [8, 8, 8]);
        assert_eq!(g.code_graph().num_nodes(), 8);
    }

    #[test]
    fn rejects_indivisible() {
        let cfg = ModelConfig::new([1, 4, 4], 3);
        assert!(matches!(Geometry::new([18, 16, 8], &cfg), Err(Error::Config(_))));
        assert!(matches!(Geometry::new([8, 8, 2], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn json_keys() {
        let cfg = ModelConfig::new([1, 2, 2], 3);
        let v = serde_json::to_value(&cfg).unwrap();
        for k in ["patch_dims", "d_patch", "widths", "pool_levels", "beta", "num_classes"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }
}
