//! Octree latent diffusion for semantic 3D scene generation and completion.
//!
//! Semantic voxel grids are compressed into latents living on a dual octree
//! graph, scenes are synthesized in two diffusion stages (coarse split
//! signals, then node latents), and partial observations are blended into
//! the sampling trajectory at inference time.
//!
//! The numeric stack is generic over the scalar type ([`numeric::Real`]);
//! the aliases below fix it to `f64`, which is what the CLI and the file
//! formats use.

pub mod diffusion;
pub mod dualgraph;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod numeric;
pub mod octree;
pub mod pipeline;
pub mod selftest;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};

use std::io::Write;
use std::path::Path;

/// Default scalar type.
pub type Scalar = f64;

pub type Tensor = numeric::Tensor<f64>;
pub type Tape = numeric::Tape<f64>;
pub type ParamStore = numeric::ParamStore<f64>;

pub type Tensor32 = numeric::Tensor<f32>;
pub type ParamStore32 = numeric::ParamStore<f32>;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
