use crate::diffusion::{structure_cond, train_denoiser, DiffusionExample, StructureDenoiser, TrainConfig};
use crate::error::{Error, Result};
use crate::nets::VaeLossBreakdown;
use crate::numeric::{adam_step, AdamConfig, AdamState, Rng, Tensor};
use crate::voxel::SemanticVoxelGrid;

use super::{code_mean, structure_of, SceneModels};

fn check_scenes(models: &SceneModels, scenes: &[SemanticVoxelGrid]) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::InvalidParameter("no training scenes".into()));
    }
    for (i, s) in scenes.iter().enumerate() {
        if s.dims() != models.geom.grid_dims || s.num_classes() != models.config.num_classes {
            return Err(Error::Config(format!(
                "scene {i}: dims {:?} with {} classes, configured {:?} with {}",
                s.dims(),
                s.num_classes(),
                models.geom.grid_dims,
                models.config.num_classes
            )));
        }
    }
    Ok(())
}

/// Full-batch Adam on the VAE objective; returns the per-step losses.
/// Step `s` draws its noise from `rng.derive(s)`.
pub fn train_vae(
    models: &mut SceneModels,
    scenes: &[SemanticVoxelGrid],
    steps: usize,
    lr: f64,
    rng: &Rng,
    mut on_step: Option<&mut dyn FnMut(usize, &VaeLossBreakdown)>,
) -> Result<Vec<VaeLossBreakdown>> {
    check_scenes(models, scenes)?;
    let targets = scenes.iter().map(|s| models.vae.prepare(s)).collect::<Result<Vec<_>>>()?;
    let adam = AdamConfig { lr, ..Default::default() };
    let mut state = AdamState::new();
    let mut curve = Vec::with_capacity(steps);
    for s in 0..steps {
        let (loss, grads) = models.vae.batch_gradients(&models.params, &targets, &rng.derive(s as u64))?;
        if !loss.total.is_finite() {
            return Err(Error::Runtime(format!("VAE loss diverged at step {s}")));
        }
        adam_step(&mut models.params, &grads, &mut state, &adam)?;
        if let Some(f) = on_step.as_mut() {
            f(s, &loss);
        }
        curve.push(loss);
    }
    Ok(curve)
}

/// Stage-1 targets: each scene's structure grid as ±1 values.
pub fn structure_examples(models: &SceneModels, scenes: &[SemanticVoxelGrid]) -> Result<Vec<DiffusionExample<f64>>> {
    check_scenes(models, scenes)?;
    scenes
        .iter()
        .map(|s| {
            Ok(DiffusionExample {
                x0: StructureDenoiser::encode_occupancy(&structure_of(&models.geom, s)?),
                cond: Tensor::zeros(&[0, 0]),
            })
        })
        .collect()
}

/// Stage-2 targets: encoder means conditioned on each scene's structure.
pub fn latent_examples(models: &SceneModels, scenes: &[SemanticVoxelGrid]) -> Result<Vec<DiffusionExample<f64>>> {
    check_scenes(models, scenes)?;
    models.require("vae.", "VAE")?;
    scenes
        .iter()
        .map(|s| {
            let structure = structure_of(&models.geom, s)?;
            Ok(DiffusionExample {
                x0: code_mean(models, s)?,
                cond: structure_cond(&models.geom, &models.latent.graph, &structure)?,
            })
        })
        .collect()
}

fn diffusion_config(models: &SceneModels) -> TrainConfig {
    let t = &models.config.train;
    TrainConfig {
        steps: t.diffusion_steps,
        adam: AdamConfig {
            lr: t.diffusion_lr,
            ..Default::default()
        },
        draws: t.draws,
    }
}

pub fn train_structure(models: &mut SceneModels, scenes: &[SemanticVoxelGrid], rng: &Rng) -> Result<Vec<f64>> {
    let data = structure_examples(models, scenes)?;
    let sched = models.schedule()?;
    let cfg = diffusion_config(models);
    let SceneModels { params, structure, .. } = models;
    train_denoiser(&*structure, params, &data, &sched, &cfg, rng)
}

pub fn train_latent(models: &mut SceneModels, scenes: &[SemanticVoxelGrid], rng: &Rng) -> Result<Vec<f64>> {
    let data = latent_examples(models, scenes)?;
    let sched = models.schedule()?;
    let cfg = diffusion_config(models);
    let SceneModels { params, latent, .. } = models;
    train_denoiser(&*latent, params, &data, &sched, &cfg, rng)
}
