//! End-to-end drivers: unconditional generation, completion from a LiDAR
//! scan and/or partial semantics, and outpainting by overlapping windows.
//!
//! Generation runs in two stages. Stage 1 samples the coarse structure grid
//! (one cell per 2×2×2 patches), stage 2 samples the VAE code on the code
//! graph conditioned on that structure, and the VAE decoder grows the patch
//! octree under the sampled structure and decodes labels.
//!
//! Observations enter both stages through blend masks. Observed structure
//! cells are pinned in stage 1, code nodes whose footprint touches observed
//! semantics are pinned to their encoded latents in stage 2, and observed
//! voxels are written back into the decoded scene.

mod config;
mod manifest;
mod train;

#[cfg(test)]
mod tests;

use std::collections::HashMap;

pub use config::{RunConfig, TrainOptions};
pub use manifest::{sha256_file, sha256_hex, RunManifest};
pub use train::{latent_examples, structure_examples, train_latent, train_structure, train_vae};

use crate::diffusion::{
    sample, structure_cond, BlendMask, Bound, EpsModel, LatentDenoiser, NoiseSchedule, SampleOptions,
    StructureDenoiser,
};
use crate::error::{Error, Result};
use crate::nets::{Geometry, GraphVae, Guidance, SplitPolicy};
use crate::numeric::{ParamStore, Rng, Tape, Tensor};
use crate::octree::morton_encode;
use crate::voxel::{
    coords_of, downsample_occupancy, linear_index, semantics_to_occupancy, voxelize, OccupancyGrid, PointCloud,
    SemanticVoxelGrid,
};

/// All trained components of one configuration, sharing a parameter store.
///
/// Parameter names are prefixed by component: `patch.` and `vae.` for the
/// autoencoder, `sd.` for the structure denoiser, `ld.` for the latent
/// denoiser.
#[derive(Clone, Debug)]
pub struct SceneModels {
    pub config: RunConfig,
    pub params: ParamStore<f64>,
    pub geom: Geometry,
    pub vae: GraphVae,
    pub structure: StructureDenoiser,
    pub latent: LatentDenoiser,
}

impl SceneModels {
    pub fn new(config: RunConfig, params: ParamStore<f64>) -> Result<Self> {
        config.validate()?;
        let cfg = config.model_config();
        let vae = GraphVae::new(&cfg, config.grid_dims)?;
        let geom = vae.geom.clone();
        let hidden = cfg.widths.denoiser;
        let structure = StructureDenoiser::for_geometry(&geom, hidden, cfg.fourier_bands)?;
        let latent = LatentDenoiser::for_geometry(&geom, cfg.widths.code, hidden, cfg.fourier_bands)?;
        Ok(SceneModels {
            config,
            params,
            geom,
            vae,
            structure,
            latent,
        })
    }

    /// Freshly initialized parameters for every component.
    pub fn init(config: RunConfig, rng: &Rng) -> Result<Self> {
        let mut m = SceneModels::new(config, ParamStore::new())?;
        let mut p = m.vae.init_params::<f64>(&rng.derive_str("vae"));
        p.merge_prefixed("", EpsModel::<f64>::init_params(&m.structure, &rng.derive_str("structure")));
        p.merge_prefixed("", EpsModel::<f64>::init_params(&m.latent, &rng.derive_str("latent")));
        m.params = p;
        Ok(m)
    }

    /// Loads the checkpoint named by the config.
    pub fn load(config: RunConfig) -> Result<Self> {
        let path = config
            .checkpoint
            .clone()
            .ok_or_else(|| Error::Config("config has no `checkpoint` path".into()))?;
        let params = ParamStore::load(&path)?;
        SceneModels::new(config, params)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.config.sampler.schedule()
    }

    pub fn voxel_size(&self) -> f32 {
        self.config.voxel_size as f32
    }

    /// Fails unless parameters with `prefix` are present.
    pub fn require(&self, prefix: &str, what: &str) -> Result<()> {
        if self.params.names().any(|n| n.starts_with(prefix)) {
            Ok(())
        } else {
            Err(Error::Config(format!("checkpoint has no {what} parameters (`{prefix}*`)")))
        }
    }
}

/// Occupancy of the coarse structure grid: a cell is occupied when any
/// voxel under it is.
pub fn structure_of(geom: &Geometry, grid: &SemanticVoxelGrid) -> Result<OccupancyGrid> {
    if grid.dims() != geom.grid_dims {
        return Err(Error::Config(format!(
            "grid dims {:?} differ from configured {:?}",
            grid.dims(),
            geom.grid_dims
        )));
    }
    downsample_occupancy(&semantics_to_occupancy(grid), structure_factor(geom))
}

fn structure_factor(geom: &Geometry) -> [usize; 3] {
    geom.patch.map(|p| 2 * p)
}

/// Conditioning inputs; every field is optional.
#[derive(Clone, Debug, Default)]
pub struct CompletionRequest {
    pub scan: Option<PointCloud>,
    /// Partial semantics in the output frame.
    pub partial: Option<SemanticVoxelGrid>,
    /// Voxels of `partial` that count as observed, empty ones included.
    /// Defaults to the non-empty voxels of `partial`.
    pub observed: Option<OccupancyGrid>,
    pub seed: u64,
}

impl CompletionRequest {
    pub fn seeded(seed: u64) -> Self {
        CompletionRequest {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneOutput {
    pub grid: SemanticVoxelGrid,
    /// Sampled coarse structure after observation pinning.
    pub structure: OccupancyGrid,
    /// Sampled code, `[code nodes, code width]`; empty for empty scenes.
    pub latents: Tensor<f64>,
    /// True when stage 1 produced no occupied cell.
    pub empty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Structure,
    Latent,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Structure => "structure",
            Stage::Latent => "latent",
        }
    }
}

/// Observer of every sampler state, `(stage, t, x_t)`.
pub type TraceFn<'a> = &'a mut dyn FnMut(Stage, usize, &Tensor<f64>);

pub fn generate(models: &SceneModels, seed: u64) -> Result<SceneOutput> {
    complete(models, &CompletionRequest::seeded(seed))
}

pub fn complete(models: &SceneModels, req: &CompletionRequest) -> Result<SceneOutput> {
    complete_traced(models, req, None)
}

/// Observed content of a partial grid: labels inside the observed region,
/// empty elsewhere.
fn observed_content(
    geom: &Geometry,
    partial: &SemanticVoxelGrid,
    observed: Option<&OccupancyGrid>,
) -> Result<(SemanticVoxelGrid, OccupancyGrid)> {
    if partial.dims() != geom.grid_dims {
        return Err(Error::Config(format!(
            "partial grid dims {:?} differ from configured {:?}",
            partial.dims(),
            geom.grid_dims
        )));
    }
    let region = match observed {
        Some(o) if o.dims() != partial.dims() => {
            return Err(Error::shape("observed region", &o.dims(), &partial.dims()))
        }
        Some(o) => o.clone(),
        None => semantics_to_occupancy(partial),
    };
    let labels = partial
        .labels()
        .iter()
        .zip(region.bits())
        .map(|(&l, &r)| if r { l } else { 0 })
        .collect();
    let content = SemanticVoxelGrid::new(partial.dims(), partial.voxel_size(), partial.num_classes(), labels)?;
    Ok((content, region))
}

/// Code-graph mask and reference latents for partial semantics.
///
/// The observed content is patch-encoded and VAE-encoded; a code node is
/// masked when its footprint contains an observed voxel, and its reference
/// is the encoder mean.
pub fn anchor_semantics(
    models: &SceneModels,
    partial: &SemanticVoxelGrid,
    observed: Option<&OccupancyGrid>,
) -> Result<(Vec<bool>, Tensor<f64>)> {
    let (content, region) = observed_content(&models.geom, partial, observed)?;
    anchor_region(models, &content, &region)
}

fn anchor_region(
    models: &SceneModels,
    content: &SemanticVoxelGrid,
    region: &OccupancyGrid,
) -> Result<(Vec<bool>, Tensor<f64>)> {
    let geom = &models.geom;
    let cg = &models.latent.graph;
    let width = models.latent.width;
    let mut mask = vec![false; cg.num_nodes()];
    let shift = geom.patch_depth - geom.code_depth;
    for [x, y, z] in region.occupied() {
        let p = [x / geom.patch[0], y / geom.patch[1], z / geom.patch[2]];
        let c = p.map(|v| (v >> shift) as u32);
        let key = morton_encode(c[0], c[1], c[2], geom.code_depth)?;
        let i = cg
            .find(key)
            .ok_or_else(|| Error::Runtime(format!("code node for voxel {:?} missing", [x, y, z])))?;
        mask[i] = true;
    }
    if !mask.iter().any(|&m| m) {
        return Ok((mask, Tensor::zeros(&[cg.num_nodes(), width])));
    }
    let refs = code_mean(models, content)?;
    Ok((mask, refs))
}

/// Encoder mean of `grid`, rows in code-graph order.
pub fn code_mean(models: &SceneModels, grid: &SemanticVoxelGrid) -> Result<Tensor<f64>> {
    let vae = &models.vae;
    let cg = &models.latent.graph;
    let width = models.latent.width;
    let target = vae.prepare(grid)?;
    let mut tape = Tape::new();
    let (f, valid) = vae.field_tape(&mut tape, &models.params, &target)?;
    let (mu, _, g) = vae.encode_tape(&mut tape, &models.params, &target.graph, f, &valid)?;
    let mu = tape.value(mu);
    if g.num_nodes() != cg.num_nodes() {
        return Err(Error::shape("code_mean", &[g.num_nodes()], &[cg.num_nodes()]));
    }
    let mut out = Tensor::zeros(&[cg.num_nodes(), width]);
    for (i, key) in g.keys().enumerate() {
        let j = cg
            .find(key)
            .ok_or_else(|| Error::Runtime(format!("encoder node {key:?} not on the code graph")))?;
        out.data_mut()[j * width..(j + 1) * width].copy_from_slice(mu.row(i));
    }
    Ok(out)
}

/// Structure cells fixed by observations: `Some(true)` where an observed
/// voxel is occupied, `Some(false)` where the whole cell is observed empty.
fn pinned_cells(
    geom: &Geometry,
    hits: Option<&OccupancyGrid>,
    partial: Option<&(SemanticVoxelGrid, OccupancyGrid)>,
) -> Result<Vec<Option<bool>>> {
    let f = structure_factor(geom);
    let sd = geom.structure_dims;
    let cell = |[x, y, z]: [usize; 3]| linear_index(sd, x / f[0], y / f[1], z / f[2]);
    let mut pins = vec![None; sd.iter().product()];
    if let Some((content, region)) = partial {
        let block = f.iter().product::<usize>();
        let mut seen = vec![0usize; pins.len()];
        for v in region.occupied() {
            seen[cell(v)] += 1;
        }
        for (i, &n) in seen.iter().enumerate() {
            if n == block {
                pins[i] = Some(false);
            }
        }
        for (i, &l) in content.labels().iter().enumerate() {
            if l != 0 {
                pins[cell(coords_of(geom.grid_dims, i))] = Some(true);
            }
        }
    }
    if let Some(h) = hits {
        for v in h.occupied() {
            pins[cell(v)] = Some(true);
        }
    }
    Ok(pins)
}

fn voxelize_scan(models: &SceneModels, cloud: &PointCloud) -> Result<Option<OccupancyGrid>> {
    if cloud.is_empty() {
        return Ok(None);
    }
    let dims = models.geom.grid_dims;
    let (occ, stats) = voxelize(cloud, dims, models.config.voxel_size)?;
    if stats.inserted == 0 {
        return Err(Error::Config(format!(
            "all {} scan points fall outside the grid: origin {:?}, dims {:?} at voxel size {}",
            cloud.len(),
            cloud.origin,
            dims,
            models.config.voxel_size
        )));
    }
    Ok(Some(occ))
}

fn stage_opts<'a>(models: &SceneModels, trace: Option<&'a mut dyn FnMut(usize, &Tensor<f64>)>) -> SampleOptions<'a, f64> {
    SampleOptions {
        resample: models.config.sampler.resample,
        on_step: trace,
    }
}

pub fn complete_traced(models: &SceneModels, req: &CompletionRequest, mut trace: Option<TraceFn<'_>>) -> Result<SceneOutput> {
    models.require("sd.", "structure denoiser")?;
    models.require("ld.", "latent denoiser")?;
    models.require("vae.", "VAE")?;
    let geom = &models.geom;
    let rng = Rng::new(req.seed);
    let sched = models.schedule()?;
    let steps = sched.steps();
    let no_cond = Tensor::zeros(&[0, 0]);

    let hits = match &req.scan {
        Some(c) => voxelize_scan(models, c)?,
        None => None,
    };
    let partial = match &req.partial {
        Some(p) => Some(observed_content(geom, p, req.observed.as_ref())?),
        None => None,
    };

    // Stage 1: coarse structure.
    let pins = pinned_cells(geom, hits.as_ref(), partial.as_ref())?;
    let s_mask = if pins.iter().any(Option::is_some) {
        let reference = Tensor::new(
            vec![pins.len(), 1],
            pins.iter().map(|p| if *p == Some(true) { 1.0 } else { -1.0 }).collect(),
        )?;
        Some(BlendMask::new(pins.iter().map(Option::is_some).collect(), reference)?)
    } else {
        None
    };
    let s_model = Bound {
        model: &models.structure,
        params: &models.params,
        cond: &no_cond,
        steps,
    };
    let shape = EpsModel::<f64>::sample_shape(&models.structure);
    let x_s = {
        let mut cb = |t: usize, x: &Tensor<f64>| {
            if let Some(f) = trace.as_mut() {
                f(Stage::Structure, t, x)
            }
        };
        sample(&s_model, &shape, &sched, s_mask.as_ref(), &rng.derive_str("structure"), stage_opts(models, Some(&mut cb)))?
    };
    let mut structure = models.structure.decode_occupancy(&x_s, models.config.sampler.threshold)?;
    // Observation wins over the sampled value.
    for (i, p) in pins.iter().enumerate() {
        if let Some(v) = *p {
            let [x, y, z] = coords_of(geom.structure_dims, i);
            structure.set(x, y, z, v);
        }
    }
    if structure.count() == 0 {
        let voxel_size = models.voxel_size();
        return Ok(SceneOutput {
            grid: SemanticVoxelGrid::empty(geom.grid_dims, voxel_size, models.config.num_classes)?,
            structure,
            latents: Tensor::zeros(&[0, models.latent.width]),
            empty: true,
        });
    }

    // Stage 2: node latents.
    let cg = &models.latent.graph;
    let cond = structure_cond(geom, cg, &structure)?;
    let l_mask = match &partial {
        Some((content, region)) => {
            let (mask, refs) = anchor_region(models, content, region)?;
            if mask.iter().any(|&m| m) {
                Some(BlendMask::new(mask, refs)?)
            } else {
                None
            }
        }
        None => None,
    };
    let l_model = Bound {
        model: &models.latent,
        params: &models.params,
        cond: &cond,
        steps,
    };
    let shape = EpsModel::<f64>::sample_shape(&models.latent);
    let z = {
        let mut cb = |t: usize, x: &Tensor<f64>| {
            if let Some(f) = trace.as_mut() {
                f(Stage::Latent, t, x)
            }
        };
        sample(&l_model, &shape, &sched, l_mask.as_ref(), &rng.derive_str("latent"), stage_opts(models, Some(&mut cb)))?
    };

    // Decode under the sampled structure; observed voxels force their patches.
    let mut forced = hits.clone();
    if let Some((content, _)) = &partial {
        let occ = semantics_to_occupancy(content);
        forced = Some(match forced {
            Some(h) => OccupancyGrid::new(h.dims(), h.bits().iter().zip(occ.bits()).map(|(&a, &b)| a || b).collect())?,
            None => occ,
        });
    }
    let forced_patches = match &forced {
        Some(f) if f.count() > 0 => Some(downsample_occupancy(f, geom.patch)?),
        _ => None,
    };
    let guidance = Guidance {
        structure: structure.clone(),
        forced_patches,
    };
    let (mut grid, dtrace, mut tape) =
        models
            .vae
            .decode(&models.params, &z, SplitPolicy::Guided(&guidance), models.voxel_size())?;
    if let Some(h) = &hits {
        let logits = models.vae.codec.decode(&mut tape, &models.params, dtrace.latents)?;
        label_hits(geom, &mut grid, h, &dtrace.patch_coords, tape.value(logits))?;
    }
    if let Some((content, region)) = &partial {
        for (i, &r) in region.bits().iter().enumerate() {
            if r {
                let [x, y, z] = coords_of(geom.grid_dims, i);
                grid.set(x, y, z, content.labels()[i]);
            }
        }
    }
    Ok(SceneOutput {
        grid,
        structure,
        latents: z,
        empty: false,
    })
}

/// Gives every scan hit decoded as empty its most likely non-empty class.
fn label_hits(
    geom: &Geometry,
    grid: &mut SemanticVoxelGrid,
    hits: &OccupancyGrid,
    patch_coords: &[[usize; 3]],
    logits: &Tensor<f64>,
) -> Result<()> {
    let [px, py, pz] = geom.patch;
    let pv = px * py * pz;
    let index: HashMap<[usize; 3], usize> = patch_coords.iter().enumerate().map(|(n, &c)| (c, n)).collect();
    for [x, y, z] in hits.occupied() {
        if grid.get(x, y, z) != 0 {
            continue;
        }
        let n = index
            .get(&[x / px, y / py, z / pz])
            .ok_or_else(|| Error::Runtime(format!("observed voxel {:?} outside decoded patches", [x, y, z])))?;
        let local = ((z % pz) * py + y % py) * px + x % px;
        let row = logits.row(n * pv + local);
        let best = (1..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(1);
        grid.set(x, y, z, best as u16);
    }
    Ok(())
}

/// Outpainting window: shift along `axis` keeping `overlap` of the extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionSpec {
    pub axis: usize,
    pub overlap: f64,
}

impl ExtensionSpec {
    pub fn new(overlap: f64) -> Self {
        ExtensionSpec { axis: 0, overlap }
    }
}

/// Voxel shift of the new window, snapped to whole structure cells.
pub fn extension_shift(geom: &Geometry, spec: &ExtensionSpec) -> Result<usize> {
    if spec.axis > 2 {
        return Err(Error::InvalidParameter(format!("axis must be 0, 1 or 2, got {}", spec.axis)));
    }
    if !(spec.overlap > 0.0 && spec.overlap <= 1.0) {
        return Err(Error::InvalidParameter(format!("overlap must be in (0, 1], got {}", spec.overlap)));
    }
    let n = geom.grid_dims[spec.axis];
    let unit = structure_factor(geom)[spec.axis];
    let raw = (1.0 - spec.overlap) * n as f64 / unit as f64;
    let shift = raw.round() as usize * unit;
    if shift >= n {
        return Err(Error::InvalidParameter(format!(
            "overlap {} leaves no shared slab after snapping to {unit}-voxel cells",
            spec.overlap
        )));
    }
    Ok(shift)
}

/// The source content visible in the shifted window, and its region.
pub fn extension_anchor(
    geom: &Geometry,
    source: &SemanticVoxelGrid,
    spec: &ExtensionSpec,
) -> Result<(SemanticVoxelGrid, OccupancyGrid)> {
    if source.dims() != geom.grid_dims {
        return Err(Error::Config(format!(
            "source grid dims {:?} differ from configured {:?}",
            source.dims(),
            geom.grid_dims
        )));
    }
    let shift = extension_shift(geom, spec)?;
    let a = spec.axis;
    let dims = source.dims();
    let mut lo = [0i64; 3];
    lo[a] = shift as i64;
    let content = source.window(lo, dims)?;
    let region = OccupancyGrid::from_fn(dims, |x, y, z| [x, y, z][a] + shift < dims[a])?;
    Ok((content, region))
}

pub fn extend(models: &SceneModels, source: &SemanticVoxelGrid, spec: &ExtensionSpec, seed: u64) -> Result<SceneOutput> {
    extend_traced(models, source, spec, seed, None)
}

pub fn extend_traced(
    models: &SceneModels,
    source: &SemanticVoxelGrid,
    spec: &ExtensionSpec,
    seed: u64,
    trace: Option<TraceFn<'_>>,
) -> Result<SceneOutput> {
    let (content, region) = extension_anchor(&models.geom, source, spec)?;
    let req = CompletionRequest {
        scan: None,
        partial: Some(content),
        observed: Some(region),
        seed,
    };
    complete_traced(models, &req, trace)
}
