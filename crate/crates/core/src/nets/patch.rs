//! Per-patch semantic codec: a small 3D CNN maps each non-empty patch of
//! voxels to a latent vector and back to per-voxel class logits.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nets::config::{Geometry, ModelConfig};
use crate::nets::layers::{Conv3d, Mlp, VolumePlan};
use crate::numeric::{ParamStore, Real, Rng, Tape, Tensor, Var};
use crate::octree::encode_code;
use crate::voxel::{OccupancyGrid, SemanticVoxelGrid};

/// Non-empty patches of a scene, in Morton order of their patch coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches {
    /// Patch coordinates `(x, y, z)` on the patch grid.
    pub coords: Vec<[usize; 3]>,
    /// Labels of each patch, x-fastest inside the patch, patches concatenated.
    pub labels: Vec<u16>,
    pub occupancy: OccupancyGrid,
}

impl Patches {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn morton_of(c: [usize; 3]) -> u64 {
    encode_code(c[0] as u32, c[1] as u32, c[2] as u32)
}

/// Splits `grid` into patches and keeps those with any non-empty voxel.
pub fn extract_patches(grid: &SemanticVoxelGrid, geom: &Geometry) -> Result<Patches> {
    if grid.dims() != geom.grid_dims {
        return Err(Error::Config(format!(
            "grid dims {:?} differ from model geometry {:?}",
            grid.dims(),
            geom.grid_dims
        )));
    }
    let [px, py, pz] = geom.patch;
    let occupancy = OccupancyGrid::from_fn(geom.patch_grid, |i, j, k| {
        (0..pz).any(|z| {
            (0..py).any(|y| (0..px).any(|x| grid.get(i * px + x, j * py + y, k * pz + z) != 0))
        })
    })?;
    let mut coords: Vec<[usize; 3]> = occupancy.occupied().collect();
    coords.sort_unstable_by_key(|&c| morton_of(c));
    let mut labels = Vec::with_capacity(coords.len() * px * py * pz);
    for &[i, j, k] in &coords {
        for z in 0..pz {
            for y in 0..py {
                for x in 0..px {
                    labels.push(grid.get(i * px + x, j * py + y, k * pz + z));
                }
            }
        }
    }
    Ok(Patches {
        coords,
        labels,
        occupancy,
    })
}

/// Writes patch labels into an empty grid of the geometry's dims.
pub fn assemble_patches(
    geom: &Geometry,
    voxel_size: f32,
    num_classes: u16,
    coords: &[[usize; 3]],
    labels: &[u16],
) -> Result<SemanticVoxelGrid> {
    let [px, py, pz] = geom.patch;
    let pv = px * py * pz;
    if labels.len() != coords.len() * pv {
        return Err(Error::shape("assemble_patches", &[labels.len()], &[coords.len() * pv]));
    }
    let mut out = SemanticVoxelGrid::empty(geom.grid_dims, voxel_size, num_classes)?;
    for (n, &[i, j, k]) in coords.iter().enumerate() {
        let mut it = labels[n * pv..(n + 1) * pv].iter();
        for z in 0..pz {
            for y in 0..py {
                for x in 0..px {
                    out.set(i * px + x, j * py + y, k * pz + z, *it.next().unwrap());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PatchCodec {
    pub patch: [usize; 3],
    pub num_classes: usize,
    pub hidden: usize,
    pub d_patch: usize,
    enc_conv: Conv3d,
    enc_mlp: Mlp,
    dec_mlp: Mlp,
    dec_conv: Conv3d,
}

impl PatchCodec {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.num_classes as usize;
        let h = cfg.widths.patch_hidden;
        let p = cfg.patch_voxels();
        PatchCodec {
            patch: cfg.patch_xyz(),
            num_classes: c,
            hidden: h,
            d_patch: cfg.d_patch,
            enc_conv: Conv3d::new("patch.enc.conv", c, h, 3),
            enc_mlp: Mlp::new("patch.enc.mlp", p * h, 2 * cfg.d_patch, cfg.d_patch),
            dec_mlp: Mlp::new("patch.dec.mlp", cfg.d_patch, 2 * cfg.d_patch, p * h),
            dec_conv: Conv3d::new("patch.dec.conv", h, c, 3),
        }
    }

    pub fn voxels(&self) -> usize {
        self.patch.iter().product()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &Rng) {
        self.enc_conv.init(store, rng);
        self.enc_mlp.init(store, rng);
        self.dec_mlp.init(store, rng);
        self.dec_conv.init(store, rng);
    }

    /// Latents `[n, d_patch]` of `n` patches given their concatenated labels.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &ParamStore<T>, labels: &[u16]) -> Result<Var> {
        let pv = self.voxels();
        if !labels.len().is_multiple_of(pv) {
            return Err(Error::shape("patch_encode", &[labels.len()], &[pv]));
        }
        let n = labels.len() / pv;
        let c = self.num_classes;
        let mut onehot = vec![T::zero(); labels.len() * c];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= c {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes: c as u16,
                    offset: i as u64,
                });
            }
            onehot[i * c + l as usize] = T::one();
        }
        let x = tape.constant(Tensor::new(vec![labels.len(), c], onehot)?);
        let plan = VolumePlan::new(n, self.patch, 3)?;
        let h = self.enc_conv.forward(tape, p, &plan, x)?;
        let h = tape.tanh(h)?;
        let h = tape.reshape(h, &[n, pv * self.hidden])?;
        self.enc_mlp.forward(tape, p, h)
    }

    /// Voxel class logits `[n · voxels, num_classes]` from latents `[n, d_patch]`.
    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &ParamStore<T>, z: Var) -> Result<Var> {
        let n = tape.shape(z)[0];
        let pv = self.voxels();
        let h = self.dec_mlp.forward(tape, p, z)?;
        let h = tape.reshape(h, &[n * pv, self.hidden])?;
        let h = tape.tanh(h)?;
        let plan = VolumePlan::new(n, self.patch, 3)?;
        self.dec_conv.forward(tape, p, &plan, h)
    }

    pub fn reconstruction_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        logits: Var,
        labels: &[u16],
    ) -> Result<Var> {
        let idx: Arc<[usize]> = labels.iter().map(|&l| l as usize).collect();
        tape.softmax_cross_entropy(logits, idx)
    }
}

/// Row-wise argmax of `[n, c]` logits.
pub fn argmax_labels<T: Real>(logits: &Tensor<T>) -> Vec<u16> {
    (0..logits.rows())
        .map(|i| {
            let r = logits.row(i);
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::check_gradients;
    use crate::numeric::{adam_step, AdamConfig, AdamState};

    fn scene(seed: u64) -> SemanticVoxelGrid {
        let u: Tensor<f64> = Rng::new(seed).uniform(&[16 * 16 * 8], 0.0, 1.0);
        let labels = (0..16 * 16 * 8)
            .map(|i| {
                let z = i / 256;
                if z == 0 {
                    1
                } else if u.data()[i] < 0.05 {
                    2
                } else {
                    0
                }
            })
            .collect();
        SemanticVoxelGrid::new([16, 16, 8], 0.2, 3, labels).unwrap()
    }

    #[test]
    fn extract_and_assemble_round_trip() {
        let cfg = ModelConfig::new([1, 2, 2], 3);
        let geom = Geometry::new([16, 16, 8], &cfg).unwrap();
        let g = scene(3);
        let p = extract_patches(&g, &geom).unwrap();
        assert!(p.coords.windows(2).all(|w| morton_of(w[0]) < morton_of(w[1])));
        assert_eq!(p.occupancy.count(), p.len());
        let back = assemble_patches(&geom, 0.2, 3, &p.coords, &p.labels).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn outdoor_patch_coordinates() {
        let cfg = ModelConfig::new([1, 4, 4], 3);
        let geom = Geometry::new([256, 256, 32], &cfg).unwrap();
        let mut g = SemanticVoxelGrid::empty([256, 256, 32], 0.2, 3).unwrap();
        g.set(255, 4, 31, 2);
        g.set(0, 0, 0, 1);
        let p = extract_patches(&g, &geom).unwrap();
        assert_eq!(p.coords, vec![[0, 0, 0], [63, 1, 31]]);
    }

    #[test]
    fn codec_gradients() {
        let cfg = ModelConfig {
            d_patch: 3,
            widths: crate::nets::config::Widths {
                patch_hidden: 2,
                ..Default::default()
            },
            ..ModelConfig::new([1, 2, 2], 3)
        };
        let codec = PatchCodec::new(&cfg);
        for seed in 0..20u64 {
            let mut p = ParamStore::<f64>::new();
            let rng = Rng::new(seed);
            codec.init(&mut p, &rng);
            let labels: Vec<u16> = (0..8).map(|i| ((i as u64 * 7 + seed) % 3) as u16).collect();
            let r = check_gradients(
                &p,
                |t, p| {
                    let z = codec.encode(t, p, &labels)?;
                    let l = codec.decode(t, p, z)?;
                    codec.reconstruction_loss(t, l, &labels)
                },
                1e-5,
                6,
                &rng.derive(1),
            )
            .unwrap();
            assert!(r.passes(1e-4), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn codec_learns_identity_on_few_patches() {
        let cfg = ModelConfig::new([1, 2, 2], 3);
        let geom = Geometry::new([16, 16, 8], &cfg).unwrap();
        let patches = extract_patches(&scene(1), &geom).unwrap();
        let codec = PatchCodec::new(&cfg);
        let mut p = ParamStore::<f64>::new();
        codec.init(&mut p, &Rng::new(0));
        let mut st = AdamState::new();
        let opt = AdamConfig {
            lr: 1e-2,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..150 {
            let mut t = Tape::new();
            let z = codec.encode(&mut t, &p, &patches.labels).unwrap();
            let l = codec.decode(&mut t, &p, z).unwrap();
            let loss = codec.reconstruction_loss(&mut t, l, &patches.labels).unwrap();
            last = t.value(loss).item();
            let g = t.param_gradients(loss).unwrap();
            adam_step(&mut p, &g, &mut st, &opt).unwrap();
        }
        assert!(last < 0.1, "loss {last}");
    }
}
