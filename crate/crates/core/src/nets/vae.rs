//! Graph VAE over the dual graph of the patch octree.
//!
//! The encoder convolves patch latents on the dual graph and pools sibling
//! octets level by level down to the code depth. The decoder mirrors it: at
//! every depth a shared head predicts a split logit per node, the chosen
//! nodes are unpooled, and at the patch depth the same head predicts patch
//! occupancy while an output layer emits the patch latents.

use std::sync::Arc;

use crate::dualgraph::{dualize, dualize_keys, pool_structure, unpool_structure, DualOctreeGraph};
use crate::error::{Error, Result};
use crate::nets::config::{Geometry, ModelConfig, PoolMode};
use crate::nets::layers::{node_feature_width, node_features, ConvPlan, GraphConv, Linear, Mlp};
use crate::nets::patch::{argmax_labels, assemble_patches, extract_patches, PatchCodec, Patches};
use crate::numeric::{sigmoid, ParamStore, Real, Rng, Tape, Tensor, Var};
use crate::octree::{build_octree_flat, decode_code, intersects, MortonKey, Octree};
use crate::voxel::{OccupancyGrid, SemanticVoxelGrid};

/// Per-node vectors on a dual graph; `valid` marks nodes that carry data.
#[derive(Clone, Debug)]
pub struct LatentField<T> {
    pub graph: DualOctreeGraph,
    pub latents: Tensor<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> LatentField<T> {
    /// Indices of valid nodes.
    pub fn valid_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }
}

/// Gaussian code on the coarse graph with its recorded noise.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeCode<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub eps: Tensor<T>,
    pub z: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLossBreakdown {
    pub l_sem: f64,
    pub l_octree: f64,
    pub l_kl: f64,
    pub beta: f64,
    pub total: f64,
}

/// How decoder split decisions are made.
#[derive(Clone, Copy, Debug)]
pub enum SplitPolicy<'a> {
    /// Ground-truth splits and occupancy from the scene's octree.
    TeacherForced(&'a Octree),
    /// `sigmoid(logit) > 0.5`.
    Threshold,
    /// Generation: fixed tiling above the structure depth, the given coarse
    /// structure at it, and thresholded occupancy below with at least one
    /// patch per occupied coarse cell.
    Guided(&'a Guidance),
}

#[derive(Clone, Debug)]
pub struct Guidance {
    /// Occupancy at the structure depth.
    pub structure: OccupancyGrid,
    /// Patches that must be present, on the patch grid.
    pub forced_patches: Option<OccupancyGrid>,
}

/// Split logits and decisions for the nodes of one depth.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub depth: u32,
    pub codes: Vec<u64>,
    pub logits: Var,
    pub decisions: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct DecodeTrace {
    pub graph: DualOctreeGraph,
    /// Deepest entry is patch occupancy, the rest are split signals.
    pub levels: Vec<LevelOutput>,
    /// Nodes of `graph` decoded as non-empty patches.
    pub patch_nodes: Vec<usize>,
    pub patch_coords: Vec<[usize; 3]>,
    /// Latents `[patch_nodes.len(), d_patch]`.
    pub latents: Var,
}

/// Everything the loss needs to know about one training scene.
#[derive(Clone, Debug)]
pub struct SceneTarget {
    pub patches: Patches,
    pub octree: Octree,
    pub graph: DualOctreeGraph,
}

#[derive(Clone, Debug)]
struct PoolStep {
    coarse: DualOctreeGraph,
    /// For mean mode: `(fine, coarse, weight)`; for learned mode the coarse
    /// row is `coarse · 8 + octant`.
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weight: Arc<[f64]>,
}

fn pool_step(g: &DualOctreeGraph, depth: u32, mode: PoolMode) -> Result<PoolStep> {
    let deepest = g.depths().iter().copied().max().unwrap_or(0) as u32;
    let (coarse, target, group) = if deepest < depth {
        let keys: Vec<MortonKey> = g.keys().collect();
        let n = keys.len();
        (dualize_keys(&keys, depth - 1), (0..n).collect(), vec![1; n])
    } else if deepest == depth {
        let m = pool_structure(g)?;
        (m.coarse, m.target, m.group_size)
    } else {
        return Err(Error::InvalidParameter(format!(
            "graph has nodes at depth {deepest} below pooling depth {depth}"
        )));
    };
    let (mut src, mut dst, mut weight) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &t) in target.iter().enumerate() {
        match mode {
            PoolMode::Mean => {
                src.push(i);
                dst.push(t);
                weight.push(1.0 / group[t] as f64);
            }
            PoolMode::Learned if group[t] == 8 => {
                src.push(i);
                dst.push(t * 8 + (g.key(i).code & 7) as usize);
                weight.push(1.0);
            }
            PoolMode::Learned => {
                for o in 0..8 {
                    src.push(i);
                    dst.push(t * 8 + o);
                    weight.push(1.0);
                }
            }
        }
    }
    Ok(PoolStep {
        coarse,
        src: src.into(),
        dst: dst.into(),
        weight: weight.into(),
    })
}

#[derive(Clone, Debug)]
pub struct GraphVae {
    pub cfg: ModelConfig,
    pub geom: Geometry,
    pub codec: PatchCodec,
    enc_in: Linear,
    enc_convs: Vec<GraphConv>,
    enc_pools: Vec<Linear>,
    enc_mu: Linear,
    enc_logvar: Linear,
    dec_in: Linear,
    dec_convs: Vec<GraphConv>,
    dec_lifts: Vec<Linear>,
    head: Mlp,
    out: Linear,
}

impl GraphVae {
    pub fn new(cfg: &ModelConfig, grid_dims: [usize; 3]) -> Result<Self> {
        let geom = Geometry::new(grid_dims, cfg)?;
        let h = cfg.widths.vae_hidden;
        let code = cfg.widths.code;
        let pos = node_feature_width(cfg.fourier_bands);
        let k = cfg.pool_levels as usize;
        Ok(GraphVae {
            cfg: cfg.clone(),
            geom,
            codec: PatchCodec::new(cfg),
            enc_in: Linear::new("vae.enc.in", cfg.d_patch + 1 + pos, h),
            enc_convs: (0..=k).map(|l| GraphConv::new(format!("vae.enc.conv{l}"), h, h)).collect(),
            enc_pools: (0..k).map(|l| Linear::new(format!("vae.enc.pool{l}"), 8 * h, h)).collect(),
            enc_mu: Linear::new("vae.enc.mu", h, code),
            enc_logvar: Linear::new("vae.enc.logvar", h, code),
            dec_in: Linear::new("vae.dec.in", code + pos, h),
            dec_convs: (0..=k).map(|l| GraphConv::new(format!("vae.dec.conv{l}"), h, h)).collect(),
            dec_lifts: (0..k).map(|l| Linear::new(format!("vae.dec.lift{l}"), h + pos, h)).collect(),
            head: Mlp::new("vae.dec.head", h, h, 1),
            out: Linear::new("vae.dec.out", h, cfg.d_patch),
        })
    }

    pub fn init_params<T: Real>(&self, rng: &Rng) -> ParamStore<T> {
        let mut p = ParamStore::new();
        self.codec.init(&mut p, rng);
        self.enc_in.init(&mut p, rng);
        for c in self.enc_convs.iter().chain(&self.dec_convs) {
            c.init(&mut p, rng);
        }
        if self.cfg.pool_mode == PoolMode::Learned {
            let h = self.cfg.widths.vae_hidden;
            for l in &self.enc_pools {
                // Starts as the mean of the eight octant slots.
                let w = Tensor::from_fn(&[8 * h, h], |i| {
                    let (r, c) = (i / h, i % h);
                    T::lit(if r % h == c { 0.125 } else { 0.0 })
                });
                p.insert(format!("{}.w", l.name), w);
                p.insert(format!("{}.b", l.name), Tensor::zeros(&[h]));
            }
        }
        for l in [&self.enc_mu, &self.dec_in, &self.out] {
            l.init(&mut p, rng);
        }
        // Small initial variance keeps early samples near the mean.
        self.enc_logvar.init_zero(&mut p);
        for l in &self.dec_lifts {
            l.init(&mut p, rng);
        }
        self.head.init(&mut p, rng);
        p
    }

    fn pos<T: Real>(&self, tape: &mut Tape<T>, g: &DualOctreeGraph) -> Var {
        tape.constant(node_features(g, self.cfg.fourier_bands, self.geom.patch_depth))
    }

    /// Dual graph of the patch octree of `occ` (tiled down to the structure depth).
    pub fn patch_octree(&self, occ: &OccupancyGrid) -> Octree {
        build_octree_flat(occ, self.geom.structure_depth)
    }

    pub fn prepare(&self, grid: &SemanticVoxelGrid) -> Result<SceneTarget> {
        let patches = extract_patches(grid, &self.geom)?;
        let octree = self.patch_octree(&patches.occupancy);
        let graph = dualize(&octree);
        Ok(SceneTarget {
            patches,
            octree,
            graph,
        })
    }

    /// Patch latents placed on the scene graph; zero on non-patch nodes.
    pub fn field_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        target: &SceneTarget,
    ) -> Result<(Var, Vec<bool>)> {
        let g = &target.graph;
        let z = self.codec.encode(tape, p, &target.patches.labels)?;
        let mut rows = vec![usize::MAX; g.num_nodes()];
        let mut valid = vec![false; g.num_nodes()];
        for (n, c) in target.patches.coords.iter().enumerate() {
            let key = MortonKey {
                depth: self.geom.patch_depth,
                code: crate::nets::patch::morton_of(*c),
            };
            let i = g.find(key).ok_or_else(|| Error::Runtime("patch node missing from graph".into()))?;
            rows[i] = n;
            valid[i] = true;
        }
        let placed = tape.gather(z, rows.into())?;
        Ok((placed, valid))
    }

    /// Encoder; returns `(mu, logvar, code graph)`.
    pub fn encode_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        graph: &DualOctreeGraph,
        latents: Var,
        valid: &[bool],
    ) -> Result<(Var, Var, DualOctreeGraph)> {
        let flag = tape.constant(Tensor::from_fn(&[valid.len(), 1], |i| {
            if valid[i] {
                T::one()
            } else {
                T::zero()
            }
        }));
        let pos = self.pos(tape, graph);
        let x = tape.concat(&[latents, flag, pos])?;
        let x = self.enc_in.forward(tape, p, x)?;
        let mut h = tape.tanh(x)?;
        let mut g = graph.clone();
        for (l, d) in (self.geom.code_depth + 1..=self.geom.patch_depth).rev().enumerate() {
            let y = self.enc_convs[l].forward(tape, p, &ConvPlan::new(&g), h)?;
            h = tape.tanh(y)?;
            let step = pool_step(&g, d, self.cfg.pool_mode)?;
            let nc = step.coarse.num_nodes();
            let w: Arc<[T]> = step.weight.iter().map(|&v| T::lit(v)).collect();
            let moved = tape.gather(h, step.src.clone())?;
            h = match self.cfg.pool_mode {
                PoolMode::Mean => tape.scatter_add(moved, step.dst.clone(), Some(w), nc)?,
                PoolMode::Learned => {
                    let hw = self.cfg.widths.vae_hidden;
                    let s = tape.scatter_add(moved, step.dst.clone(), Some(w), nc * 8)?;
                    let s = tape.reshape(s, &[nc, 8 * hw])?;
                    self.enc_pools[l].forward(tape, p, s)?
                }
            };
            g = step.coarse;
        }
        let k = self.enc_convs.len() - 1;
        let y = self.enc_convs[k].forward(tape, p, &ConvPlan::new(&g), h)?;
        let h = tape.tanh(y)?;
        let mu = self.enc_mu.forward(tape, p, h)?;
        let logvar = self.enc_logvar.forward(tape, p, h)?;
        Ok((mu, logvar, g))
    }

    /// `z = mu + exp(logvar / 2) · eps`.
    pub fn reparameterize<T: Real>(&self, tape: &mut Tape<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var> {
        let half = tape.scale(logvar, T::lit(0.5))?;
        let sd = tape.exp(half)?;
        let e = tape.constant(eps);
        let n = tape.mul(sd, e)?;
        tape.add(mu, n)
    }

    fn decide(
        &self,
        policy: SplitPolicy<'_>,
        depth: u32,
        codes: &[u64],
        logits: &Tensor<impl Real>,
    ) -> Result<Vec<bool>> {
        let geom = &self.geom;
        let last = depth == geom.patch_depth;
        let real: Vec<bool> = codes
            .iter()
            .map(|&c| intersects(c, depth, geom.patch_depth, geom.patch_grid))
            .collect();
        let thresholded = || -> Vec<bool> {
            (0..codes.len())
                .map(|i| real[i] && sigmoid(logits.data()[i].as_f64()) > 0.5)
                .collect()
        };
        let out = match policy {
            SplitPolicy::TeacherForced(oct) => {
                let level = oct.level(depth);
                codes
                    .iter()
                    .map(|&c| {
                        let i = level
                            .find(c)
                            .ok_or_else(|| Error::Runtime(format!("node {c} at depth {depth} not in target")))?;
                        Ok(if last { level.occupied()[i] } else { level.split()[i] })
                    })
                    .collect::<Result<Vec<bool>>>()?
            }
            SplitPolicy::Threshold => thresholded(),
            SplitPolicy::Guided(gd) => {
                if depth < geom.structure_depth {
                    real
                } else if depth == geom.structure_depth {
                    codes
                        .iter()
                        .map(|&c| {
                            let [x, y, z] = decode_code(c).map(|v| v as usize);
                            let d = gd.structure.dims();
                            x < d[0] && y < d[1] && z < d[2] && gd.structure.get(x, y, z)
                        })
                        .collect()
                } else if last {
                    let mut dec = thresholded();
                    if let Some(f) = &gd.forced_patches {
                        for (i, &c) in codes.iter().enumerate() {
                            let [x, y, z] = decode_code(c).map(|v| v as usize);
                            dec[i] |= real[i] && f.get(x, y, z);
                        }
                    }
                    // Nodes of one split parent are consecutive.
                    let mut i = 0;
                    while i < codes.len() {
                        let parent = codes[i] >> 3;
                        let mut j = i;
                        while j < codes.len() && codes[j] >> 3 == parent {
                            j += 1;
                        }
                        if !dec[i..j].iter().any(|&b| b) {
                            let best = (i..j)
                                .filter(|&q| real[q])
                                .max_by(|&a, &b| logits.data()[a].partial_cmp(&logits.data()[b]).unwrap())
                                .unwrap_or(i);
                            dec[best] = true;
                        }
                        i = j;
                    }
                    dec
                } else {
                    thresholded()
                }
            }
        };
        Ok(out)
    }

    /// Decoder from a code `z` on the code graph.
    pub fn decode_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        code_graph: &DualOctreeGraph,
        z: Var,
        policy: SplitPolicy<'_>,
    ) -> Result<DecodeTrace> {
        let geom = &self.geom;
        let pos = self.pos(tape, code_graph);
        let x = tape.concat(&[z, pos])?;
        let x = self.dec_in.forward(tape, p, x)?;
        let h0 = tape.tanh(x)?;
        let y = self.dec_convs[0].forward(tape, p, &ConvPlan::new(code_graph), h0)?;
        let mut h = tape.tanh(y)?;
        let mut g = code_graph.clone();
        let mut levels = Vec::new();
        for (l, d) in (geom.code_depth..=geom.patch_depth).enumerate() {
            let sel: Vec<usize> = (0..g.num_nodes()).filter(|&i| g.depth(i) == d).collect();
            let codes: Vec<u64> = sel.iter().map(|&i| g.key(i).code).collect();
            let hs = tape.gather(h, sel.clone().into())?;
            let logits = self.head.forward(tape, p, hs)?;
            let decisions = self.decide(policy, d, &codes, tape.value(logits))?;
            levels.push(LevelOutput {
                depth: d,
                codes,
                logits,
                decisions: decisions.clone(),
            });
            if d == geom.patch_depth {
                let patch_nodes: Vec<usize> = sel.iter().zip(&decisions).filter(|(_, &b)| b).map(|(&i, _)| i).collect();
                let patch_coords = patch_nodes
                    .iter()
                    .map(|&i| g.key(i).coords().map(|v| v as usize))
                    .collect();
                let hp = tape.gather(h, patch_nodes.clone().into())?;
                let latents = self.out.forward(tape, p, hp)?;
                return Ok(DecodeTrace {
                    graph: g,
                    levels,
                    patch_nodes,
                    patch_coords,
                    latents,
                });
            }
            let mut splits = vec![false; g.num_nodes()];
            for (&i, &b) in sel.iter().zip(&decisions) {
                splits[i] = b;
            }
            let map = unpool_structure(&g, &splits)?;
            let hu = tape.gather(h, map.source.into())?;
            g = map.fine;
            let pos = self.pos(tape, &g);
            let x = tape.concat(&[hu, pos])?;
            let x = self.dec_lifts[l].forward(tape, p, x)?;
            let x = tape.tanh(x)?;
            let y = self.dec_convs[l + 1].forward(tape, p, &ConvPlan::new(&g), x)?;
            h = tape.tanh(y)?;
        }
        unreachable!("loop returns at the patch depth")
    }

    /// Builds the loss of one scene on `tape`, teacher-forcing the decoder.
    /// Returns the total and the breakdown variables `(sem, octree, kl)`.
    pub fn loss_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        target: &SceneTarget,
        eps_rng: &Rng,
    ) -> Result<(Var, [Var; 3])> {
        let (field, valid) = self.field_tape(tape, p, target)?;
        let (mu, logvar, cg) = self.encode_tape(tape, p, &target.graph, field, &valid)?;
        let eps = eps_rng.normal(tape.shape(mu));
        let z = self.reparameterize(tape, mu, logvar, eps)?;
        let trace = self.decode_tape(tape, p, &cg, z, SplitPolicy::TeacherForced(&target.octree))?;
        let sem = if trace.patch_nodes.is_empty() {
            None
        } else {
            Some(self.codec.decode(tape, p, trace.latents)?)
        };
        let levels: Vec<(Var, &[bool])> = trace.levels.iter().map(|l| (l.logits, &l.decisions[..])).collect();
        vae_loss(tape, sem, &target.patches.labels, &levels, mu, logvar, self.cfg.beta)
    }

    /// Patch latents on the scene graph, without gradient tracking.
    pub fn patch_encode<T: Real>(&self, p: &ParamStore<T>, grid: &SemanticVoxelGrid) -> Result<LatentField<T>> {
        let target = self.prepare(grid)?;
        let mut tape = Tape::new();
        let (f, valid) = self.field_tape(&mut tape, p, &target)?;
        Ok(LatentField {
            graph: target.graph,
            latents: tape.value(f).clone(),
            valid,
        })
    }

    /// Encodes a scene to its code; `eps_rng` draws the recorded noise.
    pub fn encode<T: Real>(&self, p: &ParamStore<T>, grid: &SemanticVoxelGrid, eps_rng: &Rng) -> Result<VaeCode<T>> {
        let target = self.prepare(grid)?;
        let mut tape = Tape::new();
        let (f, valid) = self.field_tape(&mut tape, p, &target)?;
        let (mu, logvar, _) = self.encode_tape(&mut tape, p, &target.graph, f, &valid)?;
        let eps = eps_rng.normal(tape.shape(mu));
        let z = self.reparameterize(&mut tape, mu, logvar, eps.clone())?;
        Ok(VaeCode {
            mu: tape.value(mu).clone(),
            logvar: tape.value(logvar).clone(),
            eps,
            z: tape.value(z).clone(),
        })
    }

    /// Decodes `z` on the code graph into a labeled scene.
    pub fn decode<T: Real>(
        &self,
        p: &ParamStore<T>,
        z: &Tensor<T>,
        policy: SplitPolicy<'_>,
        voxel_size: f32,
    ) -> Result<(SemanticVoxelGrid, DecodeTrace, Tape<T>)> {
        let cg = self.geom.code_graph();
        if z.shape() != [cg.num_nodes(), self.cfg.widths.code] {
            return Err(Error::shape("vae_decode", z.shape(), &[cg.num_nodes(), self.cfg.widths.code]));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let trace = self.decode_tape(&mut tape, p, &cg, zv, policy)?;
        let logits = self.codec.decode(&mut tape, p, trace.latents)?;
        let labels = argmax_labels(tape.value(logits));
        let grid = assemble_patches(
            &self.geom,
            voxel_size,
            self.cfg.num_classes,
            &trace.patch_coords,
            &labels,
        )?;
        Ok((grid, trace, tape))
    }
}

impl GraphVae {
    /// Mean teacher-forced loss over `targets` and its parameter gradients.
    /// Scene `i` draws its noise from `rng.derive(i)`.
    pub fn batch_gradients<T: Real>(
        &self,
        p: &ParamStore<T>,
        targets: &[SceneTarget],
        rng: &Rng,
    ) -> Result<(VaeLossBreakdown, std::collections::BTreeMap<String, Tensor<T>>)> {
        if targets.is_empty() {
            return Err(Error::InvalidParameter("empty training batch".into()));
        }
        let mut tape = Tape::new();
        let w = T::lit(1.0 / targets.len() as f64);
        let mut total = tape.constant(Tensor::scalar(T::zero()));
        let mut sums = [0.0; 4];
        for (i, t) in targets.iter().enumerate() {
            let (l, parts) = self.loss_tape(&mut tape, p, t, &rng.derive(i as u64))?;
            let b = VaeLossBreakdown::read(&tape, l, parts, self.cfg.beta);
            for (s, v) in sums.iter_mut().zip([b.l_sem, b.l_octree, b.l_kl, b.total]) {
                *s += v / targets.len() as f64;
            }
            let lw = tape.scale(l, w)?;
            total = tape.add(total, lw)?;
        }
        let grads = tape.param_gradients(total)?;
        let b = VaeLossBreakdown {
            l_sem: sums[0],
            l_octree: sums[1],
            l_kl: sums[2],
            beta: self.cfg.beta,
            total: sums[3],
        };
        Ok((b, grads))
    }

    /// Inference reconstruction from the code mean with thresholded splits.
    pub fn reconstruct<T: Real>(&self, p: &ParamStore<T>, grid: &SemanticVoxelGrid) -> Result<SemanticVoxelGrid> {
        let code = self.encode(p, grid, &Rng::new(0))?;
        Ok(self.decode(p, &code.mu, SplitPolicy::Threshold, grid.voxel_size())?.0)
    }

    /// `(correct, total)` split and occupancy signals under teacher forcing,
    /// decoding from the code mean.
    pub fn split_agreement<T: Real>(&self, p: &ParamStore<T>, target: &SceneTarget) -> Result<(usize, usize)> {
        let mut tape = Tape::new();
        let (f, valid) = self.field_tape(&mut tape, p, target)?;
        let (mu, _, cg) = self.encode_tape(&mut tape, p, &target.graph, f, &valid)?;
        let trace = self.decode_tape(&mut tape, p, &cg, mu, SplitPolicy::TeacherForced(&target.octree))?;
        let (mut ok, mut n) = (0, 0);
        for lv in &trace.levels {
            for (&x, &b) in tape.value(lv.logits).data().iter().zip(&lv.decisions) {
                ok += usize::from((x > T::zero()) == b);
                n += 1;
            }
        }
        Ok((ok, n))
    }
}

/// Total loss and breakdown variables `(sem, octree, kl)`.
///
/// `sem_logits` are voxel logits of the supervised patches with their
/// ground-truth `labels`; `None` when no patch is supervised. `levels` pairs
/// each level's split logits with its targets; the split term is the mean
/// BCE over the nodes of all levels.
pub fn vae_loss<T: Real>(
    tape: &mut Tape<T>,
    sem_logits: Option<Var>,
    labels: &[u16],
    levels: &[(Var, &[bool])],
    mu: Var,
    logvar: Var,
    beta: f64,
) -> Result<(Var, [Var; 3])> {
    let l_sem = match sem_logits {
        Some(l) => {
            let idx: Arc<[usize]> = labels.iter().map(|&l| l as usize).collect();
            tape.softmax_cross_entropy(l, idx)?
        }
        None => tape.constant(Tensor::scalar(T::zero())),
    };
    let total_nodes: usize = levels.iter().map(|l| l.1.len()).sum();
    let mut l_oct = tape.constant(Tensor::scalar(T::zero()));
    for &(logits, targets) in levels {
        if targets.is_empty() {
            continue;
        }
        let t: Arc<[T]> = targets.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let b = tape.sigmoid_bce(logits, t)?;
        let w = tape.scale(b, T::lit(targets.len() as f64 / total_nodes as f64))?;
        l_oct = tape.add(l_oct, w)?;
    }
    let l_kl = tape.gaussian_kl(mu, logvar)?;
    let a = tape.add(l_sem, l_oct)?;
    let k = tape.scale(l_kl, T::lit(beta))?;
    let total = tape.add(a, k)?;
    Ok((total, [l_sem, l_oct, l_kl]))
}

impl VaeLossBreakdown {
    pub fn read<T: Real>(tape: &Tape<T>, total: Var, parts: [Var; 3], beta: f64) -> Self {
        let v = |x: Var| tape.value(x).item().as_f64();
        VaeLossBreakdown {
            l_sem: v(parts[0]),
            l_octree: v(parts[1]),
            l_kl: v(parts[2]),
            beta,
            total: v(total),
        }
    }
}
