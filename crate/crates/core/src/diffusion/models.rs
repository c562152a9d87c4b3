use std::sync::Arc;

use crate::dualgraph::{pool_structure, DualOctreeGraph};
use crate::error::{Error, Result};
use crate::nets::layers::fourier_features;
use crate::nets::{node_feature_width, node_features, time_embedding, Conv3d, ConvPlan, Geometry, GraphConv, Linear, VolumePlan};
use crate::numeric::{ParamStore, Real, Rng, Tape, Tensor, Var};
use crate::octree::decode_code;
use crate::voxel::OccupancyGrid;

const TIME_DIM: usize = 16;

/// A trainable ε-predictor over `[rows, cols]` samples.
pub trait EpsModel<T: Real> {
    fn init_params(&self, rng: &Rng) -> ParamStore<T>;

    /// Shape of one sample.
    fn sample_shape(&self) -> Vec<usize>;

    /// Columns of the per-row conditioning tensor (0 when unconditioned).
    fn cond_width(&self) -> usize;

    /// Predicted noise for `x` at step `t` of a `steps`-step schedule.
    fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        x: Var,
        t: usize,
        steps: usize,
        cond: &Tensor<T>,
    ) -> Result<Var>;
}

/// Shared time-embedding MLP and per-block shifts.
#[derive(Clone, Debug)]
struct TimeFilm {
    embed: Linear,
    shifts: Vec<Linear>,
}

impl TimeFilm {
    fn new(prefix: &str, hidden: usize, blocks: usize) -> Self {
        TimeFilm {
            embed: Linear::new(format!("{prefix}.time"), TIME_DIM, hidden),
            shifts: (0..blocks)
                .map(|b| Linear::new(format!("{prefix}.shift{b}"), hidden, hidden))
                .collect(),
        }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &Rng) {
        self.embed.init(p, rng);
        for s in &self.shifts {
            s.init(p, rng);
        }
    }

    /// One `[1, hidden]` shift per block.
    fn shifts<T: Real>(&self, tape: &mut Tape<T>, p: &ParamStore<T>, t: usize, steps: usize) -> Result<Vec<Var>> {
        let e = tape.constant(time_embedding(t, steps, TIME_DIM));
        let e = self.embed.forward(tape, p, e)?;
        let e = tape.tanh(e)?;
        self.shifts.iter().map(|s| s.forward(tape, p, e)).collect()
    }
}

fn shifted_tanh<T: Real>(tape: &mut Tape<T>, y: Var, shift: Var) -> Result<Var> {
    let y = tape.add_bias(y, shift)?;
    tape.tanh(y)
}

fn check_input<T: Real>(tape: &Tape<T>, x: Var, want: &[usize], cond: &Tensor<T>, cond_width: usize) -> Result<()> {
    if tape.shape(x) != want {
        return Err(Error::shape("denoiser", tape.shape(x), want));
    }
    if cond_width > 0 && (cond.rows() != want[0] || cond.cols() != cond_width) {
        return Err(Error::shape("denoiser condition", cond.shape(), &[want[0], cond_width]));
    }
    Ok(())
}

/// 3D CNN over the coarse structure grid, one channel per cell.
#[derive(Clone, Debug)]
pub struct StructureDenoiser {
    pub dims: [usize; 3],
    pub hidden: usize,
    pub bands: usize,
    plan: VolumePlan,
    film: TimeFilm,
    conv_in: Conv3d,
    convs: Vec<Conv3d>,
    out: Conv3d,
}

impl StructureDenoiser {
    pub fn new(dims: [usize; 3], hidden: usize, bands: usize) -> Result<Self> {
        let pos = 3 + 6 * bands;
        Ok(StructureDenoiser {
            dims,
            hidden,
            bands,
            plan: VolumePlan::new(1, dims, 3)?,
            film: TimeFilm::new("sd", hidden, 3),
            conv_in: Conv3d::new("sd.in", 1 + pos, hidden, 3),
            convs: (0..2).map(|i| Conv3d::new(format!("sd.conv{i}"), hidden, hidden, 3)).collect(),
            out: Conv3d::new("sd.out", hidden, 1, 3),
        })
    }

    pub fn for_geometry(geom: &Geometry, hidden: usize, bands: usize) -> Result<Self> {
        Self::new(geom.structure_dims, hidden, bands)
    }

    fn positions<T: Real>(&self) -> Tensor<T> {
        let [nx, ny, nz] = self.dims;
        let w = 3 + 6 * self.bands;
        let mut data = Vec::with_capacity(nx * ny * nz * w);
        let mut row = Vec::with_capacity(w);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    row.clear();
                    let c = [(x as f64 + 0.5) / nx as f64, (y as f64 + 0.5) / ny as f64, (z as f64 + 0.5) / nz as f64];
                    row.extend_from_slice(&c);
                    fourier_features(c, self.bands, &mut row);
                    data.extend(row.iter().map(|&v| T::lit(v)));
                }
            }
        }
        Tensor::new(vec![nx * ny * nz, w], data).expect("row width")
    }

    /// `±1` encoding of an occupancy grid as a `[cells, 1]` sample.
    pub fn encode_occupancy<T: Real>(occ: &OccupancyGrid) -> Tensor<T> {
        let d = occ.bits().iter().map(|&b| if b { T::one() } else { -T::one() }).collect();
        Tensor::new(vec![occ.len(), 1], d).expect("len")
    }

    pub fn decode_occupancy<T: Real>(&self, x: &Tensor<T>, threshold: f64) -> Result<OccupancyGrid> {
        OccupancyGrid::new(self.dims, x.data().iter().map(|v| v.as_f64() > threshold).collect())
    }
}

impl<T: Real> EpsModel<T> for StructureDenoiser {
    fn init_params(&self, rng: &Rng) -> ParamStore<T> {
        let mut p = ParamStore::new();
        self.film.init(&mut p, rng);
        self.conv_in.init(&mut p, rng);
        for c in &self.convs {
            c.init(&mut p, rng);
        }
        self.out.lin.init_zero(&mut p);
        p
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.dims.iter().product(), 1]
    }

    fn cond_width(&self) -> usize {
        0
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        x: Var,
        t: usize,
        steps: usize,
        cond: &Tensor<T>,
    ) -> Result<Var> {
        check_input(tape, x, &EpsModel::<T>::sample_shape(self), cond, 0)?;
        let shifts = self.film.shifts(tape, p, t, steps)?;
        let pos = tape.constant(self.positions());
        let inp = tape.concat(&[x, pos])?;
        let y = self.conv_in.forward(tape, p, &self.plan, inp)?;
        let mut h = shifted_tanh(tape, y, shifts[0])?;
        for (c, &s) in self.convs.iter().zip(&shifts[1..]) {
            let y = c.forward(tape, p, &self.plan, h)?;
            let y = shifted_tanh(tape, y, s)?;
            h = tape.add(h, y)?;
        }
        self.out.forward(tape, p, &self.plan, h)
    }
}

/// Per code node, the occupancy of its descendants at the structure depth
/// in Morton order; cells outside the structure grid read as empty.
pub fn structure_cond<T: Real>(geom: &Geometry, code_graph: &DualOctreeGraph, structure: &OccupancyGrid) -> Result<Tensor<T>> {
    if structure.dims() != geom.structure_dims {
        return Err(Error::shape("structure_cond", &structure.dims(), &geom.structure_dims));
    }
    let gap = geom.structure_depth - geom.code_depth;
    let per = 1usize << (3 * gap);
    let d = structure.dims();
    let mut data = Vec::with_capacity(code_graph.num_nodes() * per);
    for i in 0..code_graph.num_nodes() {
        let k = code_graph.key(i);
        let base = k.code << (3 * (geom.structure_depth - k.depth));
        let span = 1u64 << (3 * (geom.structure_depth - k.depth));
        for j in 0..per as u64 {
            // Coarser nodes (possible only for phantom cells) repeat their
            // first descendants.
            let c = base + j % span;
            let [x, y, z] = decode_code(c).map(|v| v as usize);
            let on = x < d[0] && y < d[1] && z < d[2] && structure.get(x, y, z);
            data.push(if on { T::one() } else { T::zero() });
        }
    }
    Tensor::new(vec![code_graph.num_nodes(), per], data)
}

#[derive(Clone, Debug)]
struct PoolIndex {
    coarse_nodes: usize,
    target: Arc<[usize]>,
    weight: Arc<[f64]>,
}

/// Two-level graph U-Net on a fixed graph (usually the code graph).
#[derive(Clone, Debug)]
pub struct LatentDenoiser {
    pub graph: DualOctreeGraph,
    pub width: usize,
    pub cond: usize,
    pub hidden: usize,
    pub bands: usize,
    ref_depth: u32,
    pool: Option<(PoolIndex, DualOctreeGraph)>,
    film: TimeFilm,
    inp: Linear,
    down: Vec<GraphConv>,
    mid: Vec<GraphConv>,
    merge: Linear,
    up: GraphConv,
    out: Linear,
}

impl LatentDenoiser {
    pub fn new(graph: DualOctreeGraph, width: usize, cond: usize, hidden: usize, bands: usize, ref_depth: u32) -> Result<Self> {
        let pool = if graph.depths().iter().any(|&d| d > 0) {
            let m = pool_structure(&graph)?;
            let w = m.target.iter().map(|&t| 1.0 / m.group_size[t] as f64).collect();
            Some((
                PoolIndex {
                    coarse_nodes: m.coarse.num_nodes(),
                    target: m.target.into(),
                    weight: w,
                },
                m.coarse,
            ))
        } else {
            None
        };
        let pos = node_feature_width(bands);
        Ok(LatentDenoiser {
            graph,
            width,
            cond,
            hidden,
            bands,
            ref_depth,
            pool,
            film: TimeFilm::new("ld", hidden, 5),
            inp: Linear::new("ld.in", width + cond + pos, hidden),
            down: (0..2).map(|i| GraphConv::new(format!("ld.down{i}"), hidden, hidden)).collect(),
            mid: (0..2).map(|i| GraphConv::new(format!("ld.mid{i}"), hidden, hidden)).collect(),
            merge: Linear::new("ld.merge", 2 * hidden, hidden),
            up: GraphConv::new("ld.up", hidden, hidden),
            out: Linear::new("ld.out", hidden, width),
        })
    }

    /// Denoiser on the code graph of `geom`, conditioned on coarse structure.
    pub fn for_geometry(geom: &Geometry, width: usize, hidden: usize, bands: usize) -> Result<Self> {
        let gap = geom.structure_depth - geom.code_depth;
        Self::new(geom.code_graph(), width, 1 << (3 * gap), hidden, bands, geom.patch_depth)
    }
}

impl<T: Real> EpsModel<T> for LatentDenoiser {
    fn init_params(&self, rng: &Rng) -> ParamStore<T> {
        let mut p = ParamStore::new();
        self.film.init(&mut p, rng);
        self.inp.init(&mut p, rng);
        for c in self.down.iter().chain(&self.mid).chain(std::iter::once(&self.up)) {
            c.init(&mut p, rng);
        }
        self.merge.init(&mut p, rng);
        self.out.init_zero(&mut p);
        p
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.graph.num_nodes(), self.width]
    }

    fn cond_width(&self) -> usize {
        self.cond
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        x: Var,
        t: usize,
        steps: usize,
        cond: &Tensor<T>,
    ) -> Result<Var> {
        check_input(tape, x, &EpsModel::<T>::sample_shape(self), cond, self.cond)?;
        let s = self.film.shifts(tape, p, t, steps)?;
        let pos = tape.constant(node_features(&self.graph, self.bands, self.ref_depth));
        let mut parts = vec![x];
        if self.cond > 0 {
            parts.push(tape.constant(cond.clone()));
        }
        parts.push(pos);
        let inp = tape.concat(&parts)?;
        let y = self.inp.forward(tape, p, inp)?;
        let mut h = shifted_tanh(tape, y, s[0])?;
        let plan = ConvPlan::new(&self.graph);
        for (c, &sh) in self.down.iter().zip(&s[1..3]) {
            let y = c.forward(tape, p, &plan, h)?;
            let y = shifted_tanh(tape, y, sh)?;
            h = tape.add(h, y)?;
        }
        let skip = h;
        let up = match &self.pool {
            Some((idx, coarse)) => {
                let w: Arc<[T]> = idx.weight.iter().map(|&v| T::lit(v)).collect();
                let mut c = tape.scatter_add(h, idx.target.clone(), Some(w), idx.coarse_nodes)?;
                let cplan = ConvPlan::new(coarse);
                for (m, &sh) in self.mid.iter().zip(&s[3..5]) {
                    let y = m.forward(tape, p, &cplan, c)?;
                    let y = shifted_tanh(tape, y, sh)?;
                    c = tape.add(c, y)?;
                }
                tape.gather(c, idx.target.clone())?
            }
            None => {
                let mut c = h;
                for (m, &sh) in self.mid.iter().zip(&s[3..5]) {
                    let y = m.forward(tape, p, &plan, c)?;
                    let y = shifted_tanh(tape, y, sh)?;
                    c = tape.add(c, y)?;
                }
                c
            }
        };
        let cat = tape.concat(&[skip, up])?;
        let y = self.merge.forward(tape, p, cat)?;
        let y = tape.tanh(y)?;
        let y = self.up.forward(tape, p, &plan, y)?;
        let y = tape.tanh(y)?;
        self.out.forward(tape, p, y)
    }
}
