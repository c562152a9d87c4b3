use std::sync::Arc;

use crate::dualgraph::{DualOctreeGraph, NUM_DIRECTIONS};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Real, Rng, Tape, Tensor, Var, ZERO_ROW};

/// Glorot-uniform weight `[fan_in, fan_out]` drawn from a stream keyed by name.
fn glorot<T: Real>(rng: &Rng, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Tensor<T> {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.derive_str(name).uniform(&[fan_in, fan_out], -a, a)
}

/// Dense layer `y = x W + b` on `[n, inp]` rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        Linear {
            name: name.into(),
            inp,
            out,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &Rng) {
        let w = format!("{}.w", self.name);
        store.insert(&w, glorot(rng, &w, self.inp, self.out, 1.0));
        store.insert(format!("{}.b", self.name), Tensor::zeros(&[self.out]));
    }

    /// Zero weights, so the layer starts as the constant bias.
    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(format!("{}.w", self.name), Tensor::zeros(&[self.inp, self.out]));
        store.insert(format!("{}.b", self.name), Tensor::zeros(&[self.out]));
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(p, &format!("{}.w", self.name))?;
        let b = tape.param(p, &format!("{}.b", self.name))?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Two dense layers with a tanh in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(name: &str, inp: usize, hidden: usize, out: usize) -> Self {
        Mlp {
            l1: Linear::new(format!("{name}.0"), inp, hidden),
            l2: Linear::new(format!("{name}.1"), hidden, out),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &Rng) {
        self.l1.init(store, rng);
        self.l2.init(store, rng);
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, p, x)?;
        let h = tape.tanh(h)?;
        self.l2.forward(tape, p, h)
    }
}

/// Precomputed neighbor gather/scatter indices of one graph.
#[derive(Clone, Debug)]
pub struct ConvPlan<T> {
    nodes: usize,
    src: Arc<[usize]>,
    slot_row: Arc<[usize]>,
    weight: Arc<[T]>,
}

impl<T: Real> ConvPlan<T> {
    pub fn new(g: &DualOctreeGraph) -> Self {
        Self::from_directed(g.num_nodes(), &g.directed_edges())
    }

    /// Plan from `(src, dst, slot)` triples, `slot` being the direction from
    /// `src` to `dst`.
    pub fn from_directed(n: usize, directed: &[(usize, usize, usize)]) -> Self {
        let mut count = vec![0usize; n * NUM_DIRECTIONS];
        for &(_, d, s) in directed {
            count[d * NUM_DIRECTIONS + (s ^ 1)] += 1;
        }
        let mut src = Vec::with_capacity(directed.len());
        let mut slot_row = Vec::with_capacity(directed.len());
        let mut weight = Vec::with_capacity(directed.len());
        for &(s, d, slot) in directed {
            // Messages arrive at `d` from `s`; the slot seen from `d` is the
            // reverse of the slot from `s`.
            let r = d * NUM_DIRECTIONS + (slot ^ 1);
            src.push(s);
            slot_row.push(r);
            weight.push(T::one() / T::lit(count[r] as f64));
        }
        ConvPlan {
            nodes: n,
            src: src.into(),
            slot_row: slot_row.into(),
            weight: weight.into(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }
}

/// Graph convolution with one weight block per neighbor direction plus a
/// self block. Neighbors sharing a direction are averaged.
#[derive(Clone, Debug)]
pub struct GraphConv {
    pub lin: Linear,
}

impl GraphConv {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        GraphConv {
            lin: Linear::new(name, inp * (NUM_DIRECTIONS + 1), out),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &Rng) {
        self.lin.init(store, rng);
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        plan: &ConvPlan<T>,
        h: Var,
    ) -> Result<Var> {
        let shape = tape.shape(h).to_vec();
        let c = self.lin.inp / (NUM_DIRECTIONS + 1);
        if shape.len() != 2 || shape[0] != plan.nodes || shape[1] != c {
            return Err(Error::Shape {
                op: "graph_conv",
                lhs: shape,
                rhs: vec![plan.nodes, c],
            });
        }
        let msgs = tape.gather(h, plan.src.clone())?;
        let agg = tape.scatter_add(
            msgs,
            plan.slot_row.clone(),
            Some(plan.weight.clone()),
            plan.nodes * NUM_DIRECTIONS,
        )?;
        let agg = tape.reshape(agg, &[plan.nodes, NUM_DIRECTIONS * c])?;
        let x = tape.concat(&[h, agg])?;
        self.lin.forward(tape, p, x)
    }
}

/// Same-padded 3D convolution over a batch of equal-size volumes.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub lin: Linear,
    pub kernel: usize,
}

/// im2col gather index for a batch of volumes with `dims = [nx, ny, nz]`.
#[derive(Clone, Debug)]
pub struct VolumePlan {
    pub batch: usize,
    pub dims: [usize; 3],
    pub kernel: usize,
    index: Arc<[usize]>,
}

impl VolumePlan {
    pub fn new(batch: usize, dims: [usize; 3], kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel {kernel} must be odd")));
        }
        let r = (kernel / 2) as i64;
        let v = dims.iter().product::<usize>();
        let taps = kernel * kernel * kernel;
        let mut index = Vec::with_capacity(batch * v * taps);
        for b in 0..batch {
            for z in 0..dims[2] as i64 {
                for y in 0..dims[1] as i64 {
                    for x in 0..dims[0] as i64 {
                        for dz in -r..=r {
                            for dy in -r..=r {
                                for dx in -r..=r {
                                    let (u, w, s) = (x + dx, y + dy, z + dz);
                                    let inside = u >= 0
                                        && w >= 0
                                        && s >= 0
                                        && u < dims[0] as i64
                                        && w < dims[1] as i64
                                        && s < dims[2] as i64;
                                    index.push(if inside {
                                        b * v + u as usize + dims[0] * (w as usize + dims[1] * s as usize)
                                    } else {
                                        ZERO_ROW
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(VolumePlan {
            batch,
            dims,
            kernel,
            index: index.into(),
        })
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn rows(&self) -> usize {
        self.batch * self.voxels()
    }
}

impl Conv3d {
    pub fn new(name: impl Into<String>, inp: usize, out: usize, kernel: usize) -> Self {
        Conv3d {
            lin: Linear::new(name, inp * kernel * kernel * kernel, out),
            kernel,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &Rng) {
        self.lin.init(store, rng);
    }

    /// `x` is `[batch · voxels, inp]` with voxels x-fastest within a volume.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamStore<T>,
        plan: &VolumePlan,
        x: Var,
    ) -> Result<Var> {
        if plan.kernel != self.kernel {
            return Err(Error::InvalidParameter("kernel size differs from plan".into()));
        }
        let taps = self.kernel.pow(3);
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != plan.rows() || shape[1] * taps != self.lin.inp {
            return Err(Error::Shape {
                op: "conv3d",
                lhs: shape,
                rhs: vec![plan.rows(), self.lin.inp / taps],
            });
        }
        let cols = tape.gather(x, plan.index.clone())?;
        let cols = tape.reshape(cols, &[plan.rows(), self.lin.inp])?;
        self.lin.forward(tape, p, cols)
    }
}

/// `[sin(2^f π c), cos(2^f π c)]` for each coordinate and band.
pub fn fourier_features(c: [f64; 3], bands: usize, out: &mut Vec<f64>) {
    for f in 0..bands {
        let w = std::f64::consts::PI * (1u64 << f) as f64;
        for &v in &c {
            out.push((w * v).sin());
            out.push((w * v).cos());
        }
    }
}

/// Width of [`node_features`] rows.
pub fn node_feature_width(bands: usize) -> usize {
    4 + 6 * bands
}

/// Per-node positional input: normalized depth, unit-cube center and its
/// Fourier encoding. `ref_depth` normalizes the depth channel.
pub fn node_features<T: Real>(g: &DualOctreeGraph, bands: usize, ref_depth: u32) -> Tensor<T> {
    let w = node_feature_width(bands);
    let mut data = Vec::with_capacity(g.num_nodes() * w);
    let mut row = Vec::with_capacity(w);
    for i in 0..g.num_nodes() {
        row.clear();
        row.push(g.depth(i) as f64 / ref_depth.max(1) as f64);
        let c = g.center_unit(i);
        row.extend_from_slice(&c);
        fourier_features(c, bands, &mut row);
        data.extend(row.iter().map(|&v| T::lit(v)));
    }
    Tensor::new(vec![g.num_nodes(), w], data).expect("row width")
}

/// Sinusoidal embedding of the diffusion step, `[1, dim]`.
pub fn time_embedding<T: Real>(t: usize, steps: usize, dim: usize) -> Tensor<T> {
    let s = t as f64 / steps.max(1) as f64;
    let half = dim / 2;
    let mut v = Vec::with_capacity(dim);
    for i in 0..half {
        let w = std::f64::consts::PI * 0.5 * (1u64 << i.min(20)) as f64;
        v.push(T::lit((w * s).sin()));
        v.push(T::lit((w * s).cos()));
    }
    v.resize(dim, T::lit(s));
    Tensor::new(vec![1, dim], v).expect("dim")
}
