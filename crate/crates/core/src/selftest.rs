//! Quick oracle suites runnable from a release binary.

use rand::Rng as _;

use crate::diffusion::{
    eps_loss, sample, BlendMask, DiffusionExample, EpsModel, LatentDenoiser, SampleOptions, SamplerConfig,
    StructureDenoiser,
};
use crate::dualgraph::{brute_force_adjacency, dualize, Cube, EdgeType};
use crate::error::Result;
use crate::metrics::{fid, kid_with, mmd_rbf, poly_kernel, rbf_kernel, FeatureSet, KidEstimator};
use crate::nets::{Geometry, GraphVae, ModelConfig, Widths};
use crate::numeric::gradcheck::check_gradients;
use crate::numeric::{Rng, Tensor};
use crate::octree::{build_octree, morton_decode, morton_encode};
use crate::synth::toy_scene;
use crate::voxel::OccupancyGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

type Suite = fn(&Rng) -> Result<SuiteResult>;

const SUITES: [(&str, Suite); 5] = [
    ("dualize-vs-brute-force", dual_suite),
    ("octree-round-trip", octree_suite),
    ("gradient-checks", gradient_suite),
    ("metric-oracles", metric_suite),
    ("blend-fidelity", blend_suite),
];

pub fn suite_names() -> impl Iterator<Item = &'static str> {
    SUITES.iter().map(|(n, _)| *n)
}

/// Runs every suite; an internal error counts as a failure of its suite.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    let rng = Rng::new(seed).derive_str("selftest");
    SUITES
        .iter()
        .map(|(name, f)| {
            f(&rng.derive_str(name)).unwrap_or_else(|e| SuiteResult {
                name,
                cases: 0,
                failures: vec![e.to_string()],
            })
        })
        .collect()
}

fn random_grid(rng: &Rng, max_side: usize) -> Result<OccupancyGrid> {
    let mut g = rng.generator();
    let dims = [0; 3].map(|_| g.gen_range(1..=max_side));
    let p = g.gen_range(0.0..0.3);
    OccupancyGrid::from_fn(dims, |_, _, _| g.gen_bool(p))
}

fn dual_suite(rng: &Rng) -> Result<SuiteResult> {
    let mut r = SuiteResult {
        name: "dualize-vs-brute-force",
        cases: 50,
        failures: vec![],
    };
    for i in 0..r.cases {
        let occ = random_grid(&rng.derive(i as u64), 16)?;
        let g = dualize(&build_octree(&occ));
        let cubes: Vec<Cube> = (0..g.num_nodes()).map(|n| g.cube(n)).collect();
        let mut want = brute_force_adjacency(&cubes)?;
        want.sort_unstable();
        let got: Vec<([usize; 2], EdgeType)> = g
            .edges()
            .iter()
            .zip(g.edge_types())
            .map(|(&[a, b], &t)| ([a as usize, b as usize], t))
            .collect();
        if got != want {
            r.failures.push(format!("grid {i} {:?}: {} vs {} edges", occ.dims(), got.len(), want.len()));
        }
    }
    Ok(r)
}

fn octree_suite(rng: &Rng) -> Result<SuiteResult> {
    let mut r = SuiteResult {
        name: "octree-round-trip",
        cases: 51,
        failures: vec![],
    };
    for i in 0..50 {
        let occ = random_grid(&rng.derive(i), 32)?;
        if build_octree(&occ).to_dense(occ.dims())? != occ {
            r.failures.push(format!("grid {i} {:?}", occ.dims()));
        }
    }
    let depth = 4;
    let n = 1u32 << depth;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if morton_decode(morton_encode(x, y, z, depth)?) != [x, y, z] {
                    r.failures.push(format!("morton {:?}", [x, y, z]));
                }
            }
        }
    }
    Ok(r)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_patch: 3,
        widths: Widths {
            patch_hidden: 2,
            vae_hidden: 4,
            code: 2,
            denoiser: 4,
        },
        fourier_bands: 1,
        ..ModelConfig::new([1, 2, 2], 3)
    }
}

fn gradient_suite(rng: &Rng) -> Result<SuiteResult> {
    let cfg = tiny_model();
    let dims = [8, 8, 4];
    let vae = GraphVae::new(&cfg, dims)?;
    let geom = Geometry::new(dims, &cfg)?;
    let sd = StructureDenoiser::new([3, 2, 2], 4, 1)?;
    let ld = LatentDenoiser::for_geometry(&geom, 2, 4, 1)?;
    let sched = SamplerConfig::for_steps(20).schedule()?;
    let mut r = SuiteResult {
        name: "gradient-checks",
        cases: 0,
        failures: vec![],
    };
    for seed in 0..5u64 {
        let rng = rng.derive(seed);
        let mut p = vae.init_params::<f64>(&rng);
        p.insert("vae.enc.logvar.w", rng.derive(11).normal(&[4, 2]).map(|v| 0.3 * v));
        let target = vae.prepare(&toy_scene(dims, 3, 2, seed)?)?;
        let rep = check_gradients(
            &p,
            |t, p| Ok(vae.loss_tape(t, p, &target, &rng.derive(12))?.0),
            1e-5,
            3,
            &rng.derive(13),
        )?;
        r.cases += 1;
        if !rep.passes(1e-4) {
            r.failures.push(format!("vae seed {seed}: max rel {:e}", rep.max_rel_err));
        }

        for which in 0..2 {
            let t = rng.derive(4).generator().gen_range(1..=sched.steps());
            let (mut p, ex) = if which == 0 {
                let ex = DiffusionExample {
                    x0: rng.derive(1).normal(&[12, 1]),
                    cond: Tensor::zeros(&[0, 0]),
                };
                (EpsModel::<f64>::init_params(&sd, &rng), ex)
            } else {
                let ex = DiffusionExample {
                    x0: rng.derive(1).normal(&EpsModel::<f64>::sample_shape(&ld)),
                    cond: rng.derive(5).uniform(&[ld.graph.num_nodes(), ld.cond], 0.0, 1.0),
                };
                (EpsModel::<f64>::init_params(&ld, &rng), ex)
            };
            let out: Vec<String> = p.names().filter(|n| n.contains(".out.")).map(String::from).collect();
            for n in out {
                let shape = p.get(&n).expect("listed").shape().to_vec();
                p.insert(n.clone(), rng.derive_str(&n).normal(&shape).map(|v| 0.3 * v));
            }
            let eps: Tensor<f64> = rng.derive(2).normal(ex.x0.shape());
            let rep = if which == 0 {
                check_gradients(&p, |tp, p| eps_loss(tp, &sd, p, &ex, t, &eps, &sched), 1e-5, 4, &rng.derive(3))?
            } else {
                check_gradients(&p, |tp, p| eps_loss(tp, &ld, p, &ex, t, &eps, &sched), 1e-5, 4, &rng.derive(3))?
            };
            r.cases += 1;
            if !rep.passes(1e-4) {
                let name = ["structure", "latent"][which];
                r.failures.push(format!("{name} denoiser seed {seed}: max rel {:e}", rep.max_rel_err));
            }
        }
    }
    Ok(r)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn kid_oracle(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let (m, n) = (a.len(), b.len());
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                saa += poly_kernel(a.row(i), a.row(j));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sbb += poly_kernel(b.row(i), b.row(j));
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            sab += poly_kernel(a.row(i), b.row(j));
        }
    }
    saa / (m * (m - 1)) as f64 + sbb / (n * (n - 1)) as f64 - 2.0 * sab / (m * n) as f64
}

fn mmd_oracle(a: &FeatureSet, b: &FeatureSet, bw: f64) -> f64 {
    let mean = |x: &FeatureSet, y: &FeatureSet| {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                s += rbf_kernel(x.row(i), y.row(j), bw);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

fn metric_suite(rng: &Rng) -> Result<SuiteResult> {
    let mut r = SuiteResult {
        name: "metric-oracles",
        cases: 0,
        failures: vec![],
    };
    let one_d = |v: &[f64]| FeatureSet::from_rows(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>(), "test");
    let a = one_d(&[-1.0, 1.0])?;
    let b = one_d(&[0.0, 2.0])?;
    r.cases += 1;
    if (fid(&a, &b)? - 1.0).abs() > 1e-6 {
        r.failures.push("fid 1-D mean shift".into());
    }
    let x = FeatureSet::from_rows(&[vec![0.0, 0.0]], "test")?;
    let y = FeatureSet::from_rows(&[vec![1.0, 1.0]], "test")?;
    r.cases += 1;
    if (mmd_rbf(&x, &y, 1.0)? - (2.0 - 2.0 * (-1.0f64).exp())).abs() > 1e-12 {
        r.failures.push("mmd two-point closed form".into());
    }
    for i in 0..10u64 {
        let rr = rng.derive(i);
        let mut g = rr.generator();
        let (m, n, d) = (g.gen_range(2..20), g.gen_range(2..20), g.gen_range(1..6));
        let a = FeatureSet::new(rr.derive(1).normal(&[m, d]), "test")?;
        let b = FeatureSet::new(rr.derive(2).normal(&[n, d]).map(|v| 0.7 * v + 0.3), "test")?;
        r.cases += 2;
        if fid(&a, &a)?.abs() > 1e-9 {
            r.failures.push(format!("fid self {i}"));
        }
        let k = kid_with(&a, &b, KidEstimator::Unpaired)?;
        if rel(k, kid_oracle(&a, &b)) > 1e-10 {
            r.failures.push(format!("kid oracle {i}"));
        }
        r.cases += 1;
        if rel(mmd_rbf(&a, &b, 1.3)?, mmd_oracle(&a, &b, 1.3)) > 1e-10 {
            r.failures.push(format!("mmd oracle {i}"));
        }
    }
    Ok(r)
}

fn blend_suite(rng: &Rng) -> Result<SuiteResult> {
    let mut r = SuiteResult {
        name: "blend-fidelity",
        cases: 0,
        failures: vec![],
    };
    let sched = SamplerConfig::for_steps(20).schedule()?;
    let shape = [30, 2];
    let model = |x: &Tensor<f64>, _t: usize| -> Result<Tensor<f64>> { Ok(x.map(|v| 0.1 * v)) };
    for i in 0..10u64 {
        let rr = rng.derive(i);
        let mut g = rr.generator();
        let mask: Vec<bool> = (0..shape[0]).map(|_| g.gen_bool(0.5)).collect();
        let reference: Tensor<f64> = rr.derive(1).normal(&shape);
        let bm = BlendMask::new(mask.clone(), reference.clone())?;
        let x = sample(&model, &shape, &sched, Some(&bm), &rr.derive(2), SampleOptions::default())?;
        r.cases += 1;
        for (row, &m) in mask.iter().enumerate() {
            if m && x.row(row) != reference.row(row) {
                r.failures.push(format!("seed {i} row {row}"));
            }
        }
        let zero = BlendMask::new(vec![false; shape[0]], reference)?;
        let a = sample(&model, &shape, &sched, Some(&zero), &rr.derive(2), SampleOptions::default())?;
        let b = sample(&model, &shape, &sched, None, &rr.derive(2), SampleOptions::default())?;
        r.cases += 1;
        if a != b {
            r.failures.push(format!("seed {i}: zero mask differs from unconditional"));
        }
    }
    Ok(r)
}
