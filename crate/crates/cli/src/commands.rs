use std::path::{Path, PathBuf};
use std::time::Instant;

use octlat::dualgraph::dualize;
use octlat::metrics::{extract_features, IouCounts, MetricReport};
use octlat::nets::{Guidance, SplitPolicy};
use octlat::numeric::{ParamStore, Rng};
use octlat::octree::{build_octree, decode_octree, encode_octree, Octree, OCTREE_MAGIC};
use octlat::pipeline::{
    complete_traced, extend_traced, train_latent, train_structure, train_vae, CompletionRequest, ExtensionSpec,
    RunConfig, RunManifest, SceneModels, SceneOutput, Stage,
};
use octlat::voxel::{
    decode_occupancy, decode_svox, encode_occupancy, encode_svox, load_occupancy, load_scan, load_svox, voxelize,
    OccupancyGrid, SemanticVoxelGrid, OCC_MAGIC, SVOX_MAGIC,
};
use octlat::{write_atomic, Tensor};

use crate::args::{self, Command};
use crate::{Failure, BAD_ARGS, MALFORMED_INPUT, RUNTIME};

type Res<T = ()> = Result<T, Failure>;

pub fn run(cmd: Command) -> Res {
    match cmd {
        Command::Voxelize(a) => voxelize_cmd(a),
        Command::BuildOctree(a) => build_octree_cmd(a),
        Command::Dualize(a) => dualize_cmd(a),
        Command::TrainVae(a) => train_cmd("train-vae", a, Component::Vae),
        Command::TrainDiff(a) => {
            let c = match a.stage {
                args::Stage::Structure => Component::Structure,
                args::Stage::Latent => Component::Latent,
            };
            train_cmd("train-diff", a.train, c)
        }
        Command::Generate(a) => generate_cmd(a),
        Command::Complete(a) => complete_cmd(a),
        Command::Extend(a) => extend_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Selftest(a) => selftest_cmd(a),
    }
}

/// Manifest bookkeeping around one output file.
struct Run {
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    fn new(command: &str, seed: u64, config: Option<&RunConfig>) -> Res<Self> {
        let configs = match config {
            Some(c) => serde_json::to_value(c).map_err(|e| Failure::new(RUNTIME, e.to_string()))?,
            None => serde_json::Value::Null,
        };
        Ok(Run {
            manifest: RunManifest::new(command, seed, configs),
            start: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> Res {
        Ok(self.manifest.add_input(path)?)
    }

    fn finish(mut self, out: &Path, bytes: &[u8]) -> Res {
        write_atomic(out, bytes).map_err(|e| e.at(out))?;
        self.manifest.set_output(out, bytes);
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        self.manifest.save(&RunManifest::path_for(out))?;
        Ok(())
    }
}

fn load_config(path: &Path) -> Res<RunConfig> {
    Ok(RunConfig::load(path)?)
}

/// Applies sampler flag overrides; flags win over the config.
fn apply_sampler_flags(cfg: &mut RunConfig, f: &args::SamplerFlags) -> Res<u64> {
    if let Some(n) = f.steps {
        if n == 0 {
            return Err(Failure::new(BAD_ARGS, "--steps must be at least 1"));
        }
        cfg.sampler.steps_override = Some(n);
    }
    if let Some(t) = f.threshold {
        if !t.is_finite() {
            return Err(Failure::new(BAD_ARGS, format!("--threshold must be finite, got {t}")));
        }
        cfg.sampler.threshold = t;
    }
    cfg.validate()?;
    Ok(f.seed.unwrap_or(cfg.seed))
}

fn checkpoint_path(cfg: &RunConfig, config_path: &Path) -> Res<PathBuf> {
    cfg.checkpoint.clone().ok_or_else(|| {
        Failure::new(
            crate::BAD_CONFIG,
            format!("{}: no `checkpoint` entry", config_path.display()),
        )
    })
}

fn voxelize_cmd(a: args::VoxelizeArgs) -> Res {
    let cfg = load_config(&a.config.config)?;
    let mut run = Run::new("voxelize", 0, Some(&cfg))?;
    run.input(&a.config.config)?;
    run.input(&a.scan)?;
    let cloud = load_scan(&a.scan)?.with_origin(a.origin);
    let (occ, stats) = voxelize(&cloud, cfg.grid_dims, cfg.voxel_size)?;
    eprintln!("inserted {} points, {} out of bounds", stats.inserted, stats.out_of_bounds);
    run.finish(&a.out.out, &encode_occupancy(&occ))
}

enum Grid {
    Semantic(SemanticVoxelGrid),
    Occupancy(OccupancyGrid),
    Octree(Octree),
}

fn read_any(path: &Path) -> Res<Grid> {
    let bytes = std::fs::read(path).map_err(|e| octlat::Error::from(e).at(path))?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    let g = if magic == SVOX_MAGIC {
        Grid::Semantic(decode_svox(&bytes).map_err(|e| e.at(path))?)
    } else if magic == OCC_MAGIC {
        Grid::Occupancy(decode_occupancy(&bytes).map_err(|e| e.at(path))?)
    } else if magic == OCTREE_MAGIC {
        Grid::Octree(decode_octree(&bytes).map_err(|e| e.at(path))?)
    } else {
        return Err(Failure::new(
            MALFORMED_INPUT,
            format!("{}: unknown file type (expected SVX1, OCC1 or OCT1 magic)", path.display()),
        ));
    };
    Ok(g)
}

fn octree_of(path: &Path) -> Res<Octree> {
    Ok(match read_any(path)? {
        Grid::Semantic(g) => build_octree(&octlat::voxel::semantics_to_occupancy(&g)),
        Grid::Occupancy(o) => build_octree(&o),
        Grid::Octree(t) => t,
    })
}

fn build_octree_cmd(a: args::ConvertArgs) -> Res {
    let mut run = Run::new("build-octree", 0, None)?;
    run.input(&a.input)?;
    if let Grid::Octree(_) = read_any(&a.input)? {
        return Err(Failure::new(
            MALFORMED_INPUT,
            format!("{}: already an octree; expected SVOX or OCC1", a.input.display()),
        ));
    }
    let t = octree_of(&a.input)?;
    run.finish(&a.out.out, &encode_octree(&t))
}

fn dualize_cmd(a: args::ConvertArgs) -> Res {
    let mut run = Run::new("dualize", 0, None)?;
    run.input(&a.input)?;
    let g = dualize(&octree_of(&a.input)?);
    run.finish(&a.out.out, g.dump().as_bytes())
}

fn load_scenes(dir: &Path) -> Res<(Vec<PathBuf>, Vec<SemanticVoxelGrid>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| octlat::Error::from(e).at(dir))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| octlat::Error::from(e).at(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "svox") {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new(
            MALFORMED_INPUT,
            format!("{}: no .svox files", dir.display()),
        ));
    }
    let grids = paths.iter().map(load_svox).collect::<octlat::Result<Vec<_>>>()?;
    Ok((paths, grids))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Component {
    Vae,
    Structure,
    Latent,
}

impl Component {
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            Component::Vae => &["patch.", "vae."],
            Component::Structure => &["sd."],
            Component::Latent => &["ld."],
        }
    }
}

fn train_cmd(command: &str, a: args::TrainArgs, what: Component) -> Res {
    let cfg_path = &a.config.config;
    let mut cfg = load_config(cfg_path)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    if let Some(n) = a.steps {
        match what {
            Component::Vae => cfg.train.vae_steps = n,
            _ => cfg.train.diffusion_steps = n,
        }
    }
    let mut run = Run::new(command, seed, Some(&cfg))?;
    run.input(cfg_path)?;

    let rng = Rng::new(seed).derive_str(command);
    let fresh = SceneModels::init(cfg.clone(), &rng.derive_str("init"))?;
    let base = match &cfg.checkpoint {
        Some(p) if p.exists() => {
            run.input(p)?;
            ParamStore::load(p)?
        }
        Some(p) if what == Component::Latent => {
            return Err(Failure::new(
                MALFORMED_INPUT,
                format!("checkpoint {} does not exist; train the VAE first", p.display()),
            ))
        }
        _ => fresh.params.clone(),
    };
    let mut params = base;
    for prefix in what.prefixes() {
        params.merge_prefixed(prefix, fresh.params.subset(prefix));
    }
    let mut models = SceneModels::new(cfg.clone(), params)?;

    let (paths, scenes) = load_scenes(&a.scenes)?;
    for p in &paths {
        run.input(p)?;
    }
    let train_rng = rng.derive_str("train");
    match what {
        Component::Vae => {
            let steps = cfg.train.vae_steps;
            let every = (steps / 20).max(1);
            let mut report = |s: usize, l: &octlat::nets::VaeLossBreakdown| {
                if s.is_multiple_of(every) || s + 1 == steps {
                    eprintln!(
                        "step {s}: total {:.5} sem {:.5} octree {:.5} kl {:.5}",
                        l.total, l.l_sem, l.l_octree, l.l_kl
                    );
                }
            };
            train_vae(&mut models, &scenes, steps, cfg.train.vae_lr, &train_rng, Some(&mut report))?;
        }
        Component::Structure | Component::Latent => {
            let curve = if what == Component::Structure {
                train_structure(&mut models, &scenes, &train_rng)?
            } else {
                train_latent(&mut models, &scenes, &train_rng)?
            };
            let every = (curve.len() / 20).max(1);
            for (s, l) in curve.iter().enumerate() {
                if s % every == 0 || s + 1 == curve.len() {
                    eprintln!("step {s}: loss {l:.5}");
                }
            }
        }
    }
    run.finish(&a.out.out, &models.params.to_bytes())
}

fn load_models(cfg: RunConfig, cfg_path: &Path, run: &mut Run) -> Res<SceneModels> {
    let ckpt = checkpoint_path(&cfg, cfg_path)?;
    run.input(cfg_path)?;
    run.input(&ckpt)?;
    Ok(SceneModels::load(cfg)?)
}

/// Collects sampler states for `--dump-trajectory`.
#[derive(Default)]
struct Trajectory {
    structure: Vec<(usize, Tensor)>,
    latent: Vec<(usize, Tensor)>,
}

impl Trajectory {
    fn record(&mut self, stage: Stage, t: usize, x: &Tensor) {
        match stage {
            Stage::Structure => self.structure.push((t, x.clone())),
            Stage::Latent => self.latent.push((t, x.clone())),
        }
    }

    fn write(&self, dir: &Path, models: &SceneModels, out: &SceneOutput) -> Res {
        std::fs::create_dir_all(dir).map_err(|e| octlat::Error::from(e).at(dir))?;
        let thr = models.config.sampler.threshold;
        for (t, x) in &self.structure {
            let occ = models.structure.decode_occupancy(x, thr)?;
            let p = dir.join(format!("structure_{t:04}.occ"));
            write_atomic(&p, &encode_occupancy(&occ)).map_err(|e| e.at(&p))?;
        }
        let guidance = Guidance {
            structure: out.structure.clone(),
            forced_patches: None,
        };
        for (t, z) in &self.latent {
            let (grid, _, _) = models
                .vae
                .decode(&models.params, z, SplitPolicy::Guided(&guidance), models.voxel_size())?;
            let p = dir.join(format!("latent_{t:04}.svox"));
            write_atomic(&p, &encode_svox(&grid)).map_err(|e| e.at(&p))?;
        }
        Ok(())
    }
}

fn finish_scene(run: Run, models: &SceneModels, out: SceneOutput, traj: Trajectory, f: &args::SamplerFlags, path: &Path) -> Res {
    if out.empty {
        eprintln!("structure stage produced no occupied cell; writing an empty scene");
    }
    if let Some(dir) = &f.dump_trajectory {
        traj.write(dir, models, &out)?;
    }
    run.finish(path, &encode_svox(&out.grid))
}

fn generate_cmd(a: args::SampleArgs) -> Res {
    let mut cfg = load_config(&a.config.config)?;
    let seed = apply_sampler_flags(&mut cfg, &a.sampler)?;
    let mut run = Run::new("generate", seed, Some(&cfg))?;
    let models = load_models(cfg, &a.config.config, &mut run)?;
    let mut traj = Trajectory::default();
    let mut rec = |s: Stage, t: usize, x: &Tensor| traj.record(s, t, x);
    let trace: Option<octlat::pipeline::TraceFn<'_>> = a.sampler.dump_trajectory.as_ref().map(|_| &mut rec as _);
    let out = complete_traced(&models, &CompletionRequest::seeded(seed), trace)?;
    finish_scene(run, &models, out, traj, &a.sampler, &a.out.out)
}

fn complete_cmd(a: args::CompleteArgs) -> Res {
    if a.scan.is_some() && a.origin.is_none() {
        return Err(Failure::new(BAD_ARGS, "--scan requires --origin X,Y,Z (grid corner in world meters)"));
    }
    if a.origin.is_some() && a.scan.is_none() {
        return Err(Failure::new(BAD_ARGS, "--origin is only meaningful with --scan"));
    }
    if a.mask.is_some() && a.partial.is_none() {
        return Err(Failure::new(BAD_ARGS, "--mask requires a PARTIAL grid"));
    }
    let mut cfg = load_config(&a.config.config)?;
    let seed = apply_sampler_flags(&mut cfg, &a.sampler)?;
    let mut run = Run::new("complete", seed, Some(&cfg))?;
    let models = load_models(cfg, &a.config.config, &mut run)?;
    let mut req = CompletionRequest::seeded(seed);
    if let (Some(scan), Some(origin)) = (&a.scan, a.origin) {
        run.input(scan)?;
        req.scan = Some(load_scan(scan)?.with_origin(origin));
    }
    if let Some(p) = &a.partial {
        run.input(p)?;
        req.partial = Some(load_svox(p)?);
    }
    if let Some(m) = &a.mask {
        run.input(m)?;
        req.observed = Some(load_occupancy(m)?);
    }
    let mut traj = Trajectory::default();
    let mut rec = |s: Stage, t: usize, x: &Tensor| traj.record(s, t, x);
    let trace: Option<octlat::pipeline::TraceFn<'_>> = a.sampler.dump_trajectory.as_ref().map(|_| &mut rec as _);
    let out = complete_traced(&models, &req, trace)?;
    finish_scene(run, &models, out, traj, &a.sampler, &a.out.out)
}

fn extend_cmd(a: args::ExtendArgs) -> Res {
    if !(a.overlap > 0.0 && a.overlap <= 1.0) {
        return Err(Failure::new(BAD_ARGS, format!("--overlap must be in (0, 1], got {}", a.overlap)));
    }
    let mut cfg = load_config(&a.config.config)?;
    let seed = apply_sampler_flags(&mut cfg, &a.sampler)?;
    let mut run = Run::new("extend", seed, Some(&cfg))?;
    let models = load_models(cfg, &a.config.config, &mut run)?;
    run.input(&a.source)?;
    let source = load_svox(&a.source)?;
    let spec = ExtensionSpec::new(a.overlap);
    let mut traj = Trajectory::default();
    let mut rec = |s: Stage, t: usize, x: &Tensor| traj.record(s, t, x);
    let trace: Option<octlat::pipeline::TraceFn<'_>> = a.sampler.dump_trajectory.as_ref().map(|_| &mut rec as _);
    let out = extend_traced(&models, &source, &spec, seed, trace).map_err(|e| match e.root() {
        octlat::Error::InvalidParameter(m) => Failure::new(BAD_ARGS, format!("--overlap: {m}")),
        _ => e.into(),
    })?;
    finish_scene(run, &models, out, traj, &a.sampler, &a.out.out)
}

fn metrics_cmd(a: args::MetricsArgs) -> Res {
    let cfg = load_config(&a.config.config)?;
    let mut run = Run::new("metrics", cfg.seed, Some(&cfg))?;
    let models = load_models(cfg, &a.config.config, &mut run)?;
    models.require("vae.", "VAE")?;
    let (pa, ga) = load_scenes(&a.a)?;
    let (pb, gb) = load_scenes(&a.b)?;
    for p in pa.iter().chain(&pb) {
        run.input(p)?;
    }
    let fa = extract_features(&models.vae, &models.params, &ga)?;
    let fb = extract_features(&models.vae, &models.params, &gb)?;

    // IoU only when both directories hold the same file names.
    let names = |ps: &[PathBuf]| ps.iter().map(|p| p.file_name().map(|n| n.to_owned())).collect::<Vec<_>>();
    let seg = if names(&pa) == names(&pb) {
        let mut c = IouCounts::new(models.config.num_classes);
        for (p, g) in ga.iter().zip(&gb) {
            c.add(p, g)?;
        }
        Some(c)
    } else {
        None
    };
    let report = MetricReport::compute(&fa, &fb, None, seg.as_ref())?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Failure::new(RUNTIME, e.to_string()))?;
    text.push('\n');
    run.finish(&a.out.out, text.as_bytes())
}

fn selftest_cmd(a: args::SelftestArgs) -> Res {
    let results = octlat::selftest::run_all(a.seed);
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({} cases)", r.name, r.cases);
        for f in &r.failures {
            println!("    {f}");
        }
        failed += usize::from(!r.passed());
    }
    println!("{} of {} suites passed", results.len() - failed, results.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::new(RUNTIME, format!("{failed} selftest suite(s) failed")))
    }
}
