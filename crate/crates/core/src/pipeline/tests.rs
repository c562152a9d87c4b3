use super::*;
use crate::diffusion::SamplerConfig;
use crate::numeric::Rng;
use crate::synth::toy_scene;
use crate::voxel::PointCloud;

const DIMS: [usize; 3] = [16, 16, 8];

fn small_config() -> RunConfig {
    let mut c = RunConfig::new(DIMS, 0.2, 5, [1, 2, 2]);
    c.sampler = SamplerConfig::for_steps(8);
    c
}

fn models() -> SceneModels {
    SceneModels::init(small_config(), &Rng::new(3)).unwrap()
}

fn scene(seed: u64) -> SemanticVoxelGrid {
    toy_scene(DIMS, 5, 3, seed).unwrap()
}

fn cloud_of(occ: &OccupancyGrid, origin: [f64; 3], voxel: f64) -> PointCloud {
    let pts = occ
        .occupied()
        .map(|[x, y, z]| {
            let c = |v: usize, a: usize| ((v as f64 + 0.5) * voxel + origin[a]) as f32;
            [c(x, 0), c(y, 1), c(z, 2), 1.0]
        })
        .collect();
    PointCloud::new(pts).with_origin(origin)
}

#[test]
fn geometry_of_small_config() {
    let m = models();
    assert_eq!(m.geom.patch, [2, 2, 1]);
    assert_eq!(m.geom.structure_dims, [4, 4, 4]);
    assert_eq!(m.latent.graph.num_nodes(), 8);
    for prefix in ["vae.", "patch.", "sd.", "ld."] {
        assert!(m.params.names().any(|n| n.starts_with(prefix)), "{prefix}");
    }
}

#[test]
fn structure_of_matches_block_oracle() {
    let m = models();
    let g = scene(1);
    let s = structure_of(&m.geom, &g).unwrap();
    for [cx, cy, cz] in (0..64).map(|i| coords_of([4, 4, 4], i)) {
        let mut any = false;
        for z in 2 * cz..2 * cz + 2 {
            for y in 4 * cy..4 * cy + 4 {
                for x in 4 * cx..4 * cx + 4 {
                    any |= g.get(x, y, z) != 0;
                }
            }
        }
        assert_eq!(s.get(cx, cy, cz), any);
    }
}

#[test]
fn outdoor_structure_dims() {
    let cfg = RunConfig::outdoor();
    let geom = Geometry::new(cfg.grid_dims, &cfg.model_config()).unwrap();
    let g = SemanticVoxelGrid::empty(cfg.grid_dims, 0.2, 20).unwrap();
    assert_eq!(structure_of(&geom, &g).unwrap().dims(), [32, 32, 16]);
}

#[test]
fn generate_is_deterministic() {
    let m = models();
    let a = generate(&m, 11).unwrap();
    let b = generate(&m, 11).unwrap();
    assert_eq!(a, b);
    let c = generate(&m, 12).unwrap();
    assert_ne!(a.latents, c.latents);
}

#[test]
fn trace_sees_every_state() {
    let m = models();
    let mut seen = Vec::new();
    let mut f = |s: Stage, t: usize, _: &Tensor<f64>| seen.push((s, t));
    let out = complete_traced(&m, &CompletionRequest::seeded(5), Some(&mut f)).unwrap();
    let n_struct = seen.iter().filter(|(s, _)| *s == Stage::Structure).count();
    assert_eq!(n_struct, 9);
    if !out.empty {
        assert_eq!(seen.len(), 18);
        assert_eq!(seen.last(), Some(&(Stage::Latent, 0)));
    }
}

#[test]
fn empty_structure_gives_empty_scene() {
    let mut cfg = small_config();
    cfg.sampler.threshold = 1e9;
    let m = SceneModels::init(cfg, &Rng::new(3)).unwrap();
    let out = generate(&m, 0).unwrap();
    assert!(out.empty);
    assert_eq!(out.grid.occupied_count(), 0);
    assert_eq!(out.structure.count(), 0);
}

#[test]
fn empty_scan_equals_generation() {
    let m = models();
    let req = CompletionRequest {
        scan: Some(PointCloud::new(vec![])),
        seed: 9,
        ..Default::default()
    };
    assert_eq!(complete(&m, &req).unwrap(), generate(&m, 9).unwrap());
}

#[test]
fn scan_outside_grid_is_rejected() {
    let m = models();
    let cloud = PointCloud::new(vec![[100.0, 0.0, 0.0, 1.0], [-1.0, 0.5, 0.5, 1.0]]);
    let req = CompletionRequest {
        scan: Some(cloud),
        ..Default::default()
    };
    let err = complete(&m, &req).unwrap_err();
    assert!(matches!(err, Error::Config(ref s) if s.contains("origin")), "{err}");
}

#[test]
fn scan_hits_are_occupied_in_output() {
    let m = models();
    let origin = [10.0, -4.0, 1.5];
    for seed in 0..3 {
        let hits = semantics_to_occupancy(&scene(seed));
        let req = CompletionRequest {
            scan: Some(cloud_of(&hits, origin, 0.2)),
            seed,
            ..Default::default()
        };
        let out = complete(&m, &req).unwrap();
        assert!(!out.empty);
        assert!(semantics_to_occupancy(&out.grid).contains(&hits));
        assert!(out.structure.contains(&downsample_occupancy(&hits, [4, 4, 2]).unwrap()));
    }
}

#[test]
fn partial_semantics_are_kept() {
    let m = models();
    let g = scene(4);
    let observed = OccupancyGrid::from_fn(DIMS, |x, _, _| x < 8).unwrap();
    let req = CompletionRequest {
        partial: Some(g.clone()),
        observed: Some(observed.clone()),
        seed: 2,
        ..Default::default()
    };
    let out = complete(&m, &req).unwrap();
    for [x, y, z] in observed.occupied() {
        assert_eq!(out.grid.get(x, y, z), g.get(x, y, z));
    }
    // Fully observed empty structure cells stay empty.
    let s = structure_of(&m.geom, &g).unwrap();
    for cx in 0..2 {
        for cy in 0..4 {
            for cz in 0..4 {
                assert_eq!(out.structure.get(cx, cy, cz), s.get(cx, cy, cz));
            }
        }
    }
}

#[test]
fn full_observation_reproduces_the_scene() {
    let m = models();
    let g = scene(6);
    let req = CompletionRequest {
        partial: Some(g.clone()),
        observed: Some(OccupancyGrid::full(DIMS).unwrap()),
        seed: 1,
        ..Default::default()
    };
    let out = complete(&m, &req).unwrap();
    assert_eq!(out.grid, g);
    assert_eq!(out.structure, structure_of(&m.geom, &g).unwrap());
}

/// Code node footprint in voxels, from its key.
fn footprint(m: &SceneModels, i: usize) -> ([usize; 3], [usize; 3]) {
    let key = m.latent.graph.key(i);
    let c = key.coords();
    let cells = 1usize << (m.geom.patch_depth - m.geom.code_depth);
    let lo = [0, 1, 2].map(|a| c[a] as usize * cells * m.geom.patch[a]);
    let hi = [0, 1, 2].map(|a| (lo[a] + cells * m.geom.patch[a]).min(DIMS[a]));
    (lo, hi)
}

#[test]
fn anchor_mask_matches_footprints() {
    let m = models();
    let g = scene(2);
    let cases = [
        OccupancyGrid::full(DIMS).unwrap(),
        OccupancyGrid::empty(DIMS).unwrap(),
        OccupancyGrid::from_fn(DIMS, |x, _, _| x < 8).unwrap(),
        OccupancyGrid::from_fn(DIMS, |x, y, z| x == 9 && y == 3 && z == 7).unwrap(),
    ];
    for region in &cases {
        let (mask, refs) = anchor_semantics(&m, &g, Some(region)).unwrap();
        assert_eq!(refs.shape(), &[8, m.latent.width]);
        for (i, &bit) in mask.iter().enumerate() {
            let (lo, hi) = footprint(&m, i);
            let mut any = false;
            for z in lo[2]..hi[2] {
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        any |= region.get(x, y, z);
                    }
                }
            }
            assert_eq!(bit, any, "node {i}");
        }
    }
    let (_, full) = anchor_semantics(&m, &g, Some(&cases[0])).unwrap();
    assert_eq!(full, code_mean(&m, &g).unwrap());
}

#[test]
fn code_graph_order_matches_encoder() {
    let m = models();
    let g = scene(3);
    let code = m.vae.encode(&m.params, &g, &Rng::new(0)).unwrap();
    assert_eq!(code.mu, code_mean(&m, &g).unwrap());
}

#[test]
fn extension_shift_snaps_to_cells() {
    let m = models();
    let geom = &m.geom;
    let s = |overlap, axis| extension_shift(geom, &ExtensionSpec { axis, overlap });
    assert_eq!(s(1.0, 0).unwrap(), 0);
    assert_eq!(s(0.5, 0).unwrap(), 8);
    assert_eq!(s(0.75, 1).unwrap(), 4);
    assert_eq!(s(0.5, 2).unwrap(), 4);
    assert_eq!(s(0.6, 0).unwrap(), 8);
    assert!(s(0.0, 0).is_err());
    assert!(s(1.5, 0).is_err());
    assert!(s(0.05, 0).is_err());
    assert!(s(0.5, 3).is_err());
}

#[test]
fn extend_with_full_overlap_is_identity() {
    let m = models();
    let g = scene(8);
    let out = extend(&m, &g, &ExtensionSpec::new(1.0), 4).unwrap();
    assert_eq!(out.grid, g);
}

#[test]
fn extend_keeps_the_shifted_slab() {
    let m = models();
    let g = scene(5);
    let spec = ExtensionSpec::new(0.5);
    let out = extend(&m, &g, &spec, 4).unwrap();
    for z in 0..8 {
        for y in 0..16 {
            for x in 0..8 {
                assert_eq!(out.grid.get(x, y, z), g.get(x + 8, y, z));
            }
        }
    }
    assert_eq!(extend(&m, &g, &spec, 4).unwrap(), out);

    // Two quarter steps see the source slab at the same place as one half step.
    let q = ExtensionSpec::new(0.75);
    let once = extend(&m, &g, &q, 1).unwrap();
    let twice = extend(&m, &once.grid, &q, 2).unwrap();
    for z in 0..8 {
        for y in 0..16 {
            for x in 0..8 {
                assert_eq!(twice.grid.get(x, y, z), g.get(x + 8, y, z));
            }
        }
    }
}

#[test]
fn models_round_trip_through_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = models();
    let ckpt = dir.path().join("model.olp");
    m.params.save(&ckpt).unwrap();
    let mut cfg = small_config();
    cfg.checkpoint = Some("model.olp".into());
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let loaded = SceneModels::load(RunConfig::load(&cfg_path).unwrap()).unwrap();
    assert_eq!(generate(&loaded, 7).unwrap(), generate(&m, 7).unwrap());
}

#[test]
fn missing_components_are_reported() {
    let m = models();
    let mut params = ParamStore::new();
    params.merge_prefixed("vae.", m.params.subset("vae."));
    params.merge_prefixed("patch.", m.params.subset("patch."));
    let vae_only = SceneModels::new(small_config(), params).unwrap();
    assert!(vae_only.require("vae.", "VAE").is_ok());
    assert!(matches!(generate(&vae_only, 0), Err(Error::Config(_))));
}

#[test]
fn config_mismatch_is_rejected() {
    let mut c = small_config();
    let mut model = c.model_config();
    model.num_classes = 7;
    c.model = Some(model);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = RunConfig::new([15, 16, 8], 0.2, 5, [1, 2, 2]);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let text = r#"{"grid_dims":[16,16,8],"voxel_size":0.2,"num_classes":5,"patch_dims":[1,2,2],"bogus":1}"#;
    assert!(serde_json::from_str::<RunConfig>(text).is_err());
}

#[test]
fn training_drivers_reduce_loss() {
    let mut m = models();
    let scenes = [scene(0), scene(1)];
    let curve = train_vae(&mut m, &scenes, 30, 3e-3, &Rng::new(0), None).unwrap();
    assert!(curve[29].total < curve[0].total);

    m.config.train.diffusion_steps = 40;
    let s = train_structure(&mut m, &scenes, &Rng::new(1)).unwrap();
    let l = train_latent(&mut m, &scenes, &Rng::new(2)).unwrap();
    let head = |c: &[f64]| c[..10].iter().sum::<f64>();
    let tail = |c: &[f64]| c[30..].iter().sum::<f64>();
    assert!(tail(&s) < head(&s));
    assert!(tail(&l) < head(&l));

    let ex = latent_examples(&m, &scenes).unwrap();
    assert_eq!(ex[0].x0.shape(), &[8, m.latent.width]);
    assert_eq!(ex[0].cond.shape()[0], 8);
}
