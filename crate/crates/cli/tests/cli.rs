use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use octlat::synth::toy_scene;
use octlat::voxel::{save_scan, save_svox, semantics_to_occupancy, PointCloud};

const DIMS: [usize; 3] = [16, 16, 8];

fn octlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octlat"))
        .args(args)
        .env_remove("OCTLAT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = octlat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> (i32, String) {
    let out = octlat(args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config_json(checkpoint: &str) -> String {
    format!(
        r#"{{
  "grid_dims": [16, 16, 8],
  "voxel_size": 0.2,
  "num_classes": 5,
  "patch_dims": [1, 2, 2],
  "sampler": {{"T": 8, "beta_min": 0.0125, "beta_max": 0.999}},
  "train": {{"vae_steps": 4, "diffusion_steps": 4, "draws": 1}},
  "seed": 3,
  "checkpoint": "{checkpoint}"
}}"#
    )
}

/// A trained (for a few steps) workspace shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    scenes: PathBuf,
    scan: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let scenes = root.join("scenes");
        std::fs::create_dir(&scenes).unwrap();
        for i in 0..3 {
            save_svox(&toy_scene(DIMS, 5, 3, i).unwrap(), scenes.join(format!("s{i}.svox"))).unwrap();
        }
        let config = root.join("run.json");
        std::fs::write(&config, config_json("model.olp")).unwrap();
        let ckpt = root.join("model.olp");

        let hits = semantics_to_occupancy(&toy_scene(DIMS, 5, 3, 9).unwrap());
        let pts = hits
            .occupied()
            .filter(|&[x, _, _]| x < 8)
            .map(|[x, y, z]| [x as f32 * 0.2 + 100.1, y as f32 * 0.2 - 9.9, z as f32 * 0.2 + 0.1, 0.5])
            .collect();
        let scan = root.join("scan.bin");
        save_scan(&PointCloud::new(pts), &scan).unwrap();

        ok(&["train-vae", "--config", s(&config), s(&scenes), "--out", s(&ckpt)]);
        ok(&["train-diff", "structure", "--config", s(&config), s(&scenes), "--out", s(&ckpt)]);
        ok(&["train-diff", "latent", "--config", s(&config), s(&scenes), "--out", s(&ckpt), "--steps", "3"]);
        Fixture {
            _dir: dir,
            root,
            config,
            scenes,
            scan,
        }
    })
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn twice(name: &str, args: &[&str]) -> Vec<u8> {
    let f = fixture();
    let a = f.root.join(format!("{name}_a"));
    let b = f.root.join(format!("{name}_b"));
    let with = |out: &Path| {
        let mut v = args.to_vec();
        v.extend(["--out", s(out)]);
        ok(&v);
    };
    with(&a);
    with(&b);
    let bytes = read(&a);
    assert_eq!(bytes, read(&b), "{name} is not reproducible");
    bytes
}

#[test]
fn generate_is_byte_identical() {
    let f = fixture();
    let bytes = twice("gen", &["generate", "--config", s(&f.config), "--seed", "7"]);
    let grid = octlat::voxel::decode_svox(&bytes).unwrap();
    assert_eq!(grid.dims(), DIMS);

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&f.root.join("gen_a.manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["output_hash"], octlat::pipeline::sha256_hex(&bytes));
    assert_eq!(manifest["configs"]["grid_dims"], serde_json::json!([16, 16, 8]));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn seed_flag_overrides_config() {
    let f = fixture();
    let a = twice("seed3", &["generate", "--config", s(&f.config), "--seed", "3"]);
    let b = twice("seeddef", &["generate", "--config", s(&f.config)]);
    assert_eq!(a, b);
}

#[test]
fn complete_is_byte_identical_and_keeps_hits() {
    let f = fixture();
    let args = [
        "complete",
        "--config",
        s(&f.config),
        "--scan",
        s(&f.scan),
        "--origin",
        "100,-10,0",
        "--seed",
        "4",
    ];
    let bytes = twice("complete", &args);
    let grid = octlat::voxel::decode_svox(&bytes).unwrap();
    let hits = semantics_to_occupancy(&toy_scene(DIMS, 5, 3, 9).unwrap());
    for [x, y, z] in hits.occupied().filter(|&[x, _, _]| x < 8) {
        assert_ne!(grid.get(x, y, z), 0, "hit {:?} lost", [x, y, z]);
    }
}

#[test]
fn complete_with_partial_and_mask() {
    let f = fixture();
    let partial = f.scenes.join("s1.svox");
    let mask = f.root.join("mask.occ");
    let g = octlat::voxel::load_svox(&partial).unwrap();
    let region = octlat::voxel::OccupancyGrid::from_fn(DIMS, |_, y, _| y < 8).unwrap();
    octlat::voxel::save_occupancy(&region, &mask).unwrap();
    let bytes = twice(
        "partial",
        &["complete", "--config", s(&f.config), s(&partial), "--mask", s(&mask), "--seed", "1"],
    );
    let out = octlat::voxel::decode_svox(&bytes).unwrap();
    for [x, y, z] in region.occupied() {
        assert_eq!(out.get(x, y, z), g.get(x, y, z));
    }
}

#[test]
fn complete_requires_origin_with_scan() {
    let f = fixture();
    let out = f.root.join("never.svox");
    let (c, err) = code(&["complete", "--scan", s(&f.scan), "--config", s(&f.config), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("--origin"), "{err}");
    assert!(!out.exists());
}

#[test]
fn scan_outside_the_grid_is_a_config_error() {
    let f = fixture();
    let out = f.root.join("never2.svox");
    let (c, err) = code(&[
        "complete", "--scan", s(&f.scan), "--origin", "0,0,0", "--config", s(&f.config), "--out", s(&out),
    ]);
    assert_eq!(c, 4);
    assert!(err.contains("origin"), "{err}");
}

#[test]
fn extend_is_byte_identical_and_keeps_slab() {
    let f = fixture();
    let src = f.scenes.join("s2.svox");
    let bytes = twice("extend", &["extend", "--config", s(&f.config), s(&src), "--overlap", "0.5", "--seed", "2"]);
    let out = octlat::voxel::decode_svox(&bytes).unwrap();
    let g = octlat::voxel::load_svox(&src).unwrap();
    for z in 0..8 {
        for y in 0..16 {
            for x in 0..8 {
                assert_eq!(out.get(x, y, z), g.get(x + 8, y, z));
            }
        }
    }
}

#[test]
fn extend_rejects_bad_overlap() {
    let f = fixture();
    let src = f.scenes.join("s2.svox");
    let out = f.root.join("never3.svox");
    for bad in ["0", "1.5", "0.01"] {
        let (c, err) = code(&["extend", "--config", s(&f.config), s(&src), "--overlap", bad, "--out", s(&out)]);
        assert_eq!(c, 2, "{bad}: {err}");
        assert!(err.contains("--overlap"), "{err}");
    }
}

#[test]
fn metrics_are_byte_identical() {
    let f = fixture();
    let bytes = twice("metrics", &["metrics", "--config", s(&f.config), s(&f.scenes), s(&f.scenes)]);
    let r: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(r["kid"], 0.0);
    assert!(r["fid"].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(r["mmd"], 0.0);
    assert_eq!(r["miou"], 1.0);
    assert_eq!(r["n_a"], 3);
}

#[test]
fn trajectory_dump() {
    let f = fixture();
    let dir = f.root.join("traj");
    let out = f.root.join("traj.svox");
    ok(&[
        "generate", "--config", s(&f.config), "--seed", "5", "--steps", "4", "--dump-trajectory", s(&dir), "--out",
        s(&out),
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let structure: Vec<_> = names.iter().filter(|n| n.starts_with("structure_")).collect();
    assert_eq!(structure.len(), 5);
    assert_eq!(structure[0], "structure_0000.occ");
    let latent = names.iter().filter(|n| n.starts_with("latent_")).count();
    assert!(latent == 0 || latent == 5);
    let last = octlat::voxel::load_occupancy(dir.join("structure_0000.occ")).unwrap();
    assert_eq!(last.dims(), [4, 4, 4]);
    // The trace does not change the result.
    let plain = f.root.join("traj_plain.svox");
    ok(&["generate", "--config", s(&f.config), "--seed", "5", "--steps", "4", "--out", s(&plain)]);
    assert_eq!(read(&out), read(&plain));
}

#[test]
fn voxelize_octree_and_dualize() {
    let f = fixture();
    let occ = f.root.join("scan.occ");
    ok(&["voxelize", "--config", s(&f.config), "--scan", s(&f.scan), "--origin", "100,-10,0", "--out", s(&occ)]);
    let grid = octlat::voxel::load_occupancy(&occ).unwrap();
    let hits = semantics_to_occupancy(&toy_scene(DIMS, 5, 3, 9).unwrap());
    assert_eq!(grid.count(), hits.occupied().filter(|&[x, _, _]| x < 8).count());

    let oct = f.root.join("scan.oct");
    ok(&["build-octree", s(&occ), "--out", s(&oct)]);
    let tree = octlat::octree::load_octree(&oct).unwrap();
    assert_eq!(tree.to_dense(DIMS).unwrap(), grid);

    let dump = f.root.join("scan.graph");
    ok(&["dualize", s(&oct), "--out", s(&dump)]);
    let text = String::from_utf8(read(&dump)).unwrap();
    let g = octlat::dualgraph::dualize(&tree);
    assert_eq!(text, g.dump());

    // SVOX input goes straight through.
    let dump2 = f.root.join("scene.graph");
    ok(&["dualize", s(&f.scenes.join("s0.svox")), "--out", s(&dump2)]);
    assert!(read(&dump2).starts_with(b"node 0 "));
}

#[test]
fn exit_codes() {
    let f = fixture();
    let out = f.root.join("never4.out");
    // Malformed input.
    let junk = f.root.join("junk.svox");
    std::fs::write(&junk, b"SVX1\x01").unwrap();
    let (c, err) = code(&["build-octree", s(&junk), "--out", s(&out)]);
    assert_eq!(c, 3);
    assert!(err.contains("junk.svox"), "{err}");
    let (c, _) = code(&["build-octree", s(&f.root.join("missing.occ")), "--out", s(&out)]);
    assert_eq!(c, 3);

    // Inconsistent config.
    let bad = f.root.join("bad.json");
    std::fs::write(&bad, config_json("model.olp").replace("[16, 16, 8]", "[15, 16, 8]")).unwrap();
    let (c, err) = code(&["generate", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(c, 4);
    assert!(err.contains("bad.json"), "{err}");

    // Unknown key in the config is malformed input.
    let unknown = f.root.join("unknown.json");
    std::fs::write(&unknown, config_json("model.olp").replace("\"seed\": 3", "\"sed\": 3")).unwrap();
    let (c, _) = code(&["generate", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(c, 3);

    // Bad flags.
    assert_eq!(code(&["generate", "--config", s(&f.config)]).0, 2);
    assert_eq!(code(&["generate", "--config", s(&f.config), "--out", s(&out), "--seed", "x"]).0, 2);
    assert_eq!(code(&["voxelize", "--config", s(&f.config), "--scan", s(&f.scan), "--origin", "1,2", "--out", s(&out)]).0, 2);
    assert!(!out.exists());

    // Missing checkpoint.
    let nockpt = f.root.join("nockpt.json");
    std::fs::write(&nockpt, config_json("absent.olp")).unwrap();
    let (c, err) = code(&["generate", "--config", s(&nockpt), "--out", s(&out)]);
    assert_eq!(c, 3);
    assert!(err.contains("absent.olp"), "{err}");
}

#[test]
fn thread_cap_is_validated() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_octlat"))
            .args(["selftest"])
            .env("OCTLAT_THREADS", v)
            .output()
            .unwrap()
    };
    let bad = run("zero");
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("OCTLAT_THREADS"));
    assert!(run("1").status.success());
}

#[test]
fn selftest_reports_every_suite() {
    let out = ok(&["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in octlat::selftest::suite_names() {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
    assert!(text.contains("5 of 5 suites passed"));
}

#[test]
fn inputs_are_not_modified() {
    let f = fixture();
    let before: Vec<Vec<u8>> = (0..3).map(|i| read(&f.scenes.join(format!("s{i}.svox")))).collect();
    let cfg = read(&f.config);
    twice("immut", &["extend", "--config", s(&f.config), s(&f.scenes.join("s0.svox"))]);
    let after: Vec<Vec<u8>> = (0..3).map(|i| read(&f.scenes.join(format!("s{i}.svox")))).collect();
    assert_eq!(before, after);
    assert_eq!(cfg, read(&f.config));
}

const SUBCOMMANDS: [&str; 11] = [
    "", "voxelize", "build-octree", "dualize", "train-vae", "train-diff", "generate", "complete", "extend", "metrics",
    "selftest",
];

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in SUBCOMMANDS {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let text = String::from_utf8(ok(&args).stdout).unwrap();
        let name = if sub.is_empty() { "octlat" } else { sub };
        let path = golden.join(format!("{name}.txt"));
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &text).unwrap();
        } else {
            let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(text, want, "{name} --help drifted; rerun with UPDATE_GOLDEN=1");
        }
    }
}

#[test]
fn help_documents_every_flag() {
    let flags = [
        ("complete", &["--config", "--seed", "--out", "--scan", "--origin", "--mask", "--steps", "--threshold", "--dump-trajectory"][..]),
        ("generate", &["--config", "--seed", "--out", "--steps", "--threshold", "--dump-trajectory"][..]),
        ("extend", &["--config", "--seed", "--out", "--overlap", "--steps", "--threshold", "--dump-trajectory"][..]),
        ("voxelize", &["--config", "--scan", "--origin", "--out"][..]),
        ("train-vae", &["--config", "--seed", "--steps", "--out"][..]),
        ("metrics", &["--config", "--out"][..]),
    ];
    for (sub, want) in flags {
        let text = String::from_utf8(ok(&[sub, "--help"]).stdout).unwrap();
        for flag in want {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}
