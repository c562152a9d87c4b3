use octlat::dualgraph::dualize;
use octlat::nets::{extract_patches, GraphVae, ModelConfig};
use octlat::octree::{build_octree, load_octree, save_octree};
use octlat::synth::toy_scene;
use octlat::voxel::{
    load_occupancy, load_scan, load_svox, save_occupancy, save_scan, save_svox, semantics_to_occupancy, voxelize,
    PointCloud,
};
use octlat::Error;

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = toy_scene([16, 16, 8], 5, 3, 1).unwrap();
    let occ = semantics_to_occupancy(&scene);
    let tree = build_octree(&occ);

    save_svox(&scene, dir.path().join("s.svox")).unwrap();
    save_occupancy(&occ, dir.path().join("o.occ")).unwrap();
    save_octree(&tree, dir.path().join("t.oct")).unwrap();
    assert_eq!(load_svox(dir.path().join("s.svox")).unwrap(), scene);
    assert_eq!(load_occupancy(dir.path().join("o.occ")).unwrap(), occ);
    let back = load_octree(dir.path().join("t.oct")).unwrap();
    assert_eq!(back.to_dense(occ.dims()).unwrap(), occ);
    assert_eq!(dualize(&back).dump(), dualize(&tree).dump());
}

#[test]
fn scan_to_octree_chain() {
    let dir = tempfile::tempdir().unwrap();
    let scene = toy_scene([16, 16, 8], 5, 2, 4).unwrap();
    let occ = semantics_to_occupancy(&scene);
    let origin = [-3.0, 2.0, 0.5];
    let points = occ
        .occupied()
        .map(|[x, y, z]| {
            let c = |v: usize, a: usize| ((v as f64 + 0.5) * 0.2 + origin[a]) as f32;
            [c(x, 0), c(y, 1), c(z, 2), 0.5]
        })
        .chain([[100.0, 0.0, 0.0, 1.0]])
        .collect();
    let path = dir.path().join("scan.bin");
    save_scan(&PointCloud::new(points), &path).unwrap();
    let cloud = load_scan(&path).unwrap().with_origin(origin);
    let (grid, stats) = voxelize(&cloud, [16, 16, 8], 0.2).unwrap();
    assert_eq!(grid, occ);
    assert_eq!(stats.out_of_bounds, 1);
    assert_eq!(build_octree(&grid).to_dense(grid.dims()).unwrap(), occ);
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.svox");
    std::fs::write(&path, b"NOPE").unwrap();
    let e = load_svox(&path).unwrap_err();
    assert!(e.to_string().contains("bad.svox"), "{e}");
    assert!(matches!(e.root(), Error::BadMagic { .. } | Error::Truncated { .. }), "{e:?}");
    assert!(load_octree(dir.path().join("missing.oct")).is_err());
}

#[test]
fn patch_octree_storage_is_sparse() {
    let dims = [256, 256, 32];
    let dense_bytes = dims.iter().product::<usize>() * 2;
    let vae = GraphVae::new(&ModelConfig::new([1, 4, 4], 20), dims).unwrap();
    let mut measured = 0;
    for seed in 0..8 {
        let scene = toy_scene(dims, 20, 2, seed).unwrap();
        if scene.occupied_count() * 20 > scene.len() {
            continue;
        }
        let patches = extract_patches(&scene, &vae.geom).unwrap();
        let ratio = build_octree(&patches.occupancy).storage_bytes() as f64 / dense_bytes as f64;
        assert!(ratio < 0.10, "seed {seed}: {ratio:.3}");
        measured += 1;
    }
    assert!(measured >= 3);
}
