use crate::error::{Error, Result};
use crate::voxel::{coords_of, linear_index, OccupancyGrid, PointCloud, SemanticVoxelGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VoxelizeStats {
    pub inserted: usize,
    pub out_of_bounds: usize,
}

/// Marks the cell `⌊(p − origin) / voxel_size⌋` of every in-bounds point.
///
/// Points on a cell's upper face belong to the next cell; points at or beyond
/// the grid's upper bound are dropped and counted.
pub fn voxelize(
    cloud: &PointCloud,
    dims: [usize; 3],
    voxel_size: f64,
) -> Result<(OccupancyGrid, VoxelizeStats)> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidParameter(format!("voxel_size must be positive, got {voxel_size}")));
    }
    let mut grid = OccupancyGrid::empty(dims)?;
    let mut stats = VoxelizeStats::default();
    'points: for p in &cloud.points {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] as f64 - cloud.origin[a]) / voxel_size).floor();
            if !(f >= 0.0 && f < dims[a] as f64) {
                stats.out_of_bounds += 1;
                continue 'points;
            }
            c[a] = f as usize;
        }
        grid.set(c[0], c[1], c[2], true);
        stats.inserted += 1;
    }
    Ok((grid, stats))
}

/// Any-occupied reduction over `factor`-sized blocks.
pub fn downsample_occupancy(grid: &OccupancyGrid, factor: [usize; 3]) -> Result<OccupancyGrid> {
    let dims = grid.dims();
    if factor.contains(&0) || (0..3).any(|a| !dims[a].is_multiple_of(factor[a])) {
        return Err(Error::Indivisible { dims, factor });
    }
    let cd = [dims[0] / factor[0], dims[1] / factor[1], dims[2] / factor[2]];
    let mut out = OccupancyGrid::empty(cd)?;
    for (i, &b) in grid.bits().iter().enumerate() {
        if b {
            let [x, y, z] = coords_of(dims, i);
            out.set(x / factor[0], y / factor[1], z / factor[2], true);
        }
    }
    Ok(out)
}

/// Replicates each coarse cell over its `factor`-sized block.
pub fn upsample_occupancy(grid: &OccupancyGrid, factor: [usize; 3]) -> Result<OccupancyGrid> {
    let cd = grid.dims();
    let dims = [cd[0] * factor[0], cd[1] * factor[1], cd[2] * factor[2]];
    OccupancyGrid::from_fn(dims, |x, y, z| {
        grid.bits()[linear_index(cd, x / factor[0], y / factor[1], z / factor[2])]
    })
}

pub fn semantics_to_occupancy(grid: &SemanticVoxelGrid) -> OccupancyGrid {
    OccupancyGrid::new(grid.dims(), grid.labels().iter().map(|&l| l != 0).collect())
        .expect("dims already validated")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(dims: [usize; 3], p: f64, seed: u64) -> OccupancyGrid {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        OccupancyGrid::from_fn(dims, |_, _, _| r.gen_bool(p)).unwrap()
    }

    #[test]
    fn point_at_origin_hits_first_cell() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0, 1.0]]);
        let (g, s) = voxelize(&c, [4, 4, 4], 0.2).unwrap();
        assert!(g.get(0, 0, 0));
        assert_eq!(g.count(), 1);
        assert_eq!(s, VoxelizeStats { inserted: 1, out_of_bounds: 0 });
    }

    #[test]
    fn floor_semantics_on_boundaries() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0, 0.0]]);
        let (g, _) = voxelize(&c, [8, 1, 1], 0.2).unwrap();
        assert!(g.get(5, 0, 0));

        // Exactly at the upper grid bound: dropped.
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0, 0.0], [-0.01, 0.0, 0.0, 0.0]]);
        let (g, s) = voxelize(&c, [5, 1, 1], 0.2).unwrap();
        assert_eq!(g.count(), 0);
        assert_eq!(s.out_of_bounds, 2);
    }

    #[test]
    fn voxelize_matches_scalar_reference() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let origin = [-1.0, -2.0, -0.5];
        let pts: Vec<[f32; 4]> = (0..1000)
            .map(|_| {
                [
                    r.gen_range(-1.5f32..3.0),
                    r.gen_range(-2.5f32..2.0),
                    r.gen_range(-1.0f32..1.5),
                    0.0,
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).with_origin(origin);
        let dims = [20, 16, 8];
        let vs = 0.2;
        let (g, s) = voxelize(&cloud, dims, vs).unwrap();

        let mut want = vec![false; 20 * 16 * 8];
        let mut dropped = 0;
        for p in &pts {
            let ix = ((p[0] as f64 - origin[0]) / vs).floor();
            let iy = ((p[1] as f64 - origin[1]) / vs).floor();
            let iz = ((p[2] as f64 - origin[2]) / vs).floor();
            if ix < 0.0 || iy < 0.0 || iz < 0.0 || ix >= 20.0 || iy >= 16.0 || iz >= 8.0 {
                dropped += 1;
                continue;
            }
            want[ix as usize + 20 * (iy as usize + 16 * iz as usize)] = true;
        }
        assert_eq!(g.bits(), &want[..]);
        assert_eq!(s.out_of_bounds, dropped);
        assert_eq!(s.inserted + s.out_of_bounds, 1000);
    }

    #[test]
    fn downsample_outdoor_dims() {
        let g = OccupancyGrid::empty([256, 256, 32]).unwrap();
        assert_eq!(downsample_occupancy(&g, [8, 8, 2]).unwrap().dims(), [32, 32, 16]);
        assert!(matches!(
            downsample_occupancy(&g, [3, 8, 2]),
            Err(Error::Indivisible { .. })
        ));
    }

    #[test]
    fn downsample_single_fine_cell() {
        let mut g = OccupancyGrid::empty([4, 4, 4]).unwrap();
        g.set(3, 2, 1, true);
        let c = downsample_occupancy(&g, [2, 2, 2]).unwrap();
        assert_eq!(c.count(), 1);
        assert!(c.get(1, 1, 0));
    }

    #[test]
    fn downsample_matches_triple_loop() {
        let g = random_grid([16, 16, 8], 0.05, 3);
        let c = downsample_occupancy(&g, [2, 2, 2]).unwrap();
        for z in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    let mut any = false;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                any |= g.get(2 * x + dx, 2 * y + dy, 2 * z + dz);
                            }
                        }
                    }
                    assert_eq!(c.get(x, y, z), any);
                }
            }
        }
    }

    #[test]
    fn semantics_to_occupancy_cases() {
        let g = SemanticVoxelGrid::empty([3, 3, 3], 1.0, 4).unwrap();
        assert_eq!(semantics_to_occupancy(&g).count(), 0);
        let g = SemanticVoxelGrid::new([3, 3, 3], 1.0, 4, vec![1; 27]).unwrap();
        assert_eq!(semantics_to_occupancy(&g).count(), 27);

        let mut r = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<u16> = (0..60).map(|_| r.gen_range(0..4)).collect();
        let g = SemanticVoxelGrid::new([3, 4, 5], 1.0, 4, labels.clone()).unwrap();
        let occ = semantics_to_occupancy(&g);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(occ.bits()[i], *l != 0);
        }
    }

    proptest! {
        #[test]
        fn voxelize_is_order_invariant(seed in any::<u64>()) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<[f32; 4]> = (0..200)
                .map(|_| [r.gen_range(-0.2f32..2.0), r.gen_range(-0.2f32..2.0), r.gen_range(-0.2f32..1.0), 0.0])
                .collect();
            let a = voxelize(&PointCloud::new(pts.clone()), [8, 8, 4], 0.25).unwrap();
            pts.reverse();
            let n = pts.len();
            pts.swap(0, n / 2);
            let b = voxelize(&PointCloud::new(pts), [8, 8, 4], 0.25).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn downsample_is_monotone(seed in any::<u64>(), extra in 0usize..512) {
            let g = random_grid([8, 8, 8], 0.1, seed);
            let mut h = g.clone();
            let [x, y, z] = coords_of([8, 8, 8], extra);
            h.set(x, y, z, true);
            let (cg, ch) = (
                downsample_occupancy(&g, [2, 2, 2]).unwrap(),
                downsample_occupancy(&h, [2, 2, 2]).unwrap(),
            );
            prop_assert!(ch.contains(&cg));
        }

        #[test]
        fn coarse_mask_dilates(seed in any::<u64>(), p in 0.0f64..0.3) {
            let g = random_grid([16, 8, 8], p, seed);
            let f = [4, 2, 2];
            let back = upsample_occupancy(&downsample_occupancy(&g, f).unwrap(), f).unwrap();
            prop_assert!(back.contains(&g));
        }
    }
}
