//! Small procedural scenes for tests, demos and the self-test.

use rand::Rng as _;

use crate::error::Result;
use crate::numeric::Rng;
use crate::voxel::SemanticVoxelGrid;

/// Ground slab of class 1 at `z = 0` plus a few boxes resting on it, with
/// box labels cycling through classes `2..num_classes`.
pub fn toy_scene(dims: [usize; 3], num_classes: u16, boxes: usize, seed: u64) -> Result<SemanticVoxelGrid> {
    let mut g = SemanticVoxelGrid::empty(dims, 0.2, num_classes.max(3))?;
    for y in 0..dims[1] {
        for x in 0..dims[0] {
            g.set(x, y, 0, 1);
        }
    }
    let mut r = Rng::new(seed).derive_str("toy_scene").generator();
    for b in 0..boxes {
        let label = 2 + (b as u16 % (g.num_classes() - 2));
        let sx = r.gen_range(1..=(dims[0] / 3).max(1));
        let sy = r.gen_range(1..=(dims[1] / 3).max(1));
        let sz = r.gen_range(1..=(dims[2] - 1).max(1));
        let x0 = r.gen_range(0..=dims[0] - sx);
        let y0 = r.gen_range(0..=dims[1] - sy);
        for z in 1..(1 + sz).min(dims[2]) {
            for y in y0..y0 + sy {
                for x in x0..x0 + sx {
                    g.set(x, y, z, label);
                }
            }
        }
    }
    Ok(g)
}
