use crate::dualgraph::EdgeType;
use crate::error::{Error, Result};
use crate::octree::{decode_code, MortonKey};

/// Axis-aligned cube with integer corner and side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cube {
    pub lo: [u64; 3],
    pub side: u64,
}

impl Cube {
    /// The cube of `key` in units of depth-`max_depth` cells.
    pub fn of_key(key: MortonKey, max_depth: u32) -> Cube {
        let s = max_depth - key.depth;
        Cube {
            lo: decode_code(key.code).map(|v| (v as u64) << s),
            side: 1 << s,
        }
    }

    pub fn hi(&self, axis: usize) -> u64 {
        self.lo[axis] + self.side
    }
}

/// Pairwise face-contact test over all cube pairs.
///
/// Returns `(i, j, type)` with `i < j` in input order, where the type's sign
/// says whether `j` lies on the positive side of `i`. Fails on any pair of
/// cubes with overlapping interiors.
pub fn brute_force_adjacency(cubes: &[Cube]) -> Result<Vec<([usize; 2], EdgeType)>> {
    let mut out = Vec::new();
    for i in 0..cubes.len() {
        for j in i + 1..cubes.len() {
            let (a, b) = (&cubes[i], &cubes[j]);
            let overlap = |ax: usize| a.lo[ax].max(b.lo[ax]) < a.hi(ax).min(b.hi(ax));
            let ov = [overlap(0), overlap(1), overlap(2)];
            if ov.iter().all(|&o| o) {
                return Err(Error::OverlappingCubes { a: i, b: j });
            }
            for axis in 0..3 {
                let others = (0..3).filter(|&o| o != axis).all(|o| ov[o]);
                if !others {
                    continue;
                }
                if a.hi(axis) == b.lo[axis] {
                    out.push(([i, j], EdgeType::new(axis as u8, true)));
                } else if b.hi(axis) == a.lo[axis] {
                    out.push(([i, j], EdgeType::new(axis as u8, false)));
                }
            }
        }
    }
    Ok(out)
}
