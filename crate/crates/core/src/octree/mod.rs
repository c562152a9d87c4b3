//! Linear octree over the power-of-two cube enclosing a voxel grid.
//!
//! Each depth keeps a sorted list of Morton codes with a split flag and an
//! occupancy flag per node. A node is split iff all eight children exist at
//! the next depth. At the deepest level the per-node decision is occupancy
//! rather than a split. Cells of the cube outside the real grid ("phantom"
//! cells) are never occupied.

mod io;
mod morton;

pub use io::{decode_octree, encode_octree, load_octree, save_octree, OCTREE_MAGIC};
pub use morton::{depth_for_dims, morton_decode, morton_encode, MortonKey, MAX_DEPTH};

pub(crate) use morton::{decode_code, encode_code};

use crate::error::{Error, Result};
use crate::voxel::{coords_of, OccupancyGrid};

/// Split values above this are treated as 1.
pub const SPLIT_THRESHOLD: f64 = 0.0;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Level {
    codes: Vec<u64>,
    split: Vec<bool>,
    occupied: Vec<bool>,
}

impl Level {
    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn split(&self) -> &[bool] {
        &self.split
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn find(&self, code: u64) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    fn children_of_split(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(8 * self.split.iter().filter(|&&s| s).count());
        for (&c, &s) in self.codes.iter().zip(&self.split) {
            if s {
                out.extend((0..8).map(|o| c << 3 | o));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Octree {
    levels: Vec<Level>,
}

/// A leaf of the octree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Leaf {
    pub key: MortonKey,
    pub occupied: bool,
}

/// Whether the cube cell `code` at `depth` overlaps the real grid `dims`
/// defined at depth `full`.
#[inline]
pub(crate) fn intersects(code: u64, depth: u32, full: u32, dims: [usize; 3]) -> bool {
    let c = decode_code(code);
    let s = full - depth;
    (0..3).all(|a| ((c[a] as usize) << s) < dims[a])
}

impl Octree {
    /// Validates and wraps per-depth levels.
    pub fn from_levels(levels: Vec<Level>) -> Result<Octree> {
        let bad = |m: String| Err(Error::Malformed(m));
        if levels.is_empty() || levels[0].codes != [0] {
            return bad("root level must hold exactly code 0".into());
        }
        if levels.len() > MAX_DEPTH as usize + 1 {
            return bad(format!("max depth {} exceeds {MAX_DEPTH}", levels.len() - 1));
        }
        for (d, l) in levels.iter().enumerate() {
            if l.split.len() != l.codes.len() || l.occupied.len() != l.codes.len() {
                return bad(format!("flag count mismatch at depth {d}"));
            }
            if l.codes.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("codes at depth {d} not sorted and unique"));
            }
            if l.split.iter().zip(&l.occupied).any(|(&s, &o)| s && !o) {
                return bad(format!("split node marked empty at depth {d}"));
            }
            if d + 1 == levels.len() {
                if l.split.iter().any(|&s| s) {
                    return bad(format!("split node at max depth {d}"));
                }
            } else {
                let expect = l.children_of_split();
                if expect != levels[d + 1].codes {
                    return bad(format!(
                        "depth {} population is not exactly the children of split nodes",
                        d + 1
                    ));
                }
            }
        }
        Ok(Octree { levels })
    }

    pub fn max_depth(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, depth: u32) -> &Level {
        &self.levels[depth as usize]
    }

    pub fn num_nodes(&self) -> usize {
        self.levels.iter().map(Level::len).sum()
    }

    pub fn num_leaves(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.split.iter().filter(|&&s| !s).count())
            .sum()
    }

    pub fn contains(&self, key: MortonKey) -> bool {
        (key.depth as usize) < self.levels.len() && self.levels[key.depth as usize].find(key.code).is_some()
    }

    /// Leaves ordered by depth, then code.
    pub fn leaves(&self) -> impl Iterator<Item = Leaf> + '_ {
        self.levels.iter().enumerate().flat_map(|(d, l)| {
            l.codes
                .iter()
                .zip(&l.split)
                .zip(&l.occupied)
                .filter(|((_, &s), _)| !s)
                .map(move |((&code, _), &occupied)| Leaf {
                    key: MortonKey {
                        depth: d as u32,
                        code,
                    },
                    occupied,
                })
        })
    }

    /// Heap bytes of the node tables: one `u64` code and two flag bytes per
    /// node.
    pub fn storage_bytes(&self) -> usize {
        self.levels
            .iter()
            .map(|l| {
                l.codes.len() * std::mem::size_of::<u64>()
                    + (l.split.len() + l.occupied.len()) * std::mem::size_of::<bool>()
            })
            .sum()
    }

    /// Rasterizes occupied leaves into a grid of `dims` at max depth.
    pub fn to_dense(&self, dims: [usize; 3]) -> Result<OccupancyGrid> {
        let full = self.max_depth();
        if depth_for_dims(dims) > full {
            return Err(Error::InvalidParameter(format!(
                "dims {dims:?} exceed the depth-{full} cube"
            )));
        }
        let mut g = OccupancyGrid::empty(dims)?;
        for leaf in self.leaves().filter(|l| l.occupied) {
            let s = full - leaf.key.depth;
            let c = leaf.key.coords();
            let lo = c.map(|v| (v as usize) << s);
            let hi: Vec<usize> = (0..3).map(|a| (lo[a] + (1 << s)).min(dims[a])).collect();
            for z in lo[2]..hi[2] {
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
        Ok(g)
    }

    /// Drops every level below `depth`; nodes at the new max depth keep
    /// their occupancy and lose their split flag.
    pub fn truncate(&self, depth: u32) -> Octree {
        let mut levels = self.levels[..=(depth.min(self.max_depth()) as usize)].to_vec();
        let last = levels.last_mut().unwrap();
        last.split.iter_mut().for_each(|s| *s = false);
        Octree { levels }
    }
}

/// Per-node decision callback: `(code, depth) -> (split, occupied)`.
fn assemble(full: u32, mut decide: impl FnMut(u32, &[u64]) -> Result<Vec<bool>>) -> Result<Octree> {
    let mut levels = Vec::with_capacity(full as usize + 1);
    let mut codes = vec![0u64];
    for d in 0..=full {
        let flags = decide(d, &codes)?;
        let level = if d == full {
            Level {
                split: vec![false; codes.len()],
                occupied: flags,
                codes,
            }
        } else {
            Level {
                split: flags.clone(),
                occupied: flags,
                codes,
            }
        };
        let next = if d < full {
            level.children_of_split()
        } else {
            Vec::new()
        };
        levels.push(level);
        codes = next;
    }
    Ok(Octree { levels })
}

/// Sorted occupied codes per depth, finest level at index `full`.
fn occupied_codes(occ: &OccupancyGrid, full: u32) -> Vec<Vec<u64>> {
    let dims = occ.dims();
    let mut finest: Vec<u64> = occ
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| {
            let [x, y, z] = coords_of(dims, i);
            encode_code(x as u32, y as u32, z as u32)
        })
        .collect();
    finest.sort_unstable();
    let mut out = vec![Vec::new(); full as usize + 1];
    out[full as usize] = finest;
    for d in (0..full as usize).rev() {
        let mut up: Vec<u64> = out[d + 1].iter().map(|c| c >> 3).collect();
        up.dedup();
        out[d] = up;
    }
    out
}

/// Membership of sorted `codes` in sorted `set`.
fn sorted_membership(codes: &[u64], set: &[u64]) -> Vec<bool> {
    let mut j = 0;
    codes
        .iter()
        .map(|&c| {
            while j < set.len() && set[j] < c {
                j += 1;
            }
            j < set.len() && set[j] == c
        })
        .collect()
}

/// Subdivides exactly the nodes with an occupied descendant.
pub fn build_octree(occ: &OccupancyGrid) -> Octree {
    build_octree_flat(occ, 0)
}

/// Like [`build_octree`], but every node above `flat_depth` that overlaps
/// the real grid is split regardless of occupancy, so levels down to
/// `flat_depth` tile the grid completely.
pub fn build_octree_flat(occ: &OccupancyGrid, flat_depth: u32) -> Octree {
    let dims = occ.dims();
    let full = depth_for_dims(dims);
    let occ_codes = occupied_codes(occ, full);
    assemble(full, |d, codes| {
        let mut flags = sorted_membership(codes, &occ_codes[d as usize]);
        if d < flat_depth.min(full) {
            for (f, &c) in flags.iter_mut().zip(codes) {
                *f |= intersects(c, d, full, dims);
            }
        }
        Ok(flags)
    })
    .expect("infallible decisions")
}

/// Dense grid of continuous split values at one depth, cropped to the real
/// extent. `+1` encodes split/occupied, `-1` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseSplitGrid {
    depth: u32,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl CoarseSplitGrid {
    pub fn new(depth: u32, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if depth_for_dims(dims) > depth || depth > MAX_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "dims {dims:?} do not fit the depth-{depth} cube"
            )));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::shape("CoarseSplitGrid::new", &dims, &[values.len()]));
        }
        Ok(CoarseSplitGrid { depth, dims, values })
    }

    /// `±1` encoding of an occupancy grid at its enclosing depth.
    pub fn from_occupancy(occ: &OccupancyGrid) -> Self {
        let values = occ.bits().iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        CoarseSplitGrid {
            depth: depth_for_dims(occ.dims()),
            dims: occ.dims(),
            values,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn threshold(&self) -> OccupancyGrid {
        OccupancyGrid::new(self.dims, self.values.iter().map(|&v| v > SPLIT_THRESHOLD).collect())
            .expect("dims validated")
    }
}

/// Grows an octree from a coarse split grid and per-depth decisions.
///
/// Levels above the grid's depth tile the real extent. Grid cells above the
/// threshold split when further decisions follow. `decisions[i]` covers the
/// nodes at depth `grid.depth() + 1 + i` in code order; the last vector is
/// the leaf occupancy of the deepest level, the others are split flags.
pub fn grow_by_splits(grid: &CoarseSplitGrid, decisions: &[Vec<bool>]) -> Result<Octree> {
    let base = grid.depth;
    let full = base + decisions.len() as u32;
    if full > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!("grown depth {full} exceeds {MAX_DEPTH}")));
    }
    let occ = grid.threshold();
    assemble(full, |d, codes| {
        if d < base {
            Ok(codes.iter().map(|&c| intersects(c, d, base, grid.dims)).collect())
        } else if d == base {
            Ok(codes
                .iter()
                .map(|&c| {
                    let [x, y, z] = decode_code(c).map(|v| v as usize);
                    x < grid.dims[0] && y < grid.dims[1] && z < grid.dims[2] && occ.get(x, y, z)
                })
                .collect())
        } else {
            let dec = &decisions[(d - base - 1) as usize];
            if dec.len() != codes.len() {
                return Err(Error::DecisionLength {
                    depth: d,
                    expected: codes.len(),
                    got: dec.len(),
                });
            }
            Ok(dec.clone())
        }
    })
}
