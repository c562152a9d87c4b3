//! Dual graph of octree leaves: one node per leaf, one edge per pair of
//! leaves whose cubes share a face of positive area.
//!
//! Nodes are kept in canonical order, by the Morton code of their minimum
//! corner at the graph's max depth. Edges are stored once with `i < j`.
//! The edge type records the contact axis and the direction from `i` to
//! `j`; convolution uses it as six directed kernel slots plus a self slot.

mod brute;
mod pool;

pub use brute::{brute_force_adjacency, Cube};
pub use pool::{pool, pool_structure, unpool, unpool_structure, PoolMap, UnpoolMap};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::octree::{decode_code, encode_code, MortonKey, Octree};

/// Number of directed neighbor slots (three axes, two signs).
pub const NUM_DIRECTIONS: usize = 6;
/// Directed slots plus the self slot.
pub const NUM_KERNEL_SLOTS: usize = NUM_DIRECTIONS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeType {
    /// 0 = x, 1 = y, 2 = z.
    pub axis: u8,
    /// True when the second endpoint lies on the positive side.
    pub positive: bool,
}

impl EdgeType {
    pub fn new(axis: u8, positive: bool) -> Self {
        debug_assert!(axis < 3);
        EdgeType { axis, positive }
    }

    /// The same contact seen from the other endpoint.
    pub fn flipped(self) -> Self {
        EdgeType {
            axis: self.axis,
            positive: !self.positive,
        }
    }

    /// Directed slot in `0..6`: `2 * axis` for positive, `2 * axis + 1` for
    /// negative.
    pub fn slot(self) -> usize {
        2 * self.axis as usize + usize::from(!self.positive)
    }

    pub fn axis_name(self) -> char {
        ['x', 'y', 'z'][self.axis as usize]
    }

    pub fn sign_char(self) -> char {
        if self.positive {
            '+'
        } else {
            '-'
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualOctreeGraph {
    max_depth: u32,
    depth: Vec<u8>,
    code: Vec<u64>,
    edges: Vec<[u32; 2]>,
    types: Vec<EdgeType>,
}

impl DualOctreeGraph {
    pub fn num_nodes(&self) -> usize {
        self.code.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn depth(&self, i: usize) -> u32 {
        self.depth[i] as u32
    }

    pub fn depths(&self) -> &[u8] {
        &self.depth
    }

    pub fn key(&self, i: usize) -> MortonKey {
        MortonKey {
            depth: self.depth[i] as u32,
            code: self.code[i],
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = MortonKey> + '_ {
        (0..self.num_nodes()).map(|i| self.key(i))
    }

    pub fn edges(&self) -> &[[u32; 2]] {
        &self.edges
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.types
    }

    /// Index of the node with `key`, if it is a node of this graph.
    pub fn find(&self, key: MortonKey) -> Option<usize> {
        if key.depth > self.max_depth {
            return None;
        }
        let pos = self.scaled_keys_search(key.code_at(self.max_depth))?;
        (self.depth[pos] as u32 == key.depth).then_some(pos)
    }

    fn scaled_key(&self, i: usize) -> u64 {
        self.code[i] << (3 * (self.max_depth - self.depth[i] as u32))
    }

    fn scaled_keys_search(&self, target: u64) -> Option<usize> {
        let (mut lo, mut hi) = (0usize, self.num_nodes());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.scaled_key(mid).cmp(&target) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Axis-aligned cube of node `i` in units of max-depth cells.
    pub fn cube(&self, i: usize) -> Cube {
        let s = self.max_depth - self.depth[i] as u32;
        let c = decode_code(self.code[i]);
        Cube {
            lo: c.map(|v| (v as u64) << s),
            side: 1 << s,
        }
    }

    /// Cube center in the unit cube.
    pub fn center_unit(&self, i: usize) -> [f64; 3] {
        let c = decode_code(self.code[i]);
        let n = (1u64 << self.depth[i]) as f64;
        c.map(|v| (v as f64 + 0.5) / n)
    }

    /// Every edge in both directions: `(src, dst, slot)` where `slot` is the
    /// direction from `src` to `dst`.
    pub fn directed_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.edges.len());
        for (&[i, j], &t) in self.edges.iter().zip(&self.types) {
            out.push((i as usize, j as usize, t.slot()));
            out.push((j as usize, i as usize, t.flipped().slot()));
        }
        out
    }

    /// Heap bytes of node and edge tables.
    pub fn storage_bytes(&self) -> usize {
        self.depth.len() + self.code.len() * 8 + self.edges.len() * 8 + self.types.len() * 2
    }

    /// Text dump with one `node idx depth key` line per node and one
    /// `edge i j axis sign` line per edge.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.num_nodes() {
            writeln!(s, "node {i} {} {}", self.depth[i], self.code[i]).unwrap();
        }
        for (&[i, j], t) in self.edges.iter().zip(&self.types) {
            writeln!(s, "edge {i} {j} {} {}", t.axis_name(), t.sign_char()).unwrap();
        }
        s
    }
}

/// Per-depth lookup of leaf codes to node indices.
struct LeafIndex {
    by_depth: Vec<Vec<(u64, u32)>>,
}

impl LeafIndex {
    fn find(&self, depth: u32, code: u64) -> Option<u32> {
        let v = &self.by_depth[depth as usize];
        v.binary_search_by_key(&code, |&(c, _)| c).ok().map(|p| v[p].1)
    }
}

/// Builds the dual graph of an arbitrary set of non-overlapping leaf keys
/// that tile a region of the depth-`max_depth` cube.
pub fn dualize_keys(keys: &[MortonKey], max_depth: u32) -> DualOctreeGraph {
    let mut order: Vec<MortonKey> = keys.to_vec();
    order.sort_unstable_by_key(|k| k.code_at(max_depth));
    let n = order.len();

    let mut by_depth = vec![Vec::new(); max_depth as usize + 1];
    for (i, k) in order.iter().enumerate() {
        by_depth[k.depth as usize].push((k.code, i as u32));
    }
    for v in &mut by_depth {
        v.sort_unstable_by_key(|&(c, _)| c);
    }
    let index = LeafIndex { by_depth };

    let mut pairs: Vec<([u32; 2], EdgeType)> = Vec::with_capacity(3 * n);
    for (i, k) in order.iter().enumerate() {
        let d = k.depth;
        let side = 1i64 << d;
        let c = decode_code(k.code);
        for axis in 0..3u8 {
            for positive in [true, false] {
                let mut m = c;
                let v = c[axis as usize] as i64 + if positive { 1 } else { -1 };
                if v < 0 || v >= side {
                    continue;
                }
                m[axis as usize] = v as u32;
                let code = encode_code(m[0], m[1], m[2]);
                if let Some(j) = index.find(d, code) {
                    // Same-depth contact: record once, from the lower side.
                    if positive {
                        pairs.push(oriented(i as u32, j, EdgeType::new(axis, true)));
                    }
                    continue;
                }
                for up in 1..=d {
                    if let Some(j) = index.find(d - up, code >> (3 * up)) {
                        pairs.push(oriented(i as u32, j, EdgeType::new(axis, positive)));
                        break;
                    }
                }
            }
        }
    }
    pairs.sort_unstable();

    DualOctreeGraph {
        max_depth,
        depth: order.iter().map(|k| k.depth as u8).collect(),
        code: order.iter().map(|k| k.code).collect(),
        edges: pairs.iter().map(|p| p.0).collect(),
        types: pairs.iter().map(|p| p.1).collect(),
    }
}

fn oriented(i: u32, j: u32, t: EdgeType) -> ([u32; 2], EdgeType) {
    if i < j {
        ([i, j], t)
    } else {
        ([j, i], t.flipped())
    }
}

pub fn dualize(oct: &Octree) -> DualOctreeGraph {
    let keys: Vec<MortonKey> = oct.leaves().map(|l| l.key).collect();
    dualize_keys(&keys, oct.max_depth())
}

/// Checks that `keys` do not overlap, via the brute-force oracle.
pub fn validate_keys(keys: &[MortonKey], max_depth: u32) -> Result<()> {
    if keys.iter().any(|k| k.depth > max_depth) {
        return Err(Error::InvalidParameter("leaf deeper than max depth".into()));
    }
    let cubes: Vec<Cube> = keys.iter().map(|&k| Cube::of_key(k, max_depth)).collect();
    brute_force_adjacency(&cubes).map(|_| ())
}
