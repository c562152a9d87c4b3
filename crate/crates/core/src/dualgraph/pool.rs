//! Sibling grouping (pool) and splitting (unpool) between graph levels.

use crate::dualgraph::{dualize_keys, DualOctreeGraph};
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};
use crate::octree::MortonKey;

#[derive(Clone, Debug)]
pub struct PoolMap {
    pub coarse: DualOctreeGraph,
    /// Coarse node receiving each fine node.
    pub target: Vec<usize>,
    /// Fine nodes merged into each coarse node: 8 for groups, 1 otherwise.
    pub group_size: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct UnpoolMap {
    pub fine: DualOctreeGraph,
    /// Coarse node each fine node was copied from.
    pub source: Vec<usize>,
    /// Octant of each fine node within its split parent.
    pub octant: Vec<Option<u8>>,
}

/// Merges every sibling octet at the graph's deepest depth into its parent.
/// Shallower nodes pass through.
pub fn pool_structure(g: &DualOctreeGraph) -> Result<PoolMap> {
    let deepest = g.depths().iter().copied().max().unwrap_or(0) as u32;
    if deepest == 0 {
        return Err(Error::InvalidParameter("cannot pool a root-only graph".into()));
    }
    let n = g.num_nodes();
    let mut keys: Vec<MortonKey> = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    let mut group_size = Vec::new();
    let mut i = 0;
    while i < n {
        let k = g.key(i);
        if k.depth < deepest {
            keys.push(k);
            group_size.push(1);
            target.push(keys.len() - 1);
            i += 1;
            continue;
        }
        let parent = k.parent();
        let mut j = i;
        while j < n && g.depth(j) == deepest && g.key(j).parent() == parent {
            j += 1;
        }
        if j - i != 8 {
            return Err(Error::IncompleteSiblings {
                depth: deepest,
                parent: parent.code,
            });
        }
        keys.push(parent);
        group_size.push(8);
        target.extend(std::iter::repeat_n(keys.len() - 1, 8));
        i = j;
    }
    let coarse = dualize_keys(&keys, deepest - 1);
    Ok(PoolMap {
        coarse,
        target,
        group_size,
    })
}

/// Mean pooling of node features `[n, c]`.
pub fn pool<T: Real>(g: &DualOctreeGraph, feats: &Tensor<T>) -> Result<(DualOctreeGraph, Tensor<T>)> {
    if feats.rows() != g.num_nodes() {
        return Err(Error::shape("pool", feats.shape(), &[g.num_nodes()]));
    }
    let map = pool_structure(g)?;
    let c = feats.cols();
    let mut out = vec![T::zero(); map.coarse.num_nodes() * c];
    for (i, &t) in map.target.iter().enumerate() {
        let w = T::one() / T::lit(map.group_size[t] as f64);
        for (o, &x) in out[t * c..(t + 1) * c].iter_mut().zip(feats.row(i)) {
            *o += w * x;
        }
    }
    let t = Tensor::new(vec![map.coarse.num_nodes(), c], out)?;
    Ok((map.coarse, t))
}

/// Replaces every node with `splits[i]` set by its eight children.
pub fn unpool_structure(g: &DualOctreeGraph, splits: &[bool]) -> Result<UnpoolMap> {
    if splits.len() != g.num_nodes() {
        return Err(Error::DecisionLength {
            depth: g.max_depth(),
            expected: g.num_nodes(),
            got: splits.len(),
        });
    }
    let mut keys = Vec::with_capacity(g.num_nodes());
    let mut source = Vec::with_capacity(g.num_nodes());
    let mut octant = Vec::with_capacity(g.num_nodes());
    let mut max_depth = g.max_depth();
    for (i, &s) in splits.iter().enumerate() {
        let k = g.key(i);
        if s {
            max_depth = max_depth.max(k.depth + 1);
            for o in 0..8u8 {
                keys.push(k.child(o as u64));
                source.push(i);
                octant.push(Some(o));
            }
        } else {
            keys.push(k);
            source.push(i);
            octant.push(None);
        }
    }
    Ok(UnpoolMap {
        fine: dualize_keys(&keys, max_depth),
        source,
        octant,
    })
}

/// Copies each split node's features to its children.
pub fn unpool<T: Real>(
    g: &DualOctreeGraph,
    feats: &Tensor<T>,
    splits: &[bool],
) -> Result<(DualOctreeGraph, Tensor<T>)> {
    if feats.rows() != g.num_nodes() {
        return Err(Error::shape("unpool", feats.shape(), &[g.num_nodes()]));
    }
    let map = unpool_structure(g, splits)?;
    let c = feats.cols();
    let mut out = Vec::with_capacity(map.source.len() * c);
    for &s in &map.source {
        out.extend_from_slice(feats.row(s));
    }
    let t = Tensor::new(vec![map.source.len(), c], out)?;
    Ok((map.fine, t))
}
