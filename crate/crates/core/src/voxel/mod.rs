//! Semantic voxel grids, occupancy grids and LiDAR ingestion.
//!
//! All dense volumes are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

mod io;
mod ops;

pub use io::{
    decode_occupancy, decode_scan, decode_svox, encode_occupancy, encode_scan, encode_svox,
    load_occupancy, load_scan, load_svox, save_occupancy, save_scan, save_svox, OCC_MAGIC,
    SVOX_MAGIC, SVOX_VERSION,
};
pub(crate) use io::{pack_bits, unpack_bits};
pub use ops::{downsample_occupancy, semantics_to_occupancy, upsample_occupancy, voxelize, VoxelizeStats};

use crate::error::{Error, Result};

/// Linear index of `(x, y, z)` in an x-fastest volume.
#[inline]
pub fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Inverse of [`linear_index`].
#[inline]
pub fn coords_of(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

fn check_dims(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::InvalidParameter(format!("grid dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidParameter(format!("grid dims {dims:?} overflow")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticVoxelGrid {
    dims: [usize; 3],
    voxel_size: f32,
    num_classes: u16,
    labels: Vec<u16>,
}

impl SemanticVoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size: f32, num_classes: u16, labels: Vec<u16>) -> Result<Self> {
        let n = check_dims(dims)?;
        if labels.len() != n {
            return Err(Error::shape("SemanticVoxelGrid::new", &dims, &[labels.len()]));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be at least 1".into()));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {} at voxel {:?} >= num_classes {num_classes}",
                labels[i],
                coords_of(dims, i)
            )));
        }
        Ok(SemanticVoxelGrid {
            dims,
            voxel_size,
            num_classes,
            labels,
        })
    }

    /// All-empty grid.
    pub fn empty(dims: [usize; 3], voxel_size: f32, num_classes: u16) -> Result<Self> {
        let n = check_dims(dims)?;
        Self::new(dims, voxel_size, num_classes, vec![0; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    /// Sets one voxel. Panics when `label >= num_classes`.
    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u16) {
        assert!(label < self.num_classes, "label {label} out of range");
        let i = linear_index(self.dims, x, y, z);
        self.labels[i] = label;
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Copies the box `[lo, lo + dims)` into a new grid; cells outside the
    /// source are empty.
    pub fn window(&self, lo: [i64; 3], dims: [usize; 3]) -> Result<Self> {
        let mut out = Self::empty(dims, self.voxel_size, self.num_classes)?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let s = [lo[0] + x as i64, lo[1] + y as i64, lo[2] + z as i64];
                    if s.iter().zip(&self.dims).all(|(&c, &d)| c >= 0 && (c as usize) < d) {
                        let l = self.get(s[0] as usize, s[1] as usize, s[2] as usize);
                        out.labels[linear_index(dims, x, y, z)] = l;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        let n = check_dims(dims)?;
        if bits.len() != n {
            return Err(Error::shape("OccupancyGrid::new", &dims, &[bits.len()]));
        }
        Ok(OccupancyGrid { dims, bits })
    }

    pub fn empty(dims: [usize; 3]) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(OccupancyGrid {
            dims,
            bits: vec![false; n],
        })
    }

    pub fn full(dims: [usize; 3]) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(OccupancyGrid {
            dims,
            bits: vec![true; n],
        })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut g = Self::empty(dims)?;
        for (i, b) in g.bits.iter_mut().enumerate() {
            let [x, y, z] = coords_of(dims, i);
            *b = f(x, y, z);
        }
        Ok(g)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Occupied cells in x-fastest order.
    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let dims = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| coords_of(dims, i))
    }

    /// True when every occupied cell of `other` is occupied here.
    pub fn contains(&self, other: &OccupancyGrid) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    /// `(x, y, z, intensity)`, meters.
    pub points: Vec<[f32; 4]>,
    /// World position of the grid corner.
    pub origin: [f64; 3],
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Self {
        PointCloud {
            points,
            origin: [0.0; 3],
        }
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let dims = [3, 4, 5];
        for i in 0..60 {
            let [x, y, z] = coords_of(dims, i);
            assert_eq!(linear_index(dims, x, y, z), i);
        }
        assert_eq!(linear_index(dims, 1, 0, 0), 1);
        assert_eq!(linear_index(dims, 0, 1, 0), 3);
        assert_eq!(linear_index(dims, 0, 0, 1), 12);
    }

    #[test]
    fn grid_rejects_bad_labels_and_dims() {
        assert!(SemanticVoxelGrid::new([2, 1, 1], 0.2, 3, vec![0, 3]).is_err());
        assert!(SemanticVoxelGrid::new([0, 1, 1], 0.2, 3, vec![]).is_err());
        assert!(SemanticVoxelGrid::new([2, 1, 1], 0.2, 3, vec![0]).is_err());
    }

    #[test]
    fn window_pads_with_empty() {
        let g = SemanticVoxelGrid::new([2, 1, 1], 1.0, 3, vec![1, 2]).unwrap();
        let w = g.window([1, 0, 0], [2, 1, 1]).unwrap();
        assert_eq!(w.labels(), &[2, 0]);
    }
}
