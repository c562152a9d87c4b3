//! Binary codecs: `SVX1` label grids, `OCC1` occupancy masks and raw
//! packed-float LiDAR scans. Everything is little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::ByteCursor;
use crate::voxel::{OccupancyGrid, PointCloud, SemanticVoxelGrid};
use crate::write_atomic;

pub const SVOX_MAGIC: &[u8; 4] = b"SVX1";
pub const SVOX_VERSION: u32 = 1;
pub const OCC_MAGIC: &[u8; 4] = b"OCC1";

const SVOX_HEADER: usize = 4 + 4 + 12 + 4 + 2 + 2;

fn read_magic(cur: &mut ByteCursor<'_>, expected: &[u8; 4]) -> Result<()> {
    let found = cur.take(4).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(expected).into_owned(),
        found: String::from_utf8_lossy(&[]).into_owned(),
    })?;
    if found != expected {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn read_dims(cur: &mut ByteCursor<'_>) -> Result<[usize; 3]> {
    let at = cur.pos;
    let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    if dims.contains(&0) {
        return Err(Error::Malformed(format!("zero grid extent {dims:?} at byte {at}")));
    }
    Ok(dims)
}

fn trailing(cur: &ByteCursor<'_>) -> Result<()> {
    if cur.at_end() {
        Ok(())
    } else {
        Err(Error::Malformed(format!(
            "{} trailing bytes at byte {}",
            cur.remaining(),
            cur.pos
        )))
    }
}

pub fn encode_svox(grid: &SemanticVoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(SVOX_HEADER + 2 * grid.len());
    out.extend_from_slice(SVOX_MAGIC);
    out.extend_from_slice(&SVOX_VERSION.to_le_bytes());
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&grid.voxel_size().to_le_bytes());
    out.extend_from_slice(&grid.num_classes().to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for &l in grid.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_svox(buf: &[u8]) -> Result<SemanticVoxelGrid> {
    let mut cur = ByteCursor::new(buf);
    read_magic(&mut cur, SVOX_MAGIC)?;
    let version = cur.u32()?;
    if version != SVOX_VERSION {
        return Err(Error::Version(version));
    }
    let dims = read_dims(&mut cur)?;
    let voxel_size = cur.f32()?;
    let num_classes = cur.u16()?;
    let _reserved = cur.u16()?;
    if num_classes == 0 {
        return Err(Error::Malformed("num_classes is 0 at byte 24".into()));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Malformed(format!("grid dims {dims:?} overflow")))?;
    if cur.remaining() / 2 < n {
        return Err(Error::Truncated {
            offset: (cur.pos + cur.remaining() - cur.remaining() % 2) as u64,
        });
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = cur.pos as u64;
        let label = cur.u16()?;
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes,
                offset,
            });
        }
        labels.push(label);
    }
    trailing(&cur)?;
    SemanticVoxelGrid::new(dims, voxel_size, num_classes, labels)
}

pub fn load_svox(path: impl AsRef<Path>) -> Result<SemanticVoxelGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_svox(&bytes).map_err(|e| e.at(path))
}

pub fn save_svox(grid: &SemanticVoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_svox(grid)).map_err(|e| e.at(path))
}

/// Packs booleans LSB-first into bytes.
pub(crate) fn pack_bits(bits: impl ExactSizeIterator<Item = bool>) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, b) in bits.enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

pub fn encode_occupancy(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.len().div_ceil(8));
    out.extend_from_slice(OCC_MAGIC);
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&pack_bits(grid.bits().iter().copied()));
    out
}

pub fn decode_occupancy(buf: &[u8]) -> Result<OccupancyGrid> {
    let mut cur = ByteCursor::new(buf);
    read_magic(&mut cur, OCC_MAGIC)?;
    let dims = read_dims(&mut cur)?;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Malformed(format!("grid dims {dims:?} overflow")))?;
    let bytes = cur.take(n.div_ceil(8))?;
    trailing(&cur)?;
    OccupancyGrid::new(dims, unpack_bits(bytes, n))
}

pub fn load_occupancy(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_occupancy(&bytes).map_err(|e| e.at(path))
}

pub fn save_occupancy(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_occupancy(grid)).map_err(|e| e.at(path))
}

pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    cloud
        .points
        .iter()
        .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Parses packed `(x, y, z, intensity)` quadruples. The origin is left at
/// zero; callers set it explicitly.
pub fn decode_scan(buf: &[u8]) -> Result<PointCloud> {
    if !buf.len().is_multiple_of(16) {
        return Err(Error::Truncated {
            offset: (buf.len() - buf.len() % 16) as u64,
        });
    }
    let mut points = Vec::with_capacity(buf.len() / 16);
    for (k, chunk) in buf.chunks_exact(16).enumerate() {
        let mut p = [0f32; 4];
        for (i, v) in p.iter_mut().enumerate() {
            *v = f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        }
        if !p[..3].iter().all(|v| v.is_finite()) {
            return Err(Error::Malformed(format!(
                "non-finite point coordinate at byte {}",
                16 * k
            )));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_scan(&bytes).map_err(|e| e.at(path))
}

pub fn save_scan(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_scan(cloud)).map_err(|e| e.at(path))
}
