//! `OCT1` container: magic, `u32` max depth, then per depth a `u32` node
//! count, the sorted `u64` codes and the bit-packed split flags, followed by
//! the bit-packed occupancy of all leaves in depth-then-code order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::ByteCursor;
use crate::octree::{Level, Octree, MAX_DEPTH};
use crate::voxel::{pack_bits, unpack_bits};
use crate::write_atomic;

pub const OCTREE_MAGIC: &[u8; 4] = b"OCT1";

pub fn encode_octree(t: &Octree) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(OCTREE_MAGIC);
    out.extend_from_slice(&t.max_depth().to_le_bytes());
    for l in t.levels() {
        out.extend_from_slice(&(l.len() as u32).to_le_bytes());
        for c in l.codes() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(l.split().iter().copied()));
    }
    let occ: Vec<bool> = t.leaves().map(|l| l.occupied).collect();
    out.extend_from_slice(&pack_bits(occ.into_iter()));
    out
}

pub fn decode_octree(buf: &[u8]) -> Result<Octree> {
    let mut cur = ByteCursor::new(buf);
    let magic = cur.take(4).unwrap_or(&[]);
    if magic != OCTREE_MAGIC {
        return Err(Error::BadMagic {
            expected: "OCT1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let max_depth = cur.u32()?;
    if max_depth > MAX_DEPTH {
        return Err(Error::Malformed(format!("max depth {max_depth} at byte 4 exceeds {MAX_DEPTH}")));
    }
    let mut levels = Vec::with_capacity(max_depth as usize + 1);
    for _ in 0..=max_depth {
        let n = cur.u32()? as usize;
        if n.checked_mul(8).is_none_or(|b| b > cur.remaining()) {
            return Err(Error::Truncated {
                offset: cur.pos as u64,
            });
        }
        let codes = (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let split = unpack_bits(cur.take(n.div_ceil(8))?, n);
        levels.push(Level {
            occupied: split.clone(),
            codes,
            split,
        });
    }
    let leaves: usize = levels.iter().map(|l| l.split.iter().filter(|&&s| !s).count()).sum();
    let occ = unpack_bits(cur.take(leaves.div_ceil(8))?, leaves);
    if !cur.at_end() {
        return Err(Error::Malformed(format!("{} trailing bytes at byte {}", cur.remaining(), cur.pos)));
    }
    let mut it = occ.into_iter();
    for l in &mut levels {
        for (o, &s) in l.occupied.iter_mut().zip(&l.split) {
            if !s {
                *o = it.next().unwrap();
            }
        }
    }
    Octree::from_levels(levels)
}

pub fn load_octree(path: impl AsRef<Path>) -> Result<Octree> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_octree(&bytes).map_err(|e| e.at(path))
}

pub fn save_octree(t: &Octree, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_octree(t)).map_err(|e| e.at(path))
}
