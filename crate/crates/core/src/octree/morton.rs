use crate::error::{Error, Result};

/// Deepest level whose codes fit in 63 bits.
pub const MAX_DEPTH: u32 = 21;

/// A node address: interleaved coordinate bits at a given depth.
///
/// Bit `3i` holds bit `i` of x, bit `3i + 1` of y and bit `3i + 2` of z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MortonKey {
    pub depth: u32,
    pub code: u64,
}

impl MortonKey {
    pub fn parent(self) -> MortonKey {
        debug_assert!(self.depth > 0);
        MortonKey {
            depth: self.depth - 1,
            code: self.code >> 3,
        }
    }

    pub fn child(self, octant: u64) -> MortonKey {
        MortonKey {
            depth: self.depth + 1,
            code: self.code << 3 | octant,
        }
    }

    /// Code of the node's minimum corner at `depth >= self.depth`.
    pub fn code_at(self, depth: u32) -> u64 {
        self.code << (3 * (depth - self.depth))
    }

    pub fn coords(self) -> [u32; 3] {
        decode_code(self.code)
    }
}

#[inline]
fn spread(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x as u32
}

/// Interleaves without range checks; callers guarantee `< 2^21`.
#[inline]
pub(crate) fn encode_code(x: u32, y: u32, z: u32) -> u64 {
    spread(x) | spread(y) << 1 | spread(z) << 2
}

#[inline]
pub(crate) fn decode_code(code: u64) -> [u32; 3] {
    [compact(code), compact(code >> 1), compact(code >> 2)]
}

pub fn morton_encode(x: u32, y: u32, z: u32, depth: u32) -> Result<MortonKey> {
    if depth > MAX_DEPTH || [x, y, z].iter().any(|&c| (c as u64) >> depth != 0) {
        return Err(Error::CoordinateRange {
            coord: [x, y, z],
            depth,
        });
    }
    Ok(MortonKey {
        depth,
        code: encode_code(x, y, z),
    })
}

pub fn morton_decode(key: MortonKey) -> [u32; 3] {
    key.coords()
}

/// Smallest depth whose cube side `2^depth` covers every extent.
pub fn depth_for_dims(dims: [usize; 3]) -> u32 {
    let m = dims.iter().copied().max().unwrap_or(1).max(1);
    m.next_power_of_two().trailing_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(x: u32, y: u32, z: u32, depth: u32) -> u64 {
        let mut code = 0u64;
        for i in 0..depth {
            code |= ((x >> i & 1) as u64) << (3 * i);
            code |= ((y >> i & 1) as u64) << (3 * i + 1);
            code |= ((z >> i & 1) as u64) << (3 * i + 2);
        }
        code
    }

    #[test]
    fn hand_cases() {
        assert_eq!(morton_encode(0, 0, 0, 3).unwrap().code, 0);
        assert_eq!(morton_encode(1, 1, 1, 1).unwrap().code, 7);
        assert_eq!(morton_encode(1, 2, 3, 2).unwrap().code, 53);
        assert_eq!(reference(1, 2, 3, 2), 53);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            morton_encode(4, 0, 0, 2),
            Err(Error::CoordinateRange { coord: [4, 0, 0], depth: 2 })
        ));
        assert!(morton_encode(0, 0, 0, 22).is_err());
        assert!(morton_encode((1 << 21) - 1, 0, 0, 21).is_ok());
    }

    #[test]
    fn depth_for_dims_cases() {
        assert_eq!(depth_for_dims([1, 1, 1]), 0);
        assert_eq!(depth_for_dims([2, 1, 1]), 1);
        assert_eq!(depth_for_dims([256, 256, 32]), 8);
        assert_eq!(depth_for_dims([5, 3, 3]), 3);
    }

    proptest! {
        #[test]
        fn matches_bitwise_reference(x in 0u32..(1 << 21), y in 0u32..(1 << 21), z in 0u32..(1 << 21)) {
            let k = morton_encode(x, y, z, 21).unwrap();
            prop_assert_eq!(k.code, reference(x, y, z, 21));
            prop_assert_eq!(morton_decode(k), [x, y, z]);
        }
    }
}
