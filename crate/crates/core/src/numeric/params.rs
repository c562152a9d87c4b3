//! Named parameter storage and the `OLP1` checkpoint container.
//!
//! Layout (little-endian): magic `OLP1`, `u32` version, then repeated
//! records of `u32` name length, name bytes, `u32` rank, `u32` extents,
//! and `f64` data. Records are written in name order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OLP1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Moves every entry of `other` in under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: ParamStore<T>) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(buf);
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: "OLP1".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(version));
        }
        let mut tensors = BTreeMap::new();
        while !cur.at_end() {
            let len = cur.u32()? as usize;
            let name_at = cur.pos;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Malformed(format!("parameter name at byte {name_at} is not utf-8")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(T::lit(cur.f64()?));
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ParamStore { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::write_atomic(path, &self.to_bytes()).map_err(|e| e.at(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.at(path))
    }
}

/// Little-endian reader over a byte slice that reports truncation offsets.
pub(crate) struct ByteCursor<'a> {
    buf: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteCursor { buf, pos: 0 }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len().saturating_sub(self.pos)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                offset: self.pos as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            entries in proptest::collection::btree_map(
                "[a-z.]{1,12}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), r * c)
                        .prop_map(move |d| (vec![r, c], d))
                }),
                0..6,
            )
        ) {
            let mut store = ParamStore::<f64>::new();
            for (k, (shape, data)) in &entries {
                store.insert(k.clone(), Tensor::new(shape.clone(), data.clone()).unwrap());
            }
            let bytes = store.to_bytes();
            let back = ParamStore::<f64>::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for (k, t) in store.iter() {
                let b = back.get(k).unwrap();
                prop_assert_eq!(b.shape(), t.shape());
                for (x, y) in b.data().iter().zip(t.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = store.to_bytes();
        assert_eq!(&b[0..4], b"OLP1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        // name len, name, rank, extent, 2 doubles
        assert_eq!(b.len(), 8 + 4 + 1 + 4 + 4 + 16);
        assert_eq!(f64::from_le_bytes(b[b.len() - 8..].try_into().unwrap()), -2.0);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = ParamStore::<f64>::from_bytes(b"XXXX\x01\0\0\0").unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = store.to_bytes();
        let err = ParamStore::<f64>::from_bytes(&b[..b.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
    }
}
