//! Counter-based random streams.
//!
//! A draw is fully addressed by `(seed, stream, index)`: each stream is a
//! ChaCha8 keystream selected by `set_stream`, so per-step and per-node
//! noise does not depend on the order in which streams are consumed.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numeric::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rng {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Rng { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream identified by `tag`; distinct tags give independent streams.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Child stream from a string label.
    pub fn derive_str(&self, label: &str) -> Rng {
        // FNV-1a keeps the label→stream map stable across platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.derive(h)
    }

    /// Sequential generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut g = ChaCha8Rng::seed_from_u64(self.seed);
        g.set_stream(self.stream);
        g
    }

    /// I.i.d. standard normal tensor.
    pub fn normal<T: Real>(&self, shape: &[usize]) -> Tensor<T> {
        let mut g = self.generator();
        Tensor::from_fn(shape, |_| {
            let x: f64 = g.sample(StandardNormal);
            T::lit(x)
        })
    }

    /// I.i.d. uniform tensor on `[lo, hi)`.
    pub fn uniform<T: Real>(&self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let mut g = self.generator();
        Tensor::from_fn(shape, |_| T::lit(g.gen_range(lo..hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_is_bit_identical() {
        let a: Tensor<f64> = Rng::with_stream(7, 3).normal(&[64]);
        let b: Tensor<f64> = Rng::with_stream(7, 3).normal(&[64]);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let a: Tensor<f64> = Rng::with_stream(7, 3).normal(&[16]);
        let b: Tensor<f64> = Rng::with_stream(7, 4).normal(&[16]);
        assert_ne!(a, b);
        let r = Rng::new(1);
        assert_ne!(r.derive(0).normal::<f64>(&[8]), r.derive(1).normal::<f64>(&[8]));
    }

    #[test]
    fn prefix_of_a_stream_is_stable() {
        let long: Tensor<f64> = Rng::with_stream(11, 0).normal(&[100]);
        let short: Tensor<f64> = Rng::with_stream(11, 0).normal(&[10]);
        assert_eq!(&long.data()[..10], short.data());
    }

    #[test]
    fn million_draws_have_standard_moments() {
        let x: Tensor<f64> = Rng::with_stream(2024, 1).normal(&[1_000_000]);
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
