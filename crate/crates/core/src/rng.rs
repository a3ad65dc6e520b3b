//! Seeded, platform-independent random source.
//!
//! Backed by ChaCha8, a counter-based generator: a `(seed, stream)` pair fixes
//! the whole sequence, so independent consumers can be handed their own stream
//! with [`Rng::split`] without perturbing each other.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `stream`, derived only from the seed.
    pub fn split(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform sample in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Tensor of i.i.d. uniform samples in `[lo, hi)`.
pub fn rng_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<DenseTensor> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "uniform interval [{lo}, {hi}) is empty or not finite"
        )));
    }
    let len = crate::tensor::checked_len(shape)?;
    let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
    DenseTensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = rng_uniform(&mut Rng::new(42), &[2], 0.0, 1.0).unwrap();
        let b = rng_uniform(&mut Rng::new(42), &[2], 0.0, 1.0).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn empty_interval_rejected() {
        let err = rng_uniform(&mut Rng::new(0), &[3], 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(rng_uniform(&mut Rng::new(0), &[3], 1.0, -1.0).is_err());
    }

    #[test]
    fn sample_mean_near_zero() {
        let t = rng_uniform(&mut Rng::new(7), &[1000], -1.0, 1.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn split_streams_are_independent_of_parent_use() {
        let mut parent = Rng::new(9);
        let s1 = parent.split(3).next_f64();
        parent.next_f64();
        parent.next_f64();
        let s2 = parent.split(3).next_f64();
        assert_eq!(s1, s2);
        assert_ne!(parent.split(4).next_f64(), s1);
    }
}
