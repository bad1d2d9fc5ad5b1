//! Reproducible random instances for verification and benchmarks.
//!
//! The stream is xoshiro256++ seeded through SplitMix64 from a `u64` seed.
//! Uniform reals in `[-1, 1)` are `2·(u >> 11)·2⁻⁵³ − 1` for each 64-bit output
//! `u`, and integers below `n` are `(u · n) >> 64`. Any implementation of those
//! two published generators reproduces the same instances.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::DenseTensor;

#[derive(Debug, Clone)]
pub struct InstanceRng(Xoshiro256PlusPlus);

impl InstanceRng {
    pub fn new(seed: u64) -> Self {
        InstanceRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn uniform(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform signed integer in `lo..=hi`.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        lo + self.below((hi - lo + 1) as usize) as i64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Tensor with entries uniform in `[-1, 1)`.
    pub fn tensor(&mut self, dims: &[usize]) -> DenseTensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.uniform()).collect();
        DenseTensor::from_dims(dims, data).expect("positive dims")
    }

    /// Dense matrix whose entries are nonzero with probability `density`.
    pub fn sparse_matrix(&mut self, rows: usize, cols: usize, density: f64) -> DenseTensor {
        let data = (0..rows * cols)
            .map(|_| {
                let keep = self.chance(density);
                let v = self.uniform();
                if keep {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        DenseTensor::matrix(rows, cols, data).expect("positive dims")
    }
}
