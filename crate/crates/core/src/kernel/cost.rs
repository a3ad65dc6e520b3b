//! Exact storage and multiplication counts.
//!
//! Multiplication counts mirror the loops in `contract`: projecting a stored core
//! against the input costs `I * block` (`block = R*J` for CP, `a*b*J` for a TT/TR
//! link), CP then spends `p - 1` products per `(r, j)`, and TT/TR chain `p - 1`
//! bond-matrix products per output channel. Additions are not counted.
//!
//! With `c = FLOP_BOUND_CONSTANT` the counts satisfy `mults <= c * p * R * I * J`
//! for CP and `mults <= c * p * (R^2 I + R^3) * J` for TT/TR, `R` the largest rank.

use super::{KernelFormat, TnKernel};

pub const FLOP_BOUND_CONSTANT: u64 = 2;

impl TnKernel {
    /// Stored scalar count (each shared tensor counted once).
    pub fn param_count(&self) -> u64 {
        self.cores.iter().map(|c| c.len() as u64).sum()
    }

    /// Multiplications performed by one call to `contract`.
    pub fn flop_count(&self) -> u64 {
        let (i_dim, j_dim, p) = (self.in_dim as u64, self.out_dim as u64, self.order as u64);
        let mut seen = vec![false; self.cores.len()];
        let mut total = 0u64;
        for k in 0..self.order {
            let s = self.stored_index(k);
            if !seen[s] {
                seen[s] = true;
                total += i_dim * self.block_len(k) as u64;
            }
        }
        match self.format {
            KernelFormat::Cp => total + self.ranks[0] as u64 * j_dim * (p - 1),
            KernelFormat::Tt | KernelFormat::Tr => {
                let r0 = self.bond_dims(0).0 as u64;
                let chain: u64 = (1..self.order)
                    .map(|k| {
                        let (a, b) = self.bond_dims(k);
                        r0 * a as u64 * b as u64
                    })
                    .sum();
                total + j_dim * chain
            }
        }
    }

    /// The asymptotic budget `c * p * R * I * J` (CP) or `c * p * (R^2 I + R^3) * J` (TT/TR).
    pub fn flop_bound(&self) -> u64 {
        let (i, j, p) = (self.in_dim as u64, self.out_dim as u64, self.order as u64);
        let r = self.max_rank() as u64;
        let c = FLOP_BOUND_CONSTANT;
        match self.format {
            KernelFormat::Cp => c * p * r * i * j,
            KernelFormat::Tt | KernelFormat::Tr => c * p * (r * r * i + r * r * r) * j,
        }
    }
}
