//! Factorized p-th order kernels `W[i1,..,ip,j]` in CP, tensor-train and tensor-ring form.
//!
//! Core layouts (all row-major, input index first, output index last):
//!
//! | format | logical core `k`                       | notes                                   |
//! |--------|----------------------------------------|-----------------------------------------|
//! | CP     | `[I, R, J]`                            | one rank index shared by every core     |
//! | TT     | `[I, r1, J]`, `[I, r_{k-1}, r_k, J]`, `[I, r_{p-1}, J]` | `p = 1` stores a single `[I, J]` core |
//! | TR     | `[I, r_{k-1}, r_k, J]` with `r_p = r_0` | closed with a trace                     |
//!
//! With `shared = true` a single tensor backs every logical core of the same shape
//! class: one core for CP and (uniform-rank) TR, and left boundary / interior / right
//! boundary for TT.
//!
//! Internally TT and TR are evaluated the same way: every core is viewed as a
//! `[I, a, b, J]` block (TT boundaries get a unit bond) and the per-output chain of
//! projected matrices is closed with a trace.

mod contract;
mod cost;
mod dense;

pub use contract::Workspace;
pub use cost::FLOP_BOUND_CONSTANT;
pub use dense::DENSE_ENTRY_LIMIT;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{read_u32, read_u8, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFormat {
    Cp,
    Tt,
    Tr,
}

impl KernelFormat {
    pub const ALL: [KernelFormat; 3] = [KernelFormat::Cp, KernelFormat::Tt, KernelFormat::Tr];

    pub fn tag(self) -> u8 {
        match self {
            KernelFormat::Cp => 0,
            KernelFormat::Tt => 1,
            KernelFormat::Tr => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(KernelFormat::Cp),
            1 => Ok(KernelFormat::Tt),
            2 => Ok(KernelFormat::Tr),
            t => Err(Error::format(format!("unknown kernel format tag {t}"))),
        }
    }

    /// Number of rank entries this format expects for order `p`.
    pub fn rank_len(self, p: usize) -> usize {
        match self {
            KernelFormat::Cp => 1,
            KernelFormat::Tt => p.saturating_sub(1),
            KernelFormat::Tr => p,
        }
    }
}

impl fmt::Display for KernelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFormat::Cp => "cp",
            KernelFormat::Tt => "tt",
            KernelFormat::Tr => "tr",
        })
    }
}

impl FromStr for KernelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(KernelFormat::Cp),
            "tt" => Ok(KernelFormat::Tt),
            "tr" => Ok(KernelFormat::Tr),
            other => Err(Error::invalid(format!("unknown kernel format {other:?}"))),
        }
    }
}

/// How initial core values are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePolicy {
    /// Uniform in `[-s, s]` with `s = (1/I)^(1/p) * R^(-1/(2p))`, where `R` is the
    /// number of rank terms summed in the reconstruction (product of the bond ranks
    /// for TT/TR).
    VariancePreserving,
    /// Uniform in `[-s, s]` for the given half-width.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TnKernel {
    format: KernelFormat,
    order: usize,
    in_dim: usize,
    out_dim: usize,
    ranks: Vec<usize>,
    shared: bool,
    cores: Vec<DenseTensor>,
}

impl TnKernel {
    /// Builds a kernel with randomly initialized cores.
    pub fn init(
        format: KernelFormat,
        order: usize,
        in_dim: usize,
        out_dim: usize,
        ranks: &[usize],
        shared: bool,
        rng: &mut Rng,
        scale: ScalePolicy,
    ) -> Result<Self> {
        let mut kernel = Self::zeros(format, order, in_dim, out_dim, ranks, shared)?;
        let s = match scale {
            ScalePolicy::VariancePreserving => kernel.variance_preserving_scale(),
            ScalePolicy::Uniform(s) => s,
        };
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::invalid(format!("initial scale {s} is not a finite half-width")));
        }
        for core in &mut kernel.cores {
            for v in core.data_mut() {
                *v = rng.uniform(-s, s);
            }
        }
        Ok(kernel)
    }

    /// Kernel with every core entry zero.
    pub fn zeros(
        format: KernelFormat,
        order: usize,
        in_dim: usize,
        out_dim: usize,
        ranks: &[usize],
        shared: bool,
    ) -> Result<Self> {
        Self::check_config(format, order, in_dim, out_dim, ranks, shared)?;
        let mut kernel = TnKernel {
            format,
            order,
            in_dim,
            out_dim,
            ranks: ranks.to_vec(),
            shared,
            cores: Vec::new(),
        };
        kernel.cores = kernel
            .stored_shapes()
            .iter()
            .map(|s| DenseTensor::zeros(s))
            .collect::<Result<_>>()?;
        Ok(kernel)
    }

    /// Builds a kernel from explicit stored cores, validating every shape.
    pub fn from_cores(
        format: KernelFormat,
        order: usize,
        in_dim: usize,
        out_dim: usize,
        ranks: &[usize],
        shared: bool,
        cores: Vec<DenseTensor>,
    ) -> Result<Self> {
        let mut kernel = Self::zeros(format, order, in_dim, out_dim, ranks, shared)?;
        if cores.len() != kernel.cores.len() {
            return Err(Error::invalid(format!(
                "expected {} stored cores, got {}",
                kernel.cores.len(),
                cores.len()
            )));
        }
        for (s, (want, got)) in kernel.cores.iter().zip(&cores).enumerate() {
            if want.shape() != got.shape() {
                return Err(Error::invalid(format!(
                    "stored core {s}: expected shape {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        kernel.cores = cores;
        Ok(kernel)
    }

    fn check_config(
        format: KernelFormat,
        order: usize,
        in_dim: usize,
        out_dim: usize,
        ranks: &[usize],
        shared: bool,
    ) -> Result<()> {
        if order == 0 {
            return Err(Error::invalid("kernel order must be at least 1"));
        }
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("kernel dimensions must be positive"));
        }
        let want = format.rank_len(order);
        if ranks.len() != want {
            return Err(Error::invalid(format!(
                "{format} kernel of order {order} needs {want} ranks, got {}",
                ranks.len()
            )));
        }
        if ranks.contains(&0) {
            return Err(Error::invalid("ranks must be at least 1"));
        }
        if shared {
            match format {
                KernelFormat::Cp => {}
                KernelFormat::Tr => {
                    if ranks.windows(2).any(|w| w[0] != w[1]) {
                        return Err(Error::invalid(
                            "shared TR kernels need uniform ranks",
                        ));
                    }
                }
                KernelFormat::Tt => {
                    // interior cores use ranks[0..=p-2]; they are all one shape only if
                    // there is a single interior core or the ranks are uniform
                    if order >= 4 && ranks.windows(2).any(|w| w[0] != w[1]) {
                        return Err(Error::invalid(
                            "shared TT kernels of order >= 4 need uniform ranks",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn format(&self) -> KernelFormat {
        self.format
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    /// Distinct stored tensors, in storage order.
    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.cores
    }

    /// Largest bond rank.
    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(1)
    }

    /// Which stored tensor backs logical core `k`.
    pub fn stored_index(&self, k: usize) -> usize {
        debug_assert!(k < self.order);
        if !self.shared {
            return k;
        }
        match self.format {
            KernelFormat::Cp | KernelFormat::Tr => 0,
            KernelFormat::Tt => {
                if k == 0 {
                    0
                } else if k + 1 == self.order {
                    if self.order == 2 {
                        1
                    } else {
                        2
                    }
                } else {
                    1
                }
            }
        }
    }

    /// Shape of logical core `k` as documented in the module table.
    pub fn logical_shape(&self, k: usize) -> Vec<usize> {
        let (i, j, p) = (self.in_dim, self.out_dim, self.order);
        match self.format {
            KernelFormat::Cp => vec![i, self.ranks[0], j],
            KernelFormat::Tt => {
                if p == 1 {
                    vec![i, j]
                } else if k == 0 {
                    vec![i, self.ranks[0], j]
                } else if k + 1 == p {
                    vec![i, self.ranks[p - 2], j]
                } else {
                    vec![i, self.ranks[k - 1], self.ranks[k], j]
                }
            }
            KernelFormat::Tr => vec![i, self.ranks[k], self.ranks[(k + 1) % p], j],
        }
    }

    /// Left/right bond sizes of logical core `k` viewed as a chain link (TT/TR only).
    pub(crate) fn bond_dims(&self, k: usize) -> (usize, usize) {
        let p = self.order;
        match self.format {
            KernelFormat::Cp => (1, 1),
            KernelFormat::Tt => {
                let left = if k == 0 { 1 } else { self.ranks[k - 1] };
                let right = if k + 1 == p { 1 } else { self.ranks[k] };
                (left, right)
            }
            KernelFormat::Tr => (self.ranks[k], self.ranks[(k + 1) % p]),
        }
    }

    /// Entries per input index `i` in a stored core: `R*J` for CP, `a*b*J` for chains.
    pub(crate) fn block_len(&self, k: usize) -> usize {
        match self.format {
            KernelFormat::Cp => self.ranks[0] * self.out_dim,
            _ => {
                let (a, b) = self.bond_dims(k);
                a * b * self.out_dim
            }
        }
    }

    fn stored_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes: Vec<Option<Vec<usize>>> = Vec::new();
        for k in 0..self.order {
            let s = self.stored_index(k);
            if shapes.len() <= s {
                shapes.resize(s + 1, None);
            }
            if shapes[s].is_none() {
                shapes[s] = Some(self.logical_shape(k));
            }
        }
        shapes.into_iter().map(|s| s.expect("every stored slot is used")).collect()
    }

    /// Number of rank terms summed in the reconstruction.
    fn rank_terms(&self) -> f64 {
        match self.format {
            KernelFormat::Cp => self.ranks[0] as f64,
            _ => self.ranks.iter().map(|&r| r as f64).product(),
        }
    }

    pub fn variance_preserving_scale(&self) -> f64 {
        let p = self.order as f64;
        (1.0 / self.in_dim as f64).powf(1.0 / p) * self.rank_terms().powf(-1.0 / (2.0 * p))
    }

    /// Serializes header (format tag `u8`, `p`, `I`, `J`, rank count and ranks as
    /// `u32` LE, shared flag `u8`) followed by each stored core as a tensor snapshot.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&[self.format.tag()])?;
        for v in [self.order, self.in_dim, self.out_dim, self.ranks.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &r in &self.ranks {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        w.write_all(&[self.shared as u8])?;
        for core in &self.cores {
            core.write_snapshot(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let format = KernelFormat::from_tag(read_u8(r)?)?;
        let order = read_u32(r)? as usize;
        let in_dim = read_u32(r)? as usize;
        let out_dim = read_u32(r)? as usize;
        let n_ranks = read_u32(r)? as usize;
        if n_ranks > 1024 {
            return Err(Error::format(format!("implausible rank count {n_ranks}")));
        }
        let ranks = (0..n_ranks)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let shared = match read_u8(r)? {
            0 => false,
            1 => true,
            b => return Err(Error::format(format!("bad shared flag {b}"))),
        };
        let template = Self::zeros(format, order, in_dim, out_dim, &ranks, shared)
            .map_err(|e| Error::format(e.to_string()))?;
        let cores = (0..template.cores.len())
            .map(|_| DenseTensor::read_snapshot(r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_cores(format, order, in_dim, out_dim, &ranks, shared, cores)
            .map_err(|e| Error::format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to Vec cannot fail");
        out
    }
}

/// Convenience constructor for the common `init` call with default scaling.
pub fn init_kernel(
    format: KernelFormat,
    order: usize,
    in_dim: usize,
    out_dim: usize,
    ranks: &[usize],
    shared: bool,
    rng: &mut Rng,
    scale: ScalePolicy,
) -> Result<TnKernel> {
    TnKernel::init(format, order, in_dim, out_dim, ranks, shared, rng, scale)
}

/// Uniform rank list of the right length for `format` and `order`.
pub fn uniform_ranks(format: KernelFormat, order: usize, rank: usize) -> Vec<usize> {
    vec![rank; format.rank_len(order)]
}
