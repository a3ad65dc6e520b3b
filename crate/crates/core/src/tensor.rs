//! Dense row-major tensors and the brute-force contractions used as ground truth.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Snapshot header: magic bytes followed by a version byte.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"T1CL";
pub const SNAPSHOT_VERSION: u8 = 0x01;

/// n-dimensional array of `f64`, row-major (last index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor shape must have at least one axis"));
    }
    let mut len = 1usize;
    for &d in shape {
        if d == 0 {
            return Err(Error::invalid(format!("zero-length axis in shape {shape:?}")));
        }
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::Capacity(format!("shape {shape:?} overflows usize")))?;
    }
    Ok(len)
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&shape)?;
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at flat index {pos}")));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.iter_mut().for_each(|v| *v = value);
        Ok(t)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let len = checked_len(&shape)?;
        if len != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(DenseTensor {
            shape,
            data: self.data,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the binary snapshot: magic, version, `u32` rank, `u32` dims, `f64` values (all LE).
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&[SNAPSHOT_VERSION])?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(r, &mut magic)?;
        if &magic[..4] != SNAPSHOT_MAGIC {
            return Err(Error::format("bad tensor snapshot magic"));
        }
        if magic[4] != SNAPSHOT_VERSION {
            return Err(Error::format(format!(
                "unsupported tensor snapshot version {}",
                magic[4]
            )));
        }
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > 64 {
            return Err(Error::format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = checked_len(&shape).map_err(|e| Error::format(e.to_string()))?;
        let mut data = Vec::with_capacity(len.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..len {
            read_exact(r, &mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        DenseTensor::new(shape, data).map_err(|e| Error::format(e.to_string()))
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * self.shape.len() + 8 * self.data.len());
        self.write_snapshot(&mut out).expect("writing to Vec cannot fail");
        out
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(format!("truncated stream: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

/// `result[i1,..,ip] = x[i1] * .. * x[ip]`.
pub fn outer_power(x: &DenseTensor, p: usize) -> Result<DenseTensor> {
    if p == 0 {
        return Err(Error::invalid("outer power order must be at least 1"));
    }
    if x.rank() != 1 {
        return Err(Error::invalid(format!(
            "outer power expects a vector, got shape {:?}",
            x.shape()
        )));
    }
    let c = x.len();
    let mut data = x.data().to_vec();
    for _ in 1..p {
        let mut next = Vec::with_capacity(data.len() * c);
        for &a in &data {
            next.extend(x.data().iter().map(|&b| a * b));
        }
        data = next;
    }
    DenseTensor::new(vec![c; p], data)
}

/// Contracts the first `times` axes of `w` (shape `[C,..,C,J]`) with the same vector `x`.
///
/// Axes are eliminated front to back, so the cost is `J * (C^p + C^(p-1) + .. + C)`
/// multiplications; see [`dense_mult_count`].
pub fn contract_last(w: &DenseTensor, x: &DenseTensor, times: usize) -> Result<DenseTensor> {
    if times == 0 {
        return Err(Error::invalid("contraction count must be at least 1"));
    }
    if x.rank() != 1 {
        return Err(Error::invalid("contract_last expects a vector input"));
    }
    if w.rank() != times + 1 {
        return Err(Error::invalid(format!(
            "kernel rank {} does not match {} contractions plus an output axis",
            w.rank(),
            times
        )));
    }
    let c = x.len();
    if w.shape()[..times].iter().any(|&d| d != c) {
        return Err(Error::invalid(format!(
            "kernel shape {:?} incompatible with input length {c}",
            w.shape()
        )));
    }
    let j = w.shape()[times];
    let mut cur = w.data().to_vec();
    for _ in 0..times {
        let stride = cur.len() / c;
        let mut next = vec![0.0; stride];
        for (i, &xi) in x.data().iter().enumerate() {
            let row = &cur[i * stride..(i + 1) * stride];
            for (n, &v) in next.iter_mut().zip(row) {
                *n += xi * v;
            }
        }
        cur = next;
    }
    debug_assert_eq!(cur.len(), j);
    DenseTensor::new(vec![j], cur)
}

/// Multiplications performed by [`contract_last`] on a `[I; p] x J` kernel.
pub fn dense_mult_count(p: usize, in_dim: usize, out_dim: usize) -> u128 {
    let mut total = 0u128;
    let mut block = out_dim as u128;
    for _ in 0..p {
        block *= in_dim as u128;
        total += block;
    }
    total
}

/// Stored-scalar count of a dense `[I; p] x J` kernel.
pub fn dense_param_count(p: usize, in_dim: usize, out_dim: usize) -> u128 {
    (in_dim as u128).pow(p as u32) * out_dim as u128
}
