use super::{KernelFormat, TnKernel};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Largest dense kernel (`I^p * J` entries) that [`TnKernel::reconstruct_dense`] will build.
pub const DENSE_ENTRY_LIMIT: u128 = 10_000_000;

impl TnKernel {
    /// Materializes the full `[I, .., I, J]` kernel entry by entry.
    pub fn reconstruct_dense(&self) -> Result<DenseTensor> {
        let entries = crate::tensor::dense_param_count(self.order, self.in_dim, self.out_dim);
        if entries > DENSE_ENTRY_LIMIT {
            return Err(Error::Capacity(format!(
                "dense kernel would hold {entries} entries (limit {DENSE_ENTRY_LIMIT})"
            )));
        }
        let (p, i_dim, j_dim) = (self.order, self.in_dim, self.out_dim);
        let mut shape = vec![i_dim; p];
        shape.push(j_dim);
        let mut data = Vec::with_capacity(entries as usize);
        let mut idx = vec![0usize; p];
        loop {
            for j in 0..j_dim {
                data.push(self.dense_entry(&idx, j));
            }
            // odometer over the p input indices, last fastest
            let mut k = p;
            loop {
                if k == 0 {
                    return DenseTensor::new(shape, data);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < i_dim {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// `W[idx.., j]` computed directly from the cores.
    pub fn dense_entry(&self, idx: &[usize], j: usize) -> f64 {
        let j_dim = self.out_dim;
        match self.format {
            KernelFormat::Cp => {
                let r_dim = self.ranks[0];
                (0..r_dim)
                    .map(|r| {
                        idx.iter()
                            .enumerate()
                            .map(|(k, &i)| {
                                let core = &self.cores[self.stored_index(k)];
                                core.data()[(i * r_dim + r) * j_dim + j]
                            })
                            .product::<f64>()
                    })
                    .sum()
            }
            KernelFormat::Tt | KernelFormat::Tr => {
                let r0 = self.bond_dims(0).0;
                let mut acc: Vec<f64> = (0..r0 * r0)
                    .map(|e| if e / r0 == e % r0 { 1.0 } else { 0.0 })
                    .collect();
                let mut cols = r0;
                for (k, &i) in idx.iter().enumerate() {
                    let (a, b) = self.bond_dims(k);
                    debug_assert_eq!(a, cols);
                    let core = self.cores[self.stored_index(k)].data();
                    let mut next = vec![0.0; r0 * b];
                    for row in 0..r0 {
                        for y in 0..b {
                            let mut s = 0.0;
                            for x in 0..a {
                                s += acc[row * a + x] * core[((i * a + x) * b + y) * j_dim + j];
                            }
                            next[row * b + y] = s;
                        }
                    }
                    acc = next;
                    cols = b;
                }
                (0..r0).map(|d| acc[d * r0 + d]).sum()
            }
        }
    }
}
