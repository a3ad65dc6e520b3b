use std::collections::BTreeMap;

use super::ops::{OpCache, OpKind, Operation};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::layer::{LayerCache, T1clLayer};
use crate::tensor::DenseTensor;

/// Upper bound on the number of operation-tuple components a decomposition may return.
pub const DECOMPOSITION_LIMIT: usize = 4096;

/// Parallel operation bank, channel concatenation, tensor 1x1 fusion, optional skip.
#[derive(Debug, Clone, PartialEq)]
pub struct OwanBlock {
    ops: Vec<Operation>,
    fusion: T1clLayer,
    residual: bool,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    op_caches: Vec<OpCache>,
    fusion: LayerCache,
    zeroed: Option<usize>,
    channels: usize,
}

impl BlockCache {
    /// Output of operation `k` as seen by the fusion layer (zero if it was ablated).
    pub fn op_output(&self, k: usize, height: usize, width: usize) -> FeatureMap {
        let c = self.channels;
        let i_dim = self.fusion.inputs().len() / (height * width);
        let mut data = Vec::with_capacity(height * width * c);
        for px in self.fusion.inputs().chunks_exact(i_dim) {
            data.extend_from_slice(&px[k * c..(k + 1) * c]);
        }
        FeatureMap::new(height, width, c, data).expect("cached dims are consistent")
    }

    pub fn fusion(&self) -> &LayerCache {
        &self.fusion
    }
}

impl OwanBlock {
    pub fn new(ops: Vec<Operation>, fusion: T1clLayer, residual: bool) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::invalid("a block needs at least one operation"));
        }
        if !fusion.in_channels().is_multiple_of(ops.len()) {
            return Err(Error::invalid(format!(
                "fusion input {} is not a multiple of {} operations",
                fusion.in_channels(),
                ops.len()
            )));
        }
        let c = fusion.in_channels() / ops.len();
        for op in &ops {
            if let Some(conv) = op.conv() {
                if conv.in_channels() != c || conv.out_channels() != c {
                    return Err(Error::invalid(format!(
                        "operation {} maps {}->{} channels, block uses {c}",
                        op.kind(),
                        conv.in_channels(),
                        conv.out_channels()
                    )));
                }
            }
        }
        if residual && fusion.out_channels() != c {
            return Err(Error::invalid(
                "residual blocks need fusion output channels equal to the block input",
            ));
        }
        Ok(OwanBlock {
            ops,
            fusion,
            residual,
        })
    }

    pub fn ops(&self) -> &[Operation] {
        &self.ops
    }

    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.ops.iter().map(|o| o.kind()).collect()
    }

    pub fn fusion(&self) -> &T1clLayer {
        &self.fusion
    }

    pub fn fusion_mut(&mut self) -> &mut T1clLayer {
        &mut self.fusion
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    /// Channels each operation reads and writes.
    pub fn channels(&self) -> usize {
        self.fusion.in_channels() / self.ops.len()
    }

    pub fn params(&self) -> Vec<&DenseTensor> {
        let mut out: Vec<&DenseTensor> = self.ops.iter().flat_map(|o| o.params()).collect();
        out.extend(self.fusion.kernel().cores());
        out
    }

    /// Parameters in the same order as [`OwanBlock::params`].
    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out: Vec<&mut DenseTensor> =
            self.ops.iter_mut().flat_map(|o| o.params_mut()).collect();
        out.extend(self.fusion.kernel_mut().cores_mut().iter_mut());
        out
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        if input.channels() != self.channels() {
            return Err(Error::invalid(format!(
                "block expects {} channels, got {}",
                self.channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    fn run_ops(&self, input: &FeatureMap, zeroed: Option<usize>) -> Result<(Vec<FeatureMap>, Vec<OpCache>)> {
        self.check_input(input)?;
        if let Some(k) = zeroed.filter(|&k| k >= self.ops.len()) {
            return Err(Error::invalid(format!(
                "cannot close operation {k} of a {}-operation block",
                self.ops.len()
            )));
        }
        let mut outs = Vec::with_capacity(self.ops.len());
        let mut caches = Vec::with_capacity(self.ops.len());
        for (k, op) in self.ops.iter().enumerate() {
            let (mut out, cache) = op.forward(input)?;
            if zeroed == Some(k) {
                out.data_mut().fill(0.0);
            }
            outs.push(out);
            caches.push(cache);
        }
        Ok((outs, caches))
    }

    /// Forward pass; `zeroed = Some(k)` replaces operation `k`'s output by zeros.
    pub fn forward(&self, input: &FeatureMap, zeroed: Option<usize>) -> Result<(FeatureMap, BlockCache)> {
        let (outs, op_caches) = self.run_ops(input, zeroed)?;
        let refs: Vec<&FeatureMap> = outs.iter().collect();
        let concat = FeatureMap::concat_channels(&refs)?;
        let (mut out, fusion) = self.fusion.forward(&concat)?;
        if self.residual {
            out.add_assign(input);
        }
        Ok((
            out,
            BlockCache {
                op_caches,
                fusion,
                zeroed,
                channels: self.channels(),
            },
        ))
    }

    /// Adds parameter gradients (in [`OwanBlock::params`] order) and returns the input gradient.
    pub fn backward(
        &self,
        cache: &BlockCache,
        upstream: &FeatureMap,
        grads: &mut [DenseTensor],
    ) -> Result<FeatureMap> {
        if cache.op_caches.len() != self.ops.len() || cache.channels != self.channels() {
            return Err(Error::InvalidState("block cache does not match block".into()));
        }
        let n_op_params: usize = self.ops.iter().map(|o| o.params().len()).sum();
        if grads.len() != n_op_params + self.fusion.kernel().cores().len() {
            return Err(Error::invalid("gradient buffer count does not match block"));
        }
        let (op_grads, fusion_grads) = grads.split_at_mut(n_op_params);
        let g_concat = self.fusion.backward_accumulate(&cache.fusion, upstream, fusion_grads)?;
        let c = self.channels();
        let mut grad_in = if self.residual {
            upstream.clone()
        } else {
            FeatureMap::zeros(upstream.height(), upstream.width(), c)
        };
        let mut offset = 0;
        for (k, (op, op_cache)) in self.ops.iter().zip(&cache.op_caches).enumerate() {
            let n = op.params().len();
            if cache.zeroed != Some(k) {
                let g = g_concat.channel_slice(k * c, c);
                let gi = op.backward(op_cache, &g, &mut op_grads[offset..offset + n])?;
                grad_in.add_assign(&gi);
            }
            offset += n;
        }
        Ok(grad_in)
    }

    /// Augmented fusion inputs split by operation: one full-length vector per pixel
    /// and group, zero outside the group's channels. The constant channel (if any)
    /// belongs to the last group.
    fn grouped_inputs(&self, input: &FeatureMap, zeroed: Option<usize>) -> Result<(Vec<Vec<f64>>, usize)> {
        let (outs, _) = self.run_ops(input, zeroed)?;
        let refs: Vec<&FeatureMap> = outs.iter().collect();
        let concat = FeatureMap::concat_channels(&refs)?;
        let xs = self.fusion.augmented_inputs(&concat)?;
        let i_dim = self.fusion.kernel().in_dim();
        let c = self.channels();
        let n = self.ops.len();
        let groups = (0..n)
            .map(|g| {
                let hi = if g + 1 == n { i_dim } else { (g + 1) * c };
                let mut v = xs.clone();
                for px in v.chunks_exact_mut(i_dim) {
                    px[..g * c].fill(0.0);
                    px[hi..].fill(0.0);
                }
                v
            })
            .collect();
        Ok((groups, i_dim))
    }

    /// Splits the fused pre-activation of a first-order block into one additive map
    /// per operation; they sum to the pre-activation. `zeroed` closes one operation as in
    /// [`OwanBlock::forward`].
    pub fn decompose_by_operation(&self, input: &FeatureMap, zeroed: Option<usize>) -> Result<Vec<FeatureMap>> {
        if self.fusion.kernel().order() != 1 {
            return Err(Error::invalid(
                "first-order decomposition needs an order-1 fusion; use the high-order variant",
            ));
        }
        let comps = self.components(input, zeroed, &mut (0..self.ops.len()).map(|k| vec![k]))?;
        Ok(comps.into_values().collect())
    }

    /// Splits the fused pre-activation of an order-`p` block into `N^p` cross terms keyed
    /// by the operation tuple `(k1, .., kp)`; they sum to the pre-activation.
    pub fn decompose_by_operation_highorder(
        &self,
        input: &FeatureMap,
        zeroed: Option<usize>,
    ) -> Result<BTreeMap<Vec<usize>, FeatureMap>> {
        let p = self.fusion.kernel().order();
        if p < 2 {
            return Err(Error::invalid("high-order decomposition needs fusion order >= 2"));
        }
        let n = self.ops.len();
        let count = (n as u128).checked_pow(p as u32).unwrap_or(u128::MAX);
        if count > DECOMPOSITION_LIMIT as u128 {
            return Err(Error::Capacity(format!(
                "{n}^{p} components exceed the limit of {DECOMPOSITION_LIMIT}"
            )));
        }
        let mut tuples = (0..count as usize).map(|mut t| {
            let mut tuple = vec![0; p];
            for slot in tuple.iter_mut().rev() {
                *slot = t % n;
                t /= n;
            }
            tuple
        });
        self.components(input, zeroed, &mut tuples)
    }

    fn components(
        &self,
        input: &FeatureMap,
        zeroed: Option<usize>,
        tuples: &mut dyn Iterator<Item = Vec<usize>>,
    ) -> Result<BTreeMap<Vec<usize>, FeatureMap>> {
        let (groups, i_dim) = self.grouped_inputs(input, zeroed)?;
        let kernel = self.fusion.kernel();
        let j_dim = kernel.out_dim();
        let mut out = BTreeMap::new();
        for tuple in tuples {
            let mut data = Vec::with_capacity(input.pixels() * j_dim);
            for px in 0..input.pixels() {
                let xs: Vec<&[f64]> = tuple
                    .iter()
                    .map(|&g| &groups[g][px * i_dim..(px + 1) * i_dim])
                    .collect();
                data.extend(kernel.contract_multilinear(&xs)?);
            }
            out.insert(
                tuple,
                FeatureMap::new(input.height(), input.width(), j_dim, data)?,
            );
        }
        Ok(out)
    }

    /// Pre-activation of the fusion layer (no activation, no skip).
    pub fn fused_preactivation(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let (_, cache) = self.forward(input, None)?;
        Ok(cache.fusion.preactivation())
    }
}
