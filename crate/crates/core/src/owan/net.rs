use std::io::{Read, Write};
use std::path::Path;

use super::block::{BlockCache, OwanBlock};
use super::ops::{Conv2d, OpKind, Operation};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::kernel::{uniform_ranks, KernelFormat, ScalePolicy, TnKernel};
use crate::layer::{Activation, T1clLayer};
use crate::rng::Rng;
use crate::tensor::{read_exact, read_u32, read_u8, DenseTensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"T1CN";
pub const CHECKPOINT_VERSION: u8 = 0x01;

/// Fusion layer settings shared by every block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub format: KernelFormat,
    pub order: usize,
    pub rank: usize,
    pub shared: bool,
    pub add_one: bool,
    pub activation: Activation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            format: KernelFormat::Cp,
            order: 2,
            rank: 8,
            shared: true,
            add_one: false,
            activation: Activation::LeakyRelu,
        }
    }
}

impl FusionConfig {
    /// Plain 1x1 convolution: order 1, CP rank 1.
    pub fn linear() -> Self {
        FusionConfig {
            order: 1,
            rank: 1,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub image_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub ops: Vec<OpKind>,
    pub fusion: FusionConfig,
    pub residual: bool,
    pub global_residual: bool,
    /// Start the head at zero so that a residual net begins as the identity map.
    pub zero_head: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            image_channels: 1,
            channels: 8,
            blocks: 2,
            ops: vec![
                OpKind::Conv1x1,
                OpKind::Conv3x3,
                OpKind::Dilated3x3,
                OpKind::AvgPool3x3,
            ],
            fusion: FusionConfig::default(),
            residual: true,
            global_residual: true,
            zero_head: true,
        }
    }
}

/// Stem convolution, a stack of operation blocks, head convolution, optional global skip.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroOwanNet {
    image_channels: usize,
    channels: usize,
    stem: Conv2d,
    blocks: Vec<OwanBlock>,
    head: Conv2d,
    global_residual: bool,
}

#[derive(Debug, Clone)]
pub struct NetCache {
    input: FeatureMap,
    blocks: Vec<BlockCache>,
    head_in: FeatureMap,
}

impl NetCache {
    pub fn block(&self, b: usize) -> &BlockCache {
        &self.blocks[b]
    }
}

impl MicroOwanNet {
    pub fn init(config: &NetConfig, rng: &mut Rng) -> Result<Self> {
        let (ic, c) = (config.image_channels, config.channels);
        if ic == 0 || c == 0 || config.ops.is_empty() {
            return Err(Error::invalid("net needs positive channel counts and operations"));
        }
        let stem = Conv2d::init(3, 1, ic, c, rng)?;
        let n = config.ops.len();
        let fc = &config.fusion;
        let in_dim = n * c + fc.add_one as usize;
        let ranks = uniform_ranks(fc.format, fc.order, fc.rank);
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let ops = config
                .ops
                .iter()
                .map(|&k| Operation::init(k, c, rng))
                .collect::<Result<Vec<_>>>()?;
            let kernel = TnKernel::init(
                fc.format,
                fc.order,
                in_dim,
                c,
                &ranks,
                fc.shared,
                rng,
                ScalePolicy::VariancePreserving,
            )?;
            let fusion = T1clLayer::new(kernel, fc.add_one, fc.activation)?;
            blocks.push(OwanBlock::new(ops, fusion, config.residual)?);
        }
        let head = if config.zero_head {
            Conv2d::zeros(3, 1, c, ic)?
        } else {
            Conv2d::init(3, 1, c, ic, rng)?
        };
        Ok(MicroOwanNet {
            image_channels: ic,
            channels: c,
            stem,
            blocks,
            head,
            global_residual: config.global_residual,
        })
    }

    pub fn from_parts(stem: Conv2d, blocks: Vec<OwanBlock>, head: Conv2d, global_residual: bool) -> Result<Self> {
        let (ic, c) = (stem.in_channels(), stem.out_channels());
        if head.in_channels() != c || head.out_channels() != ic {
            return Err(Error::invalid("head does not map back to image channels"));
        }
        if blocks.iter().any(|b| b.channels() != c || b.fusion().out_channels() != c) {
            return Err(Error::invalid("block channel counts disagree with the stem"));
        }
        Ok(MicroOwanNet {
            image_channels: ic,
            channels: c,
            stem,
            blocks,
            head,
            global_residual,
        })
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn blocks(&self) -> &[OwanBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [OwanBlock] {
        &mut self.blocks
    }

    pub fn head_mut(&mut self) -> &mut Conv2d {
        &mut self.head
    }

    /// Operations per block (taken from the first block).
    pub fn ops_per_block(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ops().len())
    }

    /// All parameter tensors: stem, blocks in order, head.
    pub fn params(&self) -> Vec<&DenseTensor> {
        let mut out: Vec<&DenseTensor> = self.stem.params().to_vec();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out: Vec<&mut DenseTensor> = self.stem.params_mut().into_iter().collect();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<DenseTensor> {
        self.params()
            .iter()
            .map(|t| DenseTensor::zeros(t.shape()).expect("param shapes are valid"))
            .collect()
    }

    /// Forward pass; `zeroed = Some(k)` closes operation `k` in every block.
    pub fn forward(&self, input: &FeatureMap, zeroed: Option<usize>) -> Result<(FeatureMap, NetCache)> {
        if input.channels() != self.image_channels {
            return Err(Error::invalid(format!(
                "net expects {} image channels, got {}",
                self.image_channels,
                input.channels()
            )));
        }
        let mut x = self.stem.forward(input)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, cache) = b.forward(&x, zeroed)?;
            caches.push(cache);
            x = y;
        }
        let mut out = self.head.forward(&x)?;
        if self.global_residual {
            out.add_assign(input);
        }
        Ok((
            out,
            NetCache {
                input: input.clone(),
                blocks: caches,
                head_in: x,
            },
        ))
    }

    pub fn predict(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.forward(input, None).map(|(out, _)| out)
    }

    /// Adds parameter gradients (in [`MicroOwanNet::params`] order); returns the input gradient.
    pub fn backward(
        &self,
        cache: &NetCache,
        upstream: &FeatureMap,
        grads: &mut [DenseTensor],
    ) -> Result<FeatureMap> {
        if grads.len() != self.params().len() || cache.blocks.len() != self.blocks.len() {
            return Err(Error::InvalidState("gradient buffers or cache do not match net".into()));
        }
        let n_head = 2;
        let total = grads.len();
        let (rest, head_grads) = grads.split_at_mut(total - n_head);
        let mut g = self.head.backward(&cache.head_in, upstream, head_grads)?;
        let (stem_grads, block_grads) = rest.split_at_mut(2);
        let mut end = block_grads.len();
        for (b, cache_b) in self.blocks.iter().zip(&cache.blocks).rev() {
            let start = end - b.params().len();
            g = b.backward(cache_b, &g, &mut block_grads[start..end])?;
            end = start;
        }
        let mut g_in = self.stem.backward(&cache.input, &g, stem_grads)?;
        if self.global_residual {
            g_in.add_assign(upstream);
        }
        Ok(g_in)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        let n = self.ops_per_block();
        for v in [self.image_channels, self.blocks.len(), n, self.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&[self.global_residual as u8])?;
        for b in &self.blocks {
            let k = b.fusion().kernel();
            w.write_all(&[b.residual() as u8, k.format().tag()])?;
            w.write_all(&(k.order() as u32).to_le_bytes())?;
            w.write_all(&(k.ranks().len() as u32).to_le_bytes())?;
            for &r in k.ranks() {
                w.write_all(&(r as u32).to_le_bytes())?;
            }
            w.write_all(&[
                k.shared() as u8,
                b.fusion().add_one() as u8,
                b.fusion().activation().tag(),
            ])?;
            for op in b.ops() {
                w.write_all(&[op.kind().tag()])?;
            }
        }
        for t in self.stem.params() {
            t.write_snapshot(w)?;
        }
        for b in &self.blocks {
            for op in b.ops() {
                for t in op.params() {
                    t.write_snapshot(w)?;
                }
            }
            b.fusion().kernel().write_to(w)?;
        }
        for t in self.head.params() {
            t.write_snapshot(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact(r, &mut magic)?;
        if &magic[..4] != CHECKPOINT_MAGIC || magic[4] != CHECKPOINT_VERSION {
            return Err(Error::format("not a t1cl checkpoint (bad magic or version)"));
        }
        let _ic = read_u32(r)? as usize;
        let n_blocks = read_u32(r)? as usize;
        let n_ops = read_u32(r)? as usize;
        let _c = read_u32(r)? as usize;
        let global_residual = read_bool(r)?;
        if n_blocks > 4096 || n_ops == 0 || n_ops > 256 {
            return Err(Error::format("implausible block or operation count"));
        }
        struct Header {
            residual: bool,
            format: KernelFormat,
            order: usize,
            ranks: Vec<usize>,
            shared: bool,
            add_one: bool,
            activation: Activation,
            kinds: Vec<OpKind>,
        }
        let mut headers = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let residual = read_bool(r)?;
            let format = KernelFormat::from_tag(read_u8(r)?)?;
            let order = read_u32(r)? as usize;
            let n_ranks = read_u32(r)? as usize;
            if n_ranks > 1024 {
                return Err(Error::format("implausible rank count"));
            }
            let ranks = (0..n_ranks)
                .map(|_| read_u32(r).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let shared = read_bool(r)?;
            let add_one = read_bool(r)?;
            let activation = Activation::from_tag(read_u8(r)?)?;
            let kinds = (0..n_ops)
                .map(|_| OpKind::from_tag(read_u8(r)?))
                .collect::<Result<Vec<_>>>()?;
            headers.push(Header {
                residual,
                format,
                order,
                ranks,
                shared,
                add_one,
                activation,
                kinds,
            });
        }
        let read_conv = |r: &mut R, size: usize, dilation: usize| -> Result<Conv2d> {
            let w = DenseTensor::read_snapshot(r)?;
            let b = DenseTensor::read_snapshot(r)?;
            Conv2d::new(size, dilation, w, b).map_err(|e| Error::format(e.to_string()))
        };
        let stem = read_conv(r, 3, 1)?;
        let mut blocks = Vec::with_capacity(n_blocks);
        for h in headers {
            let ops = h
                .kinds
                .iter()
                .map(|&kind| {
                    let conv = match kind.conv_geometry() {
                        Some((k, d)) => Some(read_conv(r, k, d)?),
                        None => None,
                    };
                    Operation::from_parts(kind, conv)
                })
                .collect::<Result<Vec<_>>>()?;
            let kernel = TnKernel::read_from(r)?;
            if kernel.format() != h.format
                || kernel.order() != h.order
                || kernel.ranks() != h.ranks.as_slice()
                || kernel.shared() != h.shared
            {
                return Err(Error::format("fusion kernel disagrees with block header"));
            }
            let fusion = T1clLayer::new(kernel, h.add_one, h.activation)?;
            blocks.push(OwanBlock::new(ops, fusion, h.residual).map_err(|e| Error::format(e.to_string()))?);
        }
        let head = read_conv(r, 3, 1)?;
        MicroOwanNet::from_parts(stem, blocks, head, global_residual)
            .map_err(|e| Error::format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_bool<R: Read>(r: &mut R) -> Result<bool> {
    match read_u8(r)? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::format(format!("bad boolean byte {b}"))),
    }
}
