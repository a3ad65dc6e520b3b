//! The tensor 1x1 convolutional layer.
//!
//! At every pixel the channel vector (optionally extended by a trailing constant 1)
//! is contracted `p` times with a factorized kernel and passed through an
//! activation. No spatial neighbourhood is involved.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::kernel::{TnKernel, Workspace};
use crate::tensor::DenseTensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    Relu,
    #[default]
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
        }
    }

    /// Derivative at `v`; the kink at zero takes the left slope.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if v > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::LeakyRelu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::LeakyRelu),
            t => Err(Error::format(format!("unknown activation tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leaky_relu(0.2)" => Ok(Activation::LeakyRelu),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct T1clLayer {
    kernel: TnKernel,
    add_one: bool,
    activation: Activation,
    version: u64,
}

/// Per-pixel record of a forward pass: augmented inputs and pre-activations.
#[derive(Debug, Clone)]
pub struct LayerCache {
    height: usize,
    width: usize,
    in_dim: usize,
    out_dim: usize,
    version: u64,
    inputs: Vec<f64>,
    pre: Vec<f64>,
    proj: Vec<f64>,
    proj_len: usize,
}

impl LayerCache {
    pub fn preactivation(&self) -> FeatureMap {
        FeatureMap::new(self.height, self.width, self.out_dim, self.pre.clone())
            .expect("cache dims are consistent")
    }

    /// Augmented input vectors, `in_dim` values per pixel.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }
}

impl T1clLayer {
    pub fn new(kernel: TnKernel, add_one: bool, activation: Activation) -> Result<Self> {
        if add_one && kernel.in_dim() < 2 {
            return Err(Error::invalid(
                "add_one needs at least one data channel besides the constant",
            ));
        }
        Ok(T1clLayer {
            kernel,
            add_one,
            activation,
            version: 0,
        })
    }

    pub fn kernel(&self) -> &TnKernel {
        &self.kernel
    }

    /// Mutable kernel access; invalidates caches from earlier forward passes.
    pub fn kernel_mut(&mut self) -> &mut TnKernel {
        self.version += 1;
        &mut self.kernel
    }

    pub fn add_one(&self) -> bool {
        self.add_one
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Channels expected on the input feature map.
    pub fn in_channels(&self) -> usize {
        self.kernel.in_dim() - self.add_one as usize
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.out_dim()
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        if input.channels() != self.in_channels() {
            return Err(Error::invalid(format!(
                "layer expects {} channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    /// Augmented per-pixel input vectors (`in_dim` each).
    pub fn augmented_inputs(&self, input: &FeatureMap) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if !self.add_one {
            return Ok(input.data().to_vec());
        }
        let c = input.channels();
        let mut xs = Vec::with_capacity(input.pixels() * (c + 1));
        for px in input.data().chunks_exact(c) {
            xs.extend_from_slice(px);
            xs.push(1.0);
        }
        Ok(xs)
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<(FeatureMap, LayerCache)> {
        let inputs = self.augmented_inputs(input)?;
        let (i_dim, j_dim) = (self.kernel.in_dim(), self.kernel.out_dim());
        let mut pre = vec![0.0; input.pixels() * j_dim];
        let mut ws = Workspace::new();
        let proj_len = self.kernel.projection_len();
        let mut proj = Vec::with_capacity(input.pixels() * proj_len);
        for (x, y) in inputs.chunks_exact(i_dim).zip(pre.chunks_exact_mut(j_dim)) {
            self.kernel.contract_into(x, y, &mut ws);
            proj.extend_from_slice(ws.projections());
        }
        let out: Vec<f64> = pre.iter().map(|&v| self.activation.apply(v)).collect();
        let out = FeatureMap::new(input.height(), input.width(), j_dim, out)?;
        let cache = LayerCache {
            height: input.height(),
            width: input.width(),
            in_dim: i_dim,
            out_dim: j_dim,
            version: self.version,
            inputs,
            pre,
            proj,
            proj_len,
        };
        Ok((out, cache))
    }

    /// Backward pass adding core gradients into `grad_cores`; returns the input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &LayerCache,
        upstream: &FeatureMap,
        grad_cores: &mut [DenseTensor],
    ) -> Result<FeatureMap> {
        if cache.version != self.version
            || cache.in_dim != self.kernel.in_dim()
            || cache.out_dim != self.kernel.out_dim()
        {
            return Err(Error::InvalidState(
                "layer cache does not belong to the current kernel".into(),
            ));
        }
        if upstream.dims() != (cache.height, cache.width, cache.out_dim) {
            return Err(Error::InvalidState(format!(
                "upstream {:?} does not match cached output {:?}",
                upstream.dims(),
                (cache.height, cache.width, cache.out_dim)
            )));
        }
        if grad_cores.len() != self.kernel.cores().len()
            || grad_cores
                .iter()
                .zip(self.kernel.cores())
                .any(|(g, c)| g.shape() != c.shape())
        {
            return Err(Error::invalid("gradient buffers do not match kernel cores"));
        }
        let (i_dim, j_dim) = (cache.in_dim, cache.out_dim);
        let c = self.in_channels();
        let mut grad_in = vec![0.0; cache.height * cache.width * c];
        let mut ws = Workspace::new();
        let mut g_pre = vec![0.0; j_dim];
        let mut gx = vec![0.0; i_dim];
        for px in 0..cache.height * cache.width {
            let pre = &cache.pre[px * j_dim..(px + 1) * j_dim];
            let up = &upstream.data()[px * j_dim..(px + 1) * j_dim];
            for ((g, &u), &v) in g_pre.iter_mut().zip(up).zip(pre) {
                *g = u * self.activation.derivative(v);
            }
            gx.fill(0.0);
            let x = &cache.inputs[px * i_dim..(px + 1) * i_dim];
            let proj = &cache.proj[px * cache.proj_len..(px + 1) * cache.proj_len];
            self.kernel
                .accumulate_grad_projected(x, proj, &g_pre, &mut ws, grad_cores, &mut gx);
            // the appended constant channel has no upstream input
            grad_in[px * c..(px + 1) * c].copy_from_slice(&gx[..c]);
        }
        FeatureMap::new(cache.height, cache.width, c, grad_in)
    }

    /// Backward pass returning fresh core gradients and the input gradient.
    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &FeatureMap,
    ) -> Result<(Vec<DenseTensor>, FeatureMap)> {
        let mut grads = self.zero_grads();
        let gin = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, gin))
    }

    pub fn zero_grads(&self) -> Vec<DenseTensor> {
        self.kernel
            .cores()
            .iter()
            .map(|c| DenseTensor::zeros(c.shape()).expect("core shapes are valid"))
            .collect()
    }
}
