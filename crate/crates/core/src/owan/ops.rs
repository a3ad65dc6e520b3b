//! Spatial operations of the operation bank: small direct convolutions, 3x3 average
//! pooling and identity. All preserve `H x W` through zero padding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::rng::Rng;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Identity,
    Conv1x1,
    Conv3x3,
    Conv5x5,
    /// 3x3 taps at dilation 2 (5x5 footprint).
    Dilated3x3,
    /// 3x3 mean, stride 1, zero padding counted in the denominator.
    AvgPool3x3,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Identity,
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::Conv5x5,
        OpKind::Dilated3x3,
        OpKind::AvgPool3x3,
    ];

    /// `(kernel size, dilation)` for the convolutional kinds.
    pub fn conv_geometry(self) -> Option<(usize, usize)> {
        match self {
            OpKind::Conv1x1 => Some((1, 1)),
            OpKind::Conv3x3 => Some((3, 1)),
            OpKind::Conv5x5 => Some((5, 1)),
            OpKind::Dilated3x3 => Some((3, 2)),
            OpKind::Identity | OpKind::AvgPool3x3 => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            OpKind::Identity => 0,
            OpKind::Conv1x1 => 1,
            OpKind::Conv3x3 => 2,
            OpKind::Conv5x5 => 3,
            OpKind::Dilated3x3 => 4,
            OpKind::AvgPool3x3 => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::format(format!("unknown operation tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Identity => "identity",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Conv5x5 => "conv5x5",
            OpKind::Dilated3x3 => "dilated3x3",
            OpKind::AvgPool3x3 => "avgpool3x3",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown operation {s:?}")))
    }
}

/// Direct 2-D convolution with weights `[k, k, C_in, C_out]` and bias `[C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    size: usize,
    dilation: usize,
    weight: DenseTensor,
    bias: DenseTensor,
}

impl Conv2d {
    pub fn new(size: usize, dilation: usize, weight: DenseTensor, bias: DenseTensor) -> Result<Self> {
        if size.is_multiple_of(2) || dilation == 0 {
            return Err(Error::invalid("convolution size must be odd and dilation positive"));
        }
        match *weight.shape() {
            [a, b, _, cout] if a == size && b == size && bias.shape() == [cout] => Ok(Conv2d {
                size,
                dilation,
                weight,
                bias,
            }),
            _ => Err(Error::invalid(format!(
                "conv weights {:?} / bias {:?} do not form a {size}x{size} kernel",
                weight.shape(),
                bias.shape()
            ))),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init(size: usize, dilation: usize, cin: usize, cout: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / ((size * size * cin) as f64).sqrt();
        let mut w = DenseTensor::zeros(&[size, size, cin, cout])?;
        w.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        Self::new(size, dilation, w, DenseTensor::zeros(&[cout])?)
    }

    pub fn zeros(size: usize, dilation: usize, cin: usize, cout: usize) -> Result<Self> {
        Self::new(
            size,
            dilation,
            DenseTensor::zeros(&[size, size, cin, cout])?,
            DenseTensor::zeros(&[cout])?,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn weight(&self) -> &DenseTensor {
        &self.weight
    }

    pub fn bias(&self) -> &DenseTensor {
        &self.bias
    }

    pub fn params_mut(&mut self) -> [&mut DenseTensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&DenseTensor; 2] {
        [&self.weight, &self.bias]
    }

    fn pad(&self) -> isize {
        (self.dilation * (self.size - 1) / 2) as isize
    }

    fn check(&self, input: &FeatureMap) -> Result<()> {
        if input.channels() != self.in_channels() {
            return Err(Error::invalid(format!(
                "convolution expects {} channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    /// For each tap: `(tap index, dy, dx, y range, x range)` of outputs whose source
    /// pixel `(y + dy, x + dx)` lies inside an `h x w` map.
    fn tap_spans(&self, h: usize, w: usize) -> Vec<TapSpan> {
        let (k, d, pad) = (self.size, self.dilation as isize, self.pad());
        let range = |off: isize, n: usize| {
            let lo = (-off).clamp(0, n as isize) as usize;
            let hi = (n as isize - off).clamp(0, n as isize) as usize;
            (lo, hi.max(lo))
        };
        (0..k * k)
            .filter_map(|t| {
                let dy = (t / k) as isize * d - pad;
                let dx = (t % k) as isize * d - pad;
                let (y0, y1) = range(dy, h);
                let (x0, x1) = range(dx, w);
                (y0 < y1 && x0 < x1).then_some(TapSpan { t, dy, dx, y0, y1, x0, x1 })
            })
            .collect()
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.check(input)?;
        let (h, w, cin) = input.dims();
        let cout = self.out_channels();
        let wd = self.weight.data();
        let mut out = FeatureMap::zeros(h, w, cout);
        for o in out.data_mut().chunks_exact_mut(cout) {
            o.copy_from_slice(self.bias.data());
        }
        let src = input.data();
        let dst = out.data_mut();
        for span in self.tap_spans(h, w) {
            let block = &wd[span.t * cin * cout..(span.t + 1) * cin * cout];
            for y in span.y0..span.y1 {
                let n = span.x1 - span.x0;
                let o0 = (y * w + span.x0) * cout;
                let i0 = (span.source_row(y) * w + span.source_col(span.x0)) * cin;
                let orow = &mut dst[o0..o0 + n * cout];
                let irow = &src[i0..i0 + n * cin];
                match cout {
                    4 => forward_row::<4>(orow, irow, block, cin),
                    8 => forward_row::<8>(orow, irow, block, cin),
                    16 => forward_row::<16>(orow, irow, block, cin),
                    _ => forward_row_dyn(orow, irow, block, cin, cout),
                }
            }
        }
        Ok(out)
    }

    /// Adds weight/bias gradients into `grads` (`[weight, bias]`); returns the input gradient.
    pub fn backward(
        &self,
        input: &FeatureMap,
        upstream: &FeatureMap,
        grads: &mut [DenseTensor],
    ) -> Result<FeatureMap> {
        let (h, w, cin) = input.dims();
        let cout = self.out_channels();
        if upstream.dims() != (h, w, cout) || grads.len() != 2 {
            return Err(Error::InvalidState("convolution gradient shapes disagree".into()));
        }
        let wd = self.weight.data();
        let mut grad_in = FeatureMap::zeros(h, w, cin);
        let (gw, gb) = grads.split_at_mut(1);
        let gw = gw[0].data_mut();
        let gb = gb[0].data_mut();
        for g in upstream.data().chunks_exact(cout) {
            for (b, &gv) in gb.iter_mut().zip(g) {
                *b += gv;
            }
        }
        let src = input.data();
        let up = upstream.data();
        let gsrc = grad_in.data_mut();
        for span in self.tap_spans(h, w) {
            let off = span.t * cin * cout;
            let block = &wd[off..off + cin * cout];
            let gblock = &mut gw[off..off + cin * cout];
            for y in span.y0..span.y1 {
                let n = span.x1 - span.x0;
                let o0 = (y * w + span.x0) * cout;
                let i0 = (span.source_row(y) * w + span.source_col(span.x0)) * cin;
                let urow = &up[o0..o0 + n * cout];
                let irow = &src[i0..i0 + n * cin];
                let grow = &mut gsrc[i0..i0 + n * cin];
                match cout {
                    4 => backward_row::<4>(urow, irow, grow, block, gblock, cin),
                    8 => backward_row::<8>(urow, irow, grow, block, gblock, cin),
                    16 => backward_row::<16>(urow, irow, grow, block, gblock, cin),
                    _ => backward_row_dyn(urow, irow, grow, block, gblock, cin, cout),
                }
            }
        }
        Ok(grad_in)
    }
}

fn forward_row<const CO: usize>(orow: &mut [f64], irow: &[f64], block: &[f64], cin: usize) {
    let (orow, _) = orow.as_chunks_mut::<CO>();
    let (rows, _) = block.as_chunks::<CO>();
    for (o, px) in orow.iter_mut().zip(irow.chunks_exact(cin)) {
        for (&v, row) in px.iter().zip(rows) {
            for c in 0..CO {
                o[c] += v * row[c];
            }
        }
    }
}

fn forward_row_dyn(orow: &mut [f64], irow: &[f64], block: &[f64], cin: usize, cout: usize) {
    for (o, px) in orow.chunks_exact_mut(cout).zip(irow.chunks_exact(cin)) {
        for (&v, row) in px.iter().zip(block.chunks_exact(cout)) {
            for (ov, &wv) in o.iter_mut().zip(row) {
                *ov += v * wv;
            }
        }
    }
}

fn backward_row<const CO: usize>(
    urow: &[f64],
    irow: &[f64],
    grow: &mut [f64],
    block: &[f64],
    gblock: &mut [f64],
    cin: usize,
) {
    let (urow, _) = urow.as_chunks::<CO>();
    let (rows, _) = block.as_chunks::<CO>();
    let (grows, _) = gblock.as_chunks_mut::<CO>();
    for ((g, px), gpx) in urow.iter().zip(irow.chunks_exact(cin)).zip(grow.chunks_exact_mut(cin)) {
        for (((&v, gi), row), gw) in px.iter().zip(gpx.iter_mut()).zip(rows).zip(grows.iter_mut()) {
            let mut acc = [0.0; CO];
            for c in 0..CO {
                gw[c] += v * g[c];
                acc[c] = row[c] * g[c];
            }
            *gi += acc.iter().sum::<f64>();
        }
    }
}

fn backward_row_dyn(
    urow: &[f64],
    irow: &[f64],
    grow: &mut [f64],
    block: &[f64],
    gblock: &mut [f64],
    cin: usize,
    cout: usize,
) {
    for ((g, px), gpx) in urow.chunks_exact(cout).zip(irow.chunks_exact(cin)).zip(grow.chunks_exact_mut(cin)) {
        for (((&v, gi), row), gw) in px
            .iter()
            .zip(gpx.iter_mut())
            .zip(block.chunks_exact(cout))
            .zip(gblock.chunks_exact_mut(cout))
        {
            let mut acc = 0.0;
            for ((gwv, &wv), &gv) in gw.iter_mut().zip(row).zip(g) {
                *gwv += v * gv;
                acc += wv * gv;
            }
            *gi += acc;
        }
    }
}

struct TapSpan {
    t: usize,
    dy: isize,
    dx: isize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl TapSpan {
    fn source_row(&self, y: usize) -> usize {
        (y as isize + self.dy) as usize
    }

    fn source_col(&self, x: usize) -> usize {
        (x as isize + self.dx) as usize
    }
}

fn avgpool3x3(input: &FeatureMap) -> FeatureMap {
    let (h, w, c) = input.dims();
    let mut out = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let o = out.pixel_mut(y, x);
            for sy in y.saturating_sub(1)..(y + 2).min(h) {
                for sx in x.saturating_sub(1)..(x + 2).min(w) {
                    for (ov, &v) in o.iter_mut().zip(input.pixel(sy, sx)) {
                        *ov += v;
                    }
                }
            }
            o.iter_mut().for_each(|v| *v /= 9.0);
        }
    }
    out
}

fn avgpool3x3_backward(upstream: &FeatureMap) -> FeatureMap {
    // the pooling operator is symmetric, so its adjoint is itself
    avgpool3x3(upstream)
}

/// One entry of an operation bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    kind: OpKind,
    conv: Option<Conv2d>,
}

/// What an operation keeps from its forward pass.
#[derive(Debug, Clone)]
pub struct OpCache {
    kind: OpKind,
    dims: (usize, usize, usize),
    input: Option<FeatureMap>,
}

impl Operation {
    pub fn init(kind: OpKind, channels: usize, rng: &mut Rng) -> Result<Self> {
        let conv = match kind.conv_geometry() {
            Some((k, d)) => Some(Conv2d::init(k, d, channels, channels, rng)?),
            None => None,
        };
        Ok(Operation { kind, conv })
    }

    pub fn from_parts(kind: OpKind, conv: Option<Conv2d>) -> Result<Self> {
        match (kind.conv_geometry(), &conv) {
            (None, None) => {}
            (Some((k, d)), Some(c)) if c.size == k && c.dilation == d => {}
            _ => return Err(Error::invalid(format!("weights do not fit operation {kind}"))),
        }
        Ok(Operation { kind, conv })
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn conv(&self) -> Option<&Conv2d> {
        self.conv.as_ref()
    }

    pub fn params(&self) -> Vec<&DenseTensor> {
        self.conv.iter().flat_map(|c| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        self.conv.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<(FeatureMap, OpCache)> {
        let out = match (&self.conv, self.kind) {
            (Some(conv), _) => conv.forward(input)?,
            (None, OpKind::AvgPool3x3) => avgpool3x3(input),
            (None, _) => input.clone(),
        };
        let cache = OpCache {
            kind: self.kind,
            dims: input.dims(),
            input: self.conv.as_ref().map(|_| input.clone()),
        };
        Ok((out, cache))
    }

    /// Adds parameter gradients into `grads` (empty for parameter-free kinds).
    pub fn backward(
        &self,
        cache: &OpCache,
        upstream: &FeatureMap,
        grads: &mut [DenseTensor],
    ) -> Result<FeatureMap> {
        if cache.kind != self.kind {
            return Err(Error::InvalidState("operation cache from a different kind".into()));
        }
        let out_c = self.conv.as_ref().map_or(cache.dims.2, |c| c.out_channels());
        if upstream.dims() != (cache.dims.0, cache.dims.1, out_c) {
            return Err(Error::InvalidState("upstream does not match cached shape".into()));
        }
        match (&self.conv, self.kind) {
            (Some(conv), _) => {
                let input = cache
                    .input
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("convolution cache lacks input".into()))?;
                conv.backward(input, upstream, grads)
            }
            (None, OpKind::AvgPool3x3) => Ok(avgpool3x3_backward(upstream)),
            (None, _) => Ok(upstream.clone()),
        }
    }
}
