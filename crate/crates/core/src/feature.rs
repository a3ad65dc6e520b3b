use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Channels-last feature map, stored as a `[H, W, C]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("feature map dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        let mut m = Self::zeros(height, width, channels);
        m.data.fill(value);
        m
    }

    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        match *t.shape() {
            [h, w, c] => Self::new(h, w, c, t.into_data()),
            _ => Err(Error::invalid(format!(
                "feature map tensor must be [H, W, C], got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("feature map dimensions are consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
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

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let at = (y * self.width + x) * self.channels;
        &self.data[at..at + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let at = (y * self.width + x) * self.channels;
        &mut self.data[at..at + self.channels]
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        assert!(self.same_dims(other), "feature map dims differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates maps of equal spatial size along the channel axis.
    pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        if maps.iter().any(|m| m.height != h || m.width != w) {
            return Err(Error::invalid("concatenated maps differ in spatial size"));
        }
        let channels: usize = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for px in 0..h * w {
            for m in maps {
                data.extend_from_slice(&m.data[px * m.channels..(px + 1) * m.channels]);
            }
        }
        FeatureMap::new(h, w, channels, data)
    }

    /// Channel range `[start, start + len)` as a new map.
    pub fn channel_slice(&self, start: usize, len: usize) -> FeatureMap {
        assert!(start + len <= self.channels, "channel slice out of range");
        let mut data = Vec::with_capacity(self.pixels() * len);
        for px in 0..self.pixels() {
            let at = px * self.channels + start;
            data.extend_from_slice(&self.data[at..at + len]);
        }
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: len,
            data,
        }
    }

    /// Moves each pixel: output pixel `i` is input pixel `perm[i]` (row-major pixel order).
    pub fn permute_pixels(&self, perm: &[usize]) -> FeatureMap {
        assert_eq!(perm.len(), self.pixels());
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            data.extend_from_slice(&self.data[src * c..(src + 1) * c]);
        }
        FeatureMap {
            data,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
