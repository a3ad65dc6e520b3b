//! Procedural clean patches and paired training/test sets.

use rayon::prelude::*;

use super::distortion::{apply_distortion, DistortionSpec, Level};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::rng::Rng;

/// Default patch side for desk-scale runs.
pub const DEFAULT_PATCH_SIDE: usize = 32;

/// Piecewise-smooth test pattern: a linear gradient, a few flat rectangles and discs,
/// and occasionally a low-amplitude stripe texture. Values lie in `[0, 1]`.
pub fn synth_clean_patch(side: usize, channels: usize, rng: &mut Rng) -> FeatureMap {
    let mut img = FeatureMap::zeros(side, side, channels);
    let s = side as f64;
    let base: Vec<f64> = (0..channels).map(|_| rng.uniform(0.2, 0.8)).collect();
    let gx = rng.uniform(-0.3, 0.3) / s;
    let gy = rng.uniform(-0.3, 0.3) / s;
    for y in 0..side {
        for x in 0..side {
            for (c, v) in img.pixel_mut(y, x).iter_mut().enumerate() {
                *v = base[c] + gx * x as f64 + gy * y as f64;
            }
        }
    }
    let shapes = 2 + rng.below(4);
    for _ in 0..shapes {
        let value: Vec<f64> = (0..channels).map(|_| rng.uniform(0.0, 1.0)).collect();
        let cx = rng.uniform(0.0, s);
        let cy = rng.uniform(0.0, s);
        let rx = rng.uniform(0.1 * s, 0.4 * s);
        let ry = rng.uniform(0.1 * s, 0.4 * s);
        let disc = rng.bernoulli(0.5);
        for y in 0..side {
            for x in 0..side {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let inside = if disc {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    img.pixel_mut(y, x).copy_from_slice(&value);
                }
            }
        }
    }
    if rng.bernoulli(0.3) {
        let amp = rng.uniform(0.02, 0.08);
        let freq = rng.uniform(0.3, 1.2);
        let angle = rng.uniform(0.0, std::f64::consts::PI);
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in 0..side {
            for x in 0..side {
                let t = (x as f64 * ca + y as f64 * sa) * freq;
                for v in img.pixel_mut(y, x) {
                    *v += amp * t.sin();
                }
            }
        }
    }
    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// One clean/distorted pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub clean: FeatureMap,
    pub distorted: FeatureMap,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
}

impl PatchSet {
    /// `count` patches, each with its own distortion drawn from `level`.
    ///
    /// Patch `i` depends only on `(rng seed, i)`.
    pub fn generate(count: usize, side: usize, channels: usize, level: Level, rng: &Rng) -> Result<Self> {
        if side == 0 || channels == 0 {
            return Err(Error::invalid("patch side and channels must be positive"));
        }
        let patches = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut r = rng.split(i as u64);
                let clean = synth_clean_patch(side, channels, &mut r);
                let spec = match level {
                    Level::Custom => DistortionSpec::none(),
                    l => DistortionSpec::sample(l, &mut r)?,
                };
                let distorted = apply_distortion(&clean, &spec, &mut r)?;
                Ok(Patch { clean, distorted })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatchSet { patches })
    }

    pub fn from_pairs(patches: Vec<Patch>) -> Result<Self> {
        for p in &patches {
            if !p.clean.same_dims(&p.distorted) {
                return Err(Error::invalid("clean and distorted patches differ in shape"));
            }
        }
        Ok(PatchSet { patches })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}
