//! Synthetic mixed distortions.
//!
//! Applied in a fixed order: Gaussian blur (5x5 truncated kernel, edge-clamped),
//! additive Gaussian noise, salt-and-pepper replacement, clip to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Mild,
    Moderate,
    Severe,
    Custom,
}

/// Parameter ranges `[lo, hi]` of one named level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRanges {
    pub noise_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub salt_pepper: (f64, f64),
}

impl Level {
    /// Synthetic calibration; these are not the levels of any published benchmark.
    pub fn ranges(self) -> Option<LevelRanges> {
        match self {
            Level::Mild => Some(LevelRanges {
                noise_sigma: (0.01, 0.03),
                blur_sigma: (0.5, 1.0),
                salt_pepper: (0.0, 0.01),
            }),
            Level::Moderate => Some(LevelRanges {
                noise_sigma: (0.03, 0.06),
                blur_sigma: (1.0, 2.0),
                salt_pepper: (0.01, 0.03),
            }),
            Level::Severe => Some(LevelRanges {
                noise_sigma: (0.06, 0.10),
                blur_sigma: (2.0, 3.0),
                salt_pepper: (0.03, 0.06),
            }),
            Level::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Mild => "mild",
            Level::Moderate => "moderate",
            Level::Severe => "severe",
            Level::Custom => "custom",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(Level::Mild),
            "moderate" => Ok(Level::Moderate),
            "severe" => Ok(Level::Severe),
            "custom" => Ok(Level::Custom),
            other => Err(Error::invalid(format!("unknown distortion level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub gaussian_noise_sigma: f64,
    pub blur_sigma: f64,
    pub salt_pepper_prob: f64,
    pub level: Level,
}

impl DistortionSpec {
    pub fn none() -> Self {
        DistortionSpec {
            gaussian_noise_sigma: 0.0,
            blur_sigma: 0.0,
            salt_pepper_prob: 0.0,
            level: Level::Custom,
        }
    }

    pub fn custom(noise_sigma: f64, blur_sigma: f64, salt_pepper_prob: f64) -> Result<Self> {
        let spec = DistortionSpec {
            gaussian_noise_sigma: noise_sigma,
            blur_sigma,
            salt_pepper_prob,
            level: Level::Custom,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.gaussian_noise_sigma >= 0.0
            && self.blur_sigma >= 0.0
            && (0.0..=1.0).contains(&self.salt_pepper_prob)
            && self.gaussian_noise_sigma.is_finite()
            && self.blur_sigma.is_finite();
        if !ok {
            return Err(Error::invalid(format!("invalid distortion parameters {self:?}")));
        }
        Ok(())
    }

    /// Draws each parameter uniformly from the level's range.
    pub fn sample(level: Level, rng: &mut Rng) -> Result<Self> {
        let r = level
            .ranges()
            .ok_or_else(|| Error::invalid("the custom level has no range to sample from"))?;
        Ok(DistortionSpec {
            gaussian_noise_sigma: rng.uniform_closed(r.noise_sigma),
            blur_sigma: rng.uniform_closed(r.blur_sigma),
            salt_pepper_prob: rng.uniform_closed(r.salt_pepper),
            level,
        })
    }
}

impl Rng {
    fn uniform_closed(&mut self, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            self.uniform(lo, hi)
        } else {
            lo
        }
    }
}

/// Normalized 5-tap Gaussian.
fn gaussian_taps(sigma: f64) -> [f64; 5] {
    let mut taps = [0.0; 5];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *t = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable 5x5 Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &FeatureMap, sigma: f64) -> FeatureMap {
    if sigma <= 0.0 {
        return img.clone();
    }
    let taps = gaussian_taps(sigma);
    let (h, w, c) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let o = tmp.pixel_mut(y, x);
            for (t, &wt) in taps.iter().enumerate() {
                let sx = clamp(x as isize + t as isize - 2, w);
                for (ov, &v) in o.iter_mut().zip(img.pixel(y, sx)) {
                    *ov += wt * v;
                }
            }
        }
    }
    let mut out = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let o = out.pixel_mut(y, x);
            for (t, &wt) in taps.iter().enumerate() {
                let sy = clamp(y as isize + t as isize - 2, h);
                for (ov, &v) in o.iter_mut().zip(tmp.pixel(sy, x)) {
                    *ov += wt * v;
                }
            }
        }
    }
    out
}

/// Blur, then noise, then salt-and-pepper, then clip to `[0, 1]`.
pub fn apply_distortion(clean: &FeatureMap, spec: &DistortionSpec, rng: &mut Rng) -> Result<FeatureMap> {
    spec.validate()?;
    let mut out = gaussian_blur(clean, spec.blur_sigma);
    if spec.gaussian_noise_sigma > 0.0 {
        for v in out.data_mut() {
            *v += spec.gaussian_noise_sigma * rng.normal();
        }
    }
    if spec.salt_pepper_prob > 0.0 {
        for v in out.data_mut() {
            if rng.bernoulli(spec.salt_pepper_prob) {
                *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            }
        }
    }
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}
