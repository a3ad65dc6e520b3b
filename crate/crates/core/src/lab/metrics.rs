//! Restoration losses and image quality metrics.

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference over every element of every pair.
pub fn l1_loss(pred: &[FeatureMap], target: &[FeatureMap]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid("l1_loss needs equally many, non-zero predictions and targets"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        check_pair(p, t)?;
        sum += p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += p.data().len();
    }
    Ok(sum / n as f64)
}

/// Mean absolute difference of one pair.
pub fn l1_distance(pred: &FeatureMap, target: &FeatureMap) -> Result<f64> {
    check_pair(pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.data().len() as f64)
}

pub fn mse(img: &FeatureMap, reference: &FeatureMap) -> Result<f64> {
    check_pair(img, reference)?;
    let sum: f64 = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / img.data().len() as f64)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(img: &FeatureMap, reference: &FeatureMap, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr peak must be positive"));
    }
    let m = mse(img, reference)?;
    if m.is_nan() {
        return Ok(f64::NAN);
    }
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

/// Mean local SSIM over all 8x8 windows (stride 1, uniform weights, peak 1),
/// averaged over channels.
pub fn ssim(img: &FeatureMap, reference: &FeatureMap) -> Result<f64> {
    check_pair(img, reference)?;
    let (h, w, c) = img.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let windows = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let a = img.pixel(y, x)[ch];
                        let b = reference.pixel(y, x)[ch];
                        sa += a;
                        sb += b;
                        saa += a * a;
                        sbb += b * b;
                        sab += a * b;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
        total += acc / windows as f64;
    }
    Ok(total / c as f64)
}
