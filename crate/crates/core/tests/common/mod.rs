#![allow(dead_code)]

use t1cl_core::kernel::uniform_ranks;
use t1cl_core::{KernelFormat, Rng, ScalePolicy, TnKernel};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Max-norm relative error of two vectors, scaled by the reference magnitude.
pub fn vec_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite difference of `f` along every coordinate of `point`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// Random kernel with `I <= 6`, `J <= 4`, ranks `<= 3`.
pub fn random_kernel(rng: &mut Rng, format: KernelFormat, p: usize, shared: bool) -> TnKernel {
    let i = 1 + rng.below(6);
    let j = 1 + rng.below(4);
    let ranks = if shared && format == KernelFormat::Tr || shared && format == KernelFormat::Tt && p >= 4 {
        uniform_ranks(format, p, 1 + rng.below(3))
    } else {
        (0..format.rank_len(p)).map(|_| 1 + rng.below(3)).collect()
    };
    TnKernel::init(format, p, i, j, &ranks, shared, rng, ScalePolicy::Uniform(1.0)).unwrap()
}
