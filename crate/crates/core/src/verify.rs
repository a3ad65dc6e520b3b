//! Self-checks reported by the command-line tool: factorized-vs-dense sweeps,
//! finite-difference gradient reports and cost tables.
//!
//! Every check takes an `inject_fault` switch that deliberately breaks the
//! quantity under test, so callers can confirm the check is able to fail.

use std::time::Instant;

use crate::error::Result;
use crate::feature::FeatureMap;
use crate::kernel::{uniform_ranks, KernelFormat, ScalePolicy, TnKernel, Workspace, DENSE_ENTRY_LIMIT};
use crate::layer::{Activation, T1clLayer};
use crate::owan::{MicroOwanNet, NetConfig};
use crate::rng::Rng;
use crate::tensor::{contract_last, dense_mult_count, dense_param_count, DenseTensor};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const LAYER_GRAD_TOLERANCE: f64 = 1e-6;
pub const NET_GRAD_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;

pub const FORMATS: [KernelFormat; 3] = [KernelFormat::Cp, KernelFormat::Tt, KernelFormat::Tr];

/// Max-norm error of `got` relative to the largest entry of `want`.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Max-norm error of `got` relative to the largest entry of `magnitude`, the same
/// contraction taken over absolute values. Unlike [`max_rel_err`] this stays meaningful
/// when the exact result cancels to nearly zero.
pub fn max_err_over_magnitude(got: &[f64], want: &[f64], magnitude: &[f64]) -> f64 {
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale_of(magnitude)
}

fn scale_of(v: &[f64]) -> f64 {
    let s = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if s == 0.0 {
        1.0
    } else {
        s
    }
}

fn abs_tensor(t: &DenseTensor) -> Result<DenseTensor> {
    DenseTensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.abs()).collect())
}

fn grad_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Random kernel with `I <= max_in`, `J <= max_out` and ranks `<= max_rank`; ranks are
/// uniform where sharing requires it.
pub fn random_kernel(
    rng: &mut Rng,
    format: KernelFormat,
    order: usize,
    shared: bool,
    (max_in, max_out, max_rank): (usize, usize, usize),
) -> Result<TnKernel> {
    let i = 1 + rng.below(max_in);
    let j = 1 + rng.below(max_out);
    let uniform = shared && (format == KernelFormat::Tr || format == KernelFormat::Tt && order >= 4);
    let ranks = if uniform {
        uniform_ranks(format, order, 1 + rng.below(max_rank))
    } else {
        (0..format.rank_len(order)).map(|_| 1 + rng.below(max_rank)).collect()
    };
    TnKernel::init(format, order, i, j, &ranks, shared, rng, ScalePolicy::Uniform(1.0))
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub format: KernelFormat,
    pub order: usize,
    pub shared: bool,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl OracleRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= ORACLE_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_order: usize,
    pub max_in: usize,
    pub max_out: usize,
    pub max_rank: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            instances: 100,
            seed: 0,
            max_order: 4,
            max_in: 6,
            max_out: 4,
            max_rank: 3,
        }
    }
}

/// Compares factorized contraction with dense reconstruction followed by `contract_last`
/// for every format, order and sharing mode. Errors are measured against the
/// absolute-value contraction. With `inject_fault`, one core entry is
/// altered after the dense reference has been built.
pub fn oracle_sweep(cfg: &SweepConfig, inject_fault: bool) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    let base = Rng::new(cfg.seed);
    let mut stream = 0;
    for format in FORMATS {
        for order in 1..=cfg.max_order {
            for shared in [false, true] {
                let mut rng = base.split(stream);
                stream += 1;
                let mut worst = 0.0f64;
                for _ in 0..cfg.instances {
                    let mut k = random_kernel(&mut rng, format, order, shared, (cfg.max_in, cfg.max_out, cfg.max_rank))?;
                    let x = random_vec(&mut rng, k.in_dim());
                    let xt = DenseTensor::vector(x.clone())?;
                    let dense = k.reconstruct_dense()?;
                    let want = contract_last(&dense, &xt, order)?;
                    let magnitude = contract_last(&abs_tensor(&dense)?, &abs_tensor(&xt)?, order)?;
                    if inject_fault {
                        k.cores_mut()[0].data_mut()[0] += 0.5;
                    }
                    let got = k.contract(&xt)?;
                    worst = worst.max(max_err_over_magnitude(got.data(), want.data(), magnitude.data()));
                }
                rows.push(OracleRow {
                    format,
                    order,
                    shared,
                    instances: cfg.instances,
                    max_rel_err: worst,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub level: &'static str,
    pub case: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64]) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let plus = f(&p);
            p[i] = orig - FD_STEP;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

fn worst_grad_err(analytic: &[f64], numeric: &[f64], skew: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| grad_err(a * skew, *n))
        .fold(0.0, f64::max)
}

/// Finite-difference check of `contract_grad` on the objective `<u, contract(x)>`.
pub fn gradcheck_kernel(instances: usize, seed: u64, inject_fault: bool) -> Result<Vec<GradRow>> {
    let skew = if inject_fault { 1.01 } else { 1.0 };
    let base = Rng::new(seed);
    let mut rows = Vec::new();
    for (s, format) in FORMATS.into_iter().enumerate() {
        let mut rng = base.split(s as u64);
        let mut worst = 0.0f64;
        for n in 0..instances {
            let order = 1 + n % 4;
            let shared = n % 2 == 1;
            let k = random_kernel(&mut rng, format, order, shared, (6, 4, 3))?;
            let x = random_vec(&mut rng, k.in_dim());
            let u = random_vec(&mut rng, k.out_dim());
            let (gc, gx) = k.contract_grad(&DenseTensor::vector(x.clone())?, &DenseTensor::vector(u.clone())?)?;
            let objective = |k: &TnKernel, x: &[f64]| -> f64 {
                let y = k.contract(&DenseTensor::vector(x.to_vec()).unwrap()).unwrap();
                y.data().iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let fd = central_diff(&mut |v| objective(&k, v), &x);
            worst = worst.max(worst_grad_err(gx.data(), &fd, skew));
            for (c, g) in gc.iter().enumerate() {
                let fd = central_diff(
                    &mut |v| {
                        let mut kk = k.clone();
                        kk.cores_mut()[c].data_mut().copy_from_slice(v);
                        objective(&kk, &x)
                    },
                    k.cores()[c].data(),
                );
                worst = worst.max(worst_grad_err(g.data(), &fd, skew));
            }
        }
        rows.push(GradRow {
            level: "kernel",
            case: format.to_string(),
            instances,
            max_rel_err: worst,
            tolerance: LAYER_GRAD_TOLERANCE,
        });
    }
    Ok(rows)
}

fn random_map(rng: &mut Rng, h: usize, w: usize, c: usize) -> Result<FeatureMap> {
    FeatureMap::new(h, w, c, random_vec(rng, h * w * c))
}

/// Finite-difference check of the relu layer backward pass on `sum(out)` over 3x3 maps.
/// Instances whose pre-activations come within `1e-3` of the kink are redrawn.
pub fn gradcheck_layer(instances: usize, seed: u64, inject_fault: bool) -> Result<Vec<GradRow>> {
    let skew = if inject_fault { 1.01 } else { 1.0 };
    let base = Rng::new(seed);
    let mut rows = Vec::new();
    for (s, format) in FORMATS.into_iter().enumerate() {
        let mut rng = base.split(100 + s as u64);
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < instances {
            let order = 1 + done % 3;
            let add_one = done % 2 == 0;
            let ranks = uniform_ranks(format, order, 1 + rng.below(3));
            let k = TnKernel::init(format, order, 3 + add_one as usize, 2, &ranks, rng.bernoulli(0.5), &mut rng, ScalePolicy::Uniform(1.0))?;
            let layer = T1clLayer::new(k, add_one, Activation::Relu)?;
            let input = random_map(&mut rng, 3, 3, 3)?;
            let (out, cache) = layer.forward(&input)?;
            if cache.preactivation().data().iter().any(|v| v.abs() <= 1e-3) {
                continue;
            }
            let ones = FeatureMap::filled(out.height(), out.width(), out.channels(), 1.0);
            let (gc, gi) = layer.backward(&cache, &ones)?;
            let total = |l: &T1clLayer, m: &FeatureMap| -> f64 { l.forward(m).unwrap().0.data().iter().sum() };
            let fd = central_diff(&mut |v| total(&layer, &FeatureMap::new(3, 3, 3, v.to_vec()).unwrap()), input.data());
            worst = worst.max(worst_grad_err(gi.data(), &fd, skew));
            for (c, g) in gc.iter().enumerate() {
                let fd = central_diff(
                    &mut |v| {
                        let mut l = layer.clone();
                        l.kernel_mut().cores_mut()[c].data_mut().copy_from_slice(v);
                        total(&l, &input)
                    },
                    layer.kernel().cores()[c].data(),
                );
                worst = worst.max(worst_grad_err(g.data(), &fd, skew));
            }
            done += 1;
        }
        rows.push(GradRow {
            level: "layer",
            case: format.to_string(),
            instances,
            max_rel_err: worst,
            tolerance: LAYER_GRAD_TOLERANCE,
        });
    }
    Ok(rows)
}

/// Finite-difference check of a whole net on `sum |net(x) - target|` over one 8x8 patch.
/// The target sits 0.5 away from the output and nets with a fusion pre-activation within
/// `1e-4` of zero are redrawn, so no kink is crossed.
pub fn gradcheck_network(config: &NetConfig, seed: u64, inject_fault: bool) -> Result<GradRow> {
    let skew = if inject_fault { 1.01 } else { 1.0 };
    let mut rng = Rng::new(seed).split(200);
    let side = 8;
    let ic = config.image_channels;
    let (net, input, target) = loop {
        let net = MicroOwanNet::init(config, &mut rng)?;
        let input = random_map(&mut rng, side, side, ic)?;
        let (out, cache) = net.forward(&input, None)?;
        let clear = (0..net.blocks().len())
            .all(|b| cache.block(b).fusion().preactivation().data().iter().all(|v| v.abs() > 1e-4));
        if clear {
            let shifted = out
                .data()
                .iter()
                .map(|v| v + if rng.bernoulli(0.5) { 0.5 } else { -0.5 })
                .collect();
            let target = FeatureMap::new(side, side, ic, shifted)?;
            break (net, input, target);
        }
    };
    let loss = |n: &MicroOwanNet, x: &FeatureMap| -> f64 {
        let out = n.predict(x).unwrap();
        out.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum()
    };
    let (out, cache) = net.forward(&input, None)?;
    let signs = out.data().iter().zip(target.data()).map(|(a, b)| (a - b).signum()).collect();
    let upstream = FeatureMap::new(side, side, ic, signs)?;
    let mut grads = net.zero_grads();
    let gi = net.backward(&cache, &upstream, &mut grads)?;
    let fd = central_diff(&mut |v| loss(&net, &FeatureMap::new(side, side, ic, v.to_vec()).unwrap()), input.data());
    let mut worst = worst_grad_err(gi.data(), &fd, skew);
    for (s, g) in grads.iter().enumerate() {
        let fd = central_diff(
            &mut |v| {
                let mut n = net.clone();
                n.params_mut()[s].data_mut().copy_from_slice(v);
                loss(&n, &input)
            },
            net.params()[s].data(),
        );
        worst = worst.max(worst_grad_err(g.data(), &fd, skew));
    }
    Ok(GradRow {
        level: "network",
        case: format!("{}-block order-{}", net.blocks().len(), config.fusion.order),
        instances: 1,
        max_rel_err: worst,
        tolerance: NET_GRAD_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub format: KernelFormat,
    pub order: usize,
    pub rank: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub shared: bool,
    pub params: u64,
    pub flops: u64,
    pub flop_bound: u64,
    pub dense_params: u128,
    pub dense_mults: u128,
    /// Mean nanoseconds per factorized contraction.
    pub wall_ns: f64,
    /// Mean nanoseconds per dense `contract_last`, when the dense kernel fits in memory.
    pub dense_wall_ns: Option<f64>,
}

pub const BENCH_CSV_HEADER: &str = "format,order,rank,in_dim,out_dim,shared,params,flops,flop_bound,dense_params,dense_mults,wall_ns,dense_wall_ns";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.1},{}",
            self.format,
            self.order,
            self.rank,
            self.in_dim,
            self.out_dim,
            self.shared,
            self.params,
            self.flops,
            self.flop_bound,
            self.dense_params,
            self.dense_mults,
            self.wall_ns,
            self.dense_wall_ns.map_or_else(String::new, |v| format!("{v:.1}"))
        )
    }
}

/// Cost table for one kernel shape across formats and orders `1..=max_order`.
pub fn bench(
    in_dim: usize,
    out_dim: usize,
    rank: usize,
    shared: bool,
    max_order: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rng = Rng::new(seed);
    let reps = reps.max(1);
    let mut rows = Vec::new();
    for format in FORMATS {
        for order in 1..=max_order {
            let ranks = uniform_ranks(format, order, rank);
            let k = TnKernel::init(format, order, in_dim, out_dim, &ranks, shared, &mut rng, ScalePolicy::VariancePreserving)?;
            let x = random_vec(&mut rng, in_dim);
            let mut y = vec![0.0; out_dim];
            let mut ws = Workspace::new();
            let t = Instant::now();
            for _ in 0..reps {
                k.contract_into(std::hint::black_box(&x), &mut y, &mut ws);
            }
            let wall_ns = t.elapsed().as_nanos() as f64 / reps as f64;
            let dense_params = dense_param_count(order, in_dim, out_dim);
            let dense_wall_ns = if dense_params <= DENSE_ENTRY_LIMIT {
                let w = k.reconstruct_dense()?;
                let xt = DenseTensor::vector(x.clone())?;
                let dense_reps = (reps / 10).max(1);
                let t = Instant::now();
                for _ in 0..dense_reps {
                    std::hint::black_box(contract_last(&w, &xt, order)?);
                }
                Some(t.elapsed().as_nanos() as f64 / dense_reps as f64)
            } else {
                None
            };
            rows.push(BenchRow {
                format,
                order,
                rank,
                in_dim,
                out_dim,
                shared,
                params: k.param_count(),
                flops: k.flop_count(),
                flop_bound: k.flop_bound(),
                dense_params,
                dense_mults: dense_mult_count(order, in_dim, out_dim),
                wall_ns: wall_ns.max(f64::MIN_POSITIVE),
                dense_wall_ns,
            });
        }
    }
    Ok(rows)
}
