mod common;

use common::*;
use t1cl_core::lab::*;
use t1cl_core::owan::{MicroOwanNet, NetConfig, OpKind};
use t1cl_core::{DenseTensor, Error, FeatureMap, Rng};

fn random_image(rng: &mut Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.next_f64()).collect()).unwrap()
}

/// Two-pass local statistics per 8x8 window.
fn ssim_oracle(a: &FeatureMap, b: &FeatureMap, ch: usize) -> f64 {
    let (h, w, _) = a.dims();
    let win = 8;
    let mut vals = Vec::new();
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let xs: Vec<f64> = (0..win * win).map(|t| a.pixel(y0 + t / win, x0 + t % win)[ch]).collect();
            let ys: Vec<f64> = (0..win * win).map(|t| b.pixel(y0 + t / win, x0 + t % win)[ch]).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
            let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
            let (c1, c2) = (1e-4, 9e-4);
            vals.push((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn ssim_pair() -> (FeatureMap, FeatureMap) {
    let a = FeatureMap::new(16, 16, 1, (0..256).map(|i| ((i * 37 % 101) as f64) / 100.0).collect()).unwrap();
    let b = FeatureMap::new(16, 16, 1, a.data().iter().enumerate().map(|(i, v)| (v * 0.8 + 0.1 + 0.05 * ((i % 5) as f64 - 2.0)).clamp(0.0, 1.0)).collect()).unwrap();
    (a, b)
}

#[test]
fn ssim_fixed_pair_regression() {
    let (a, b) = ssim_pair();
    let oracle = ssim_oracle(&a, &b, 0);
    let got = ssim(&a, &b).unwrap();
    assert!((got - oracle).abs() <= 1e-12, "{got} vs {oracle}");
    assert!((got - SSIM_FIXED_PAIR).abs() <= 1e-12, "{got:.17}");
}

const SSIM_FIXED_PAIR: f64 = 0.937_229_095_883_237_3;

#[test]
fn ssim_properties() {
    let mut rng = Rng::new(1);
    let a = random_image(&mut rng, 12, 10, 3);
    let b = random_image(&mut rng, 12, 10, 3);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-15);
    let per_channel: f64 = (0..3).map(|c| ssim_oracle(&a, &b, c)).sum::<f64>() / 3.0;
    assert!((ssim(&a, &b).unwrap() - per_channel).abs() <= 1e-12);
    let (p, _) = ssim_pair();
    let inv = FeatureMap::new(16, 16, 1, p.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let s = ssim(&p, &inv).unwrap();
    assert!(s < 0.0, "anticorrelated ssim {s}");
    assert!(ssim(&FeatureMap::zeros(4, 4, 1), &FeatureMap::zeros(4, 4, 1)).is_err());
}

#[test]
fn l1_and_psnr_match_loop_oracles() {
    let mut rng = Rng::new(2);
    let preds: Vec<FeatureMap> = (0..3).map(|_| random_image(&mut rng, 5, 6, 2)).collect();
    let targets: Vec<FeatureMap> = (0..3).map(|_| random_image(&mut rng, 5, 6, 2)).collect();
    let mut sum = 0.0;
    let mut n = 0;
    for (p, t) in preds.iter().zip(&targets) {
        for y in 0..5 {
            for x in 0..6 {
                for c in 0..2 {
                    sum += (p.pixel(y, x)[c] - t.pixel(y, x)[c]).abs();
                    n += 1;
                }
            }
        }
    }
    assert!(rel_err(l1_loss(&preds, &targets).unwrap(), sum / n as f64, 1e-300) <= 1e-12);

    let (a, b) = (&preds[0], &targets[0]);
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 60.0;
    let want = 10.0 * (1.0 / mse).log10();
    assert!((psnr(a, b, 1.0).unwrap() - want).abs() <= 1e-9);
    assert_eq!(psnr(a, b, 1.0).unwrap(), psnr(b, a, 1.0).unwrap());
    assert!((psnr(a, b, 2.0).unwrap() - (want + 20.0 * 2f64.log10())).abs() <= 1e-9);
    assert!(psnr(a, &FeatureMap::zeros(5, 6, 1), 1.0).is_err());
}

fn scalar_adam_oracle(theta0: f64, steps: usize) -> Vec<f64> {
    let (a, b1, b2, eps) = (0.001, 0.9, 0.99, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - f64::powi(b1, t as i32));
        let vh = v / (1.0 - f64::powi(b2, t as i32));
        theta -= a * mh / (vh.sqrt() + eps);
        out.push(theta);
    }
    out
}

const ADAM_QUADRATIC: [f64; 3] = [0.999000000005, 0.998000023950316, 0.9970000877629944];

#[test]
fn adam_on_quadratic() {
    let mut theta = DenseTensor::vector(vec![1.0]).unwrap();
    let mut adam = AdamState::new(&[&theta]);
    let oracle = scalar_adam_oracle(1.0, 3);
    let mut prev = 1.0;
    for (t, want) in oracle.iter().enumerate() {
        let g = DenseTensor::vector(vec![2.0 * theta.data()[0]]).unwrap();
        adam.step(&mut [&mut theta], &[g]).unwrap();
        let v = theta.data()[0];
        assert!(v * v < prev * prev);
        prev = v;
        assert!((v - want).abs() <= 1e-15);
        assert!((v - ADAM_QUADRATIC[t]).abs() <= 1e-15, "step {t}: {v:.17}");
    }
    assert_eq!(adam.step_count(), 3);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = DenseTensor::new(vec![2, 2], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
    let before = p.clone();
    let mut adam = AdamState::new(&[&p]);
    for _ in 0..5 {
        adam.step(&mut [&mut p], &[DenseTensor::zeros(&[2, 2]).unwrap()]).unwrap();
    }
    assert_eq!(p, before);
    assert!(adam.step(&mut [&mut p], &[DenseTensor::zeros(&[3]).unwrap()]).is_err());
}

#[test]
fn cosine_schedule() {
    let (hi, lo) = (0.001, 1e-5);
    assert_eq!(cosine_lr(0, 100, hi, lo).unwrap(), hi);
    assert!((cosine_lr(100, 100, hi, lo).unwrap() - lo).abs() < 1e-18);
    assert!((cosine_lr(50, 100, hi, lo).unwrap() - (hi + lo) / 2.0).abs() < 1e-18);
    let mut prev = f64::INFINITY;
    for t in 0..=100 {
        let v = cosine_lr(t, 100, hi, lo).unwrap();
        assert!(v <= prev);
        prev = v;
    }
    assert!(matches!(cosine_lr(101, 100, hi, lo), Err(Error::InvalidArgument(_))));
}

fn tiny_net(seed: u64) -> MicroOwanNet {
    let config = NetConfig { channels: 4, blocks: 1, zero_head: false, ..NetConfig::default() };
    MicroOwanNet::init(&config, &mut Rng::new(seed)).unwrap()
}

fn tiny_set(seed: u64, n: usize) -> PatchSet {
    PatchSet::generate(n, 12, 1, Level::Moderate, &Rng::new(seed)).unwrap()
}

#[test]
fn zero_epochs_leave_the_net_unchanged() {
    let mut net = tiny_net(1);
    let before = net.to_bytes();
    let report = train(&mut net, &tiny_set(2, 4), &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(net.to_bytes(), before);
    assert!(report.epoch_losses.is_empty());
    assert_eq!(report.final_loss(), report.initial_loss);
}

#[test]
fn zero_learning_rate_gives_a_flat_curve() {
    let mut net = tiny_net(3);
    let before = net.to_bytes();
    let cfg = TrainConfig { epochs: 3, batch: 3, lr: 0.0, ..TrainConfig::default() };
    let report = train(&mut net, &tiny_set(4, 7), &cfg).unwrap();
    assert_eq!(net.to_bytes(), before);
    assert!(report.epoch_losses.iter().all(|&l| l == report.initial_loss));
    assert_eq!(report.steps, 9);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let set = tiny_set(5, 16);
    let cfg = TrainConfig { epochs: 4, batch: 4, seed: 9, lr: 0.01, ..TrainConfig::default() };
    let mut a = tiny_net(6);
    let mut b = tiny_net(6);
    let ra = train(&mut a, &set, &cfg).unwrap();
    let rb = train(&mut b, &set, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ra, rb);
    assert!(ra.final_loss() < ra.initial_loss);
    let mut c = tiny_net(6);
    train(&mut c, &set, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn exploding_training_reports_divergence() {
    let mut net = tiny_net(7);
    let cfg = TrainConfig { epochs: 3, batch: 2, lr: 1e300, ..TrainConfig::default() };
    assert!(matches!(train(&mut net, &tiny_set(8, 4), &cfg), Err(Error::Divergence(_))));
}

#[test]
fn training_argument_errors() {
    let mut net = tiny_net(8);
    assert!(train(&mut net, &PatchSet::default(), &TrainConfig::default()).is_err());
    let cfg = TrainConfig { batch: 0, ..TrainConfig::default() };
    assert!(train(&mut net, &tiny_set(1, 2), &cfg).is_err());
    let cfg = TrainConfig { lr: -1.0, ..TrainConfig::default() };
    assert!(train(&mut net, &tiny_set(1, 2), &cfg).is_err());
}

#[test]
fn ablation_table_structure() {
    let net = tiny_net(9);
    let set = tiny_set(10, 5);
    let table = ablation_study(&net, &set).unwrap();
    assert_eq!(table.rows.len(), net.ops_per_block() + 1);
    let direct = evaluate(&net, &set, None).unwrap();
    assert_eq!(table.baseline().psnr, direct.psnr);
    assert_eq!(table.distorted_psnr, direct.distorted_psnr);
    assert_eq!(table.baseline().relative_psnr, direct.psnr_gain());
    for (k, row) in table.ablations().iter().enumerate() {
        assert_eq!(row.zeroed, Some(k));
        assert_eq!(row.psnr, evaluate(&net, &set, Some(k)).unwrap().psnr);
    }
    let csv = table.to_csv();
    assert!(csv.starts_with("zeroed,op,psnr,relative_psnr\nnone,baseline,"));
    assert_eq!(csv.lines().count(), table.rows.len() + 1);
}

#[test]
fn ablating_identity_in_a_zero_net_matches_baseline() {
    let config = NetConfig { ops: vec![OpKind::Identity, OpKind::Conv3x3], ..NetConfig::default() };
    let mut net = MicroOwanNet::init(&config, &mut Rng::new(11)).unwrap();
    net.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
    let table = ablation_study(&net, &tiny_set(12, 4)).unwrap();
    assert_eq!(table.rows[1].relative_psnr, table.baseline().relative_psnr);
    assert_eq!(table.baseline().relative_psnr, 0.0);
    assert_eq!(table.spread(), 0.0);
}

#[test]
fn histogram_of_a_zero_net_is_one_bin() {
    let mut net = tiny_net(13);
    net.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
    let set = tiny_set(14, 3);
    let hist = feature_histogram(&net, &set, 0).unwrap();
    let zero_bin = hist.bin_of(0.0);
    for counts in &hist.counts {
        assert_eq!(counts.len(), HISTOGRAM_BINS);
        assert_eq!(counts[zero_bin], (12 * 12 * 4 * 3) as u64);
        assert_eq!(counts.iter().sum::<u64>(), counts[zero_bin]);
    }
    assert!(hist.lo < 0.0 && hist.hi > 0.0);
}

#[test]
fn histogram_conserves_counts() {
    let net = tiny_net(15);
    let set = tiny_set(16, 3);
    let hist = feature_histogram(&net, &set, 0).unwrap();
    assert_eq!(hist.labels, vec!["conv1x1", "conv3x3", "dilated3x3", "avgpool3x3"]);
    for (counts, (lo, hi)) in hist.counts.iter().zip(&hist.extents) {
        assert_eq!(counts.iter().sum::<u64>(), (12 * 12 * 4 * 3) as u64);
        assert!(*lo >= hist.lo && *hi <= hist.hi);
    }
    assert!(hist.range_ratio() >= 1.0);
    let csv = hist.to_csv();
    assert!(csv.starts_with("bin,lo,hi,conv1x1,conv3x3,dilated3x3,avgpool3x3\n"));
    assert_eq!(csv.lines().count(), HISTOGRAM_BINS + 1);
    assert!(feature_histogram(&net, &set, 1).is_err());
}

#[test]
fn pnm_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(17);
    for (magic, c) in [("P5", 1), ("P6", 3)] {
        let (w, h) = (7, 5);
        let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
        bytes.extend((0..w * h * c).map(|_| rng.below(256) as u8));
        let path = dir.path().join(format!("img.{}", if c == 1 { "pgm" } else { "ppm" }));
        std::fs::write(&path, &bytes).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!(img.dims(), (h, w, c));
        let out = dir.path().join("copy");
        write_pnm(&out, &img).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), bytes);
    }
    assert!(matches!(read_pnm(&dir.path().join("missing.pgm")), Err(Error::Io { .. })));
}

#[test]
fn distortion_levels_degrade_in_order() {
    let rng = Rng::new(18);
    let mean_psnr = |level| {
        let set = PatchSet::generate(20, 32, 1, level, &rng).unwrap();
        set.patches.iter().map(|p| psnr(&p.distorted, &p.clean, 1.0).unwrap()).sum::<f64>() / 20.0
    };
    let (m, o, s) = (mean_psnr(Level::Mild), mean_psnr(Level::Moderate), mean_psnr(Level::Severe));
    assert!(m > o && o > s, "{m} {o} {s}");
}
