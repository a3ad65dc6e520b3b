use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use t1cl_core::lab::{ablation_study, evaluate, feature_histogram, train as run_training, PatchSet};
use t1cl_core::owan::MicroOwanNet;
use t1cl_core::verify::{
    bench as bench_rows, gradcheck_kernel, gradcheck_layer, gradcheck_network, oracle_sweep, GradRow,
    BENCH_CSV_HEADER,
};
use t1cl_core::{Error, Rng};

use crate::config::{ConfigError, RunConfig};

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

pub enum Failure {
    Verification(String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Library(Error::InvalidArgument(e.to_string()))
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Capacity(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        Error::InvalidState(_) => EXIT_VERIFY,
    }
}

type CmdResult = Result<(), Failure>;

fn emit(csv: &str) {
    let mut out = std::io::stdout().lock();
    // A closed pipe is not an error worth reporting.
    let _ = out.write_all(csv.as_bytes());
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn oracle(config: &RunConfig, inject_fault: bool) -> CmdResult {
    let rows = oracle_sweep(&config.sweep_config(), inject_fault)?;
    let mut csv = String::from("format,order,shared,instances,max_rel_err,passed\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{:.3e},{}", r.format, r.order, r.shared, r.instances, r.max_rel_err, r.passed()).unwrap();
    }
    emit(&csv);
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} oracle rows above tolerance")));
    }
    Ok(())
}

pub fn gradcheck(config: &RunConfig, inject_fault: bool) -> CmdResult {
    let seed = config.train.seed;
    let instances = config.verify.instances;
    let mut rows: Vec<GradRow> = gradcheck_kernel(instances, seed, inject_fault)?;
    rows.extend(gradcheck_layer(instances, seed, inject_fault)?);
    let mut net = config.net_config()?;
    net.zero_head = false;
    rows.push(gradcheck_network(&net, seed, inject_fault)?);
    let mut csv = String::from("level,case,instances,max_rel_err,tolerance,passed\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{:.3e},{:e},{}",
            r.level,
            r.case,
            r.instances,
            r.max_rel_err,
            r.tolerance,
            r.passed()
        )
        .unwrap();
    }
    emit(&csv);
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} gradient rows above tolerance")));
    }
    Ok(())
}

pub fn bench(config: &RunConfig) -> CmdResult {
    let b = &config.bench;
    let rows = bench_rows(b.in_dim, b.out_dim, b.rank, b.shared, b.max_order, b.reps, config.train.seed)?;
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    emit(&csv);
    Ok(())
}

fn test_set(config: &RunConfig, image_channels: usize) -> Result<PatchSet, Failure> {
    let t = &config.train;
    Ok(PatchSet::generate(
        t.test_patches,
        t.patch_side,
        image_channels,
        config.level()?,
        &Rng::new(t.seed).split(2),
    )?)
}

pub fn train(config: &RunConfig) -> CmdResult {
    let t = &config.train;
    let net_config = config.net_config()?;
    let root = Rng::new(t.seed);
    let trainset = PatchSet::generate(t.train_patches, t.patch_side, net_config.image_channels, config.level()?, &root.split(1))?;
    let testset = test_set(config, net_config.image_channels)?;
    let mut net = MicroOwanNet::init(&net_config, &mut root.split(3))?;
    let report = run_training(&mut net, &trainset, &config.train_config())?;

    let out = &config.io.out_dir;
    ensure_dir(out)?;
    let checkpoint = config.checkpoint_path();
    net.save(&checkpoint)?;

    let mut loss = String::from("epoch,loss\n");
    writeln!(loss, "0,{:.9}", report.initial_loss).unwrap();
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(loss, "{},{l:.9}", e + 1).unwrap();
    }
    write_file(&out.join("loss.csv"), &loss)?;

    let mut eval = String::from("set,patches,psnr,ssim,distorted_psnr,distorted_ssim,l1\n");
    if !testset.is_empty() {
        let e = evaluate(&net, &testset, None)?;
        writeln!(
            eval,
            "test,{},{:.6},{:.6},{:.6},{:.6},{:.9}",
            testset.len(),
            e.psnr,
            e.ssim,
            e.distorted_psnr,
            e.distorted_ssim,
            e.l1
        )
        .unwrap();
    }
    write_file(&out.join("eval.csv"), &eval)?;
    emit(&eval);
    eprintln!(
        "t1cl: {} params, {} steps, loss {:.6} -> {:.6}, checkpoint {}",
        net.param_count(),
        report.steps,
        report.initial_loss,
        report.final_loss(),
        checkpoint.display()
    );
    Ok(())
}

pub fn ablate(config: &RunConfig) -> CmdResult {
    let net = MicroOwanNet::load(&config.checkpoint_path())?;
    let testset = test_set(config, net.image_channels())?;
    let table = ablation_study(&net, &testset)?;
    let csv = table.to_csv();
    ensure_dir(&config.io.out_dir)?;
    write_file(&config.io.out_dir.join("ablation.csv"), &csv)?;
    emit(&csv);
    Ok(())
}

pub fn hist(config: &RunConfig) -> CmdResult {
    let net = MicroOwanNet::load(&config.checkpoint_path())?;
    let testset = test_set(config, net.image_channels())?;
    let block = config.io.hist_block;
    let h = feature_histogram(&net, &testset, block)?;
    let csv = h.to_csv();
    ensure_dir(&config.io.out_dir)?;
    write_file(&config.io.out_dir.join(format!("hist_block{block}.csv")), &csv)?;
    emit(&csv);
    Ok(())
}
