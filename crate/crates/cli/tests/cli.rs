use std::path::Path;
use std::process::{Command, Output};

use t1cl_core::owan::{MicroOwanNet, NetConfig};
use t1cl_core::Rng;

fn t1cl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t1cl"))
        .args(args)
        .current_dir(dir)
        .env_remove("T1CL_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

const SMALL_TRAIN: &[&str] = &[
    "--set",
    "train.train_patches=8",
    "--set",
    "train.test_patches=3",
    "--set",
    "train.patch_side=12",
    "--set",
    "train.batch=4",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn oracle_passes_and_linear_rows_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = t1cl(&["oracle"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("format,order,shared,instances,max_rel_err,passed\n"));
    let rows = rows(&out);
    assert_eq!(rows.len(), 3 * 4 * 2);
    for r in &rows {
        let err: f64 = r[4].parse().unwrap();
        assert!(err <= 1e-9, "{r:?}");
        if r[1] == "1" {
            assert!(err <= 1e-12, "{r:?}");
        }
    }
}

#[test]
fn oracle_fault_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = t1cl(&["oracle", "--inject-fault", "--set", "verify.instances=5"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains(",false"));
}

#[test]
fn gradcheck_controls() {
    let dir = tempfile::tempdir().unwrap();
    let ok = t1cl(&["gradcheck", "--set", "verify.instances=5"], dir.path());
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let levels: Vec<String> = rows(&stdout(&ok)).into_iter().map(|r| r[0].clone()).collect();
    for level in ["kernel", "layer", "network"] {
        assert!(levels.iter().any(|l| l == level));
    }
    let bad = t1cl(&["gradcheck", "--inject-fault", "--set", "verify.instances=2"], dir.path());
    assert_eq!(code(&bad), 1);
}

#[test]
fn bench_columns_follow_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let o = t1cl(&["bench", "--set", "bench.reps=20", "--set", "bench.in_dim=5"], dir.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows = rows(&out);
    let cp: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "cp").collect();
    let params = |p: usize| cp[p - 1][col("params")].parse::<u64>().unwrap();
    assert_eq!(params(4), 2 * params(2));
    for w in cp.windows(2) {
        let a: u128 = w[0][col("dense_params")].parse().unwrap();
        let b: u128 = w[1][col("dense_params")].parse().unwrap();
        assert_eq!(b, 5 * a);
    }
    for r in &rows {
        assert!(r[col("wall_ns")].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn bench_is_deterministic_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let strip = |o: Output| -> Vec<String> {
        stdout(&o).lines().map(|l| l.split(',').take(11).collect::<Vec<_>>().join(",")).collect()
    };
    let a = strip(t1cl(&["bench", "--set", "bench.reps=5"], dir.path()));
    let b = strip(t1cl(&["bench", "--set", "bench.reps=5"], dir.path()));
    assert_eq!(a, b);
}

#[test]
fn train_zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(&["train", "--set", "train.epochs=0", "--set", "train.seed=5", "--set", "io.out_dir=run"], SMALL_TRAIN);
    let o = t1cl(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = std::fs::read(dir.path().join("run/model.t1cn")).unwrap();
    let fresh = MicroOwanNet::init(&NetConfig::default(), &mut Rng::new(5).split(3)).unwrap();
    assert_eq!(saved, fresh.to_bytes());
    let loss = std::fs::read_to_string(dir.path().join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);
    assert!(dir.path().join("run/eval.csv").exists());
}

#[test]
fn train_is_deterministic_and_seed_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, env_seed: Option<&str>| -> Vec<u8> {
        let set = format!("io.out_dir={out}");
        let args = with(&["train", "--set", "train.epochs=1", "--set", &set], SMALL_TRAIN);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_t1cl"));
        cmd.args(&args).current_dir(dir.path()).env_remove("T1CL_SEED");
        if let Some(s) = env_seed {
            cmd.env("T1CL_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        let mut bytes = std::fs::read(dir.path().join(out).join("model.t1cn")).unwrap();
        bytes.extend(std::fs::read(dir.path().join(out).join("loss.csv")).unwrap());
        bytes
    };
    let a = run("a", None);
    assert_eq!(a, run("b", None));
    assert_eq!(a, run("c", Some("0")));
    assert_ne!(a, run("d", Some("9")));
}

#[test]
fn ablate_and_hist_on_fresh_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train = with(&["train", "--set", "train.epochs=0", "--set", "net.zero_head=false"], SMALL_TRAIN);
    assert_eq!(code(&t1cl(&train, dir.path())), 0);

    let o = t1cl(&with(&["ablate"], SMALL_TRAIN), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&stdout(&o));
    let ops = NetConfig::default().ops.len();
    assert_eq!(table.len(), ops + 1);
    assert_eq!(table[0][0], "none");
    assert_eq!(std::fs::read_to_string(dir.path().join("t1cl-out/ablation.csv")).unwrap(), stdout(&o));

    let o = t1cl(&with(&["hist", "--set", "io.hist_block=1"], SMALL_TRAIN), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bins = rows(&stdout(&o));
    assert_eq!(bins.len(), 64);
    let per_op = 3 * 12 * 12 * NetConfig::default().channels as u64;
    for k in 0..ops {
        let total: u64 = bins.iter().map(|r| r[3 + k].parse::<u64>().unwrap()).sum();
        assert_eq!(total, per_op);
    }
    assert!(dir.path().join("t1cl-out/hist_block1.csv").exists());

    let o = t1cl(&with(&["hist", "--set", "io.hist_block=7"], SMALL_TRAIN), dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn exit_codes_for_config_io_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&t1cl(&["oracle", "--set", "kernel.colour=red"], dir.path())), 2);
    assert_eq!(code(&t1cl(&["oracle", "--set", "kernel.format=xx"], dir.path())), 2);
    assert_eq!(code(&t1cl(&["oracle", "--config", "missing.json"], dir.path())), 3);
    std::fs::write(dir.path().join("bad.json"), r#"{"kernel": {"order": 2, "extra": 1}}"#).unwrap();
    assert_eq!(code(&t1cl(&["oracle", "--config", "bad.json"], dir.path())), 2);
    std::fs::write(dir.path().join("junk.json"), "{ not json").unwrap();
    assert_eq!(code(&t1cl(&["oracle", "--config", "junk.json"], dir.path())), 2);
    assert_eq!(code(&t1cl(&["ablate", "--set", "io.out_dir=nowhere"], dir.path())), 3);
    std::fs::create_dir(dir.path().join("corrupt")).unwrap();
    std::fs::write(dir.path().join("corrupt/model.t1cn"), b"T1CN\x01garbage").unwrap();
    assert_eq!(code(&t1cl(&["ablate", "--set", "io.out_dir=corrupt"], dir.path())), 3);
    let diverge = with(
        &["train", "--set", "train.epochs=1", "--set", "train.lr=1e300", "--set", "net.zero_head=false"],
        SMALL_TRAIN,
    );
    assert_eq!(code(&t1cl(&diverge, dir.path())), 4);
}

#[test]
fn config_file_and_set_compose() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"verify": {"instances": 3, "max_order": 2}, "train": {"seed": 4}}"#,
    )
    .unwrap();
    let o = t1cl(&["oracle", "--config", "c.json", "--set", "verify.max_order=3"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = rows(&stdout(&o));
    assert_eq!(rows.len(), 3 * 3 * 2);
    assert!(rows.iter().all(|r| r[3] == "3"));
}

#[test]
fn help_lists_every_key_with_a_usable_default() {
    let dir = tempfile::tempdir().unwrap();
    let help = stdout(&t1cl(&["--help"], dir.path()));
    let mut doc = serde_json::Map::new();
    let mut listed = 0;
    for line in help.lines() {
        let Some((key, rest)) = line.trim_start().split_once(' ') else { continue };
        let Some((section, field)) = key.split_once('.') else { continue };
        if !line.starts_with("  ") || !rest.ends_with(']') {
            continue;
        }
        let default = &rest[rest.rfind(" [").unwrap() + 2..rest.len() - 1];
        let value: serde_json::Value = serde_json::from_str(default).unwrap();
        doc.entry(section).or_insert_with(|| serde_json::json!({}))[field] = value;
        listed += 1;
    }
    assert_eq!(listed, 36);
    for section in ["kernel", "net", "train", "verify", "bench", "io"] {
        assert!(doc.contains_key(section), "{section}");
    }
    std::fs::write(dir.path().join("all.json"), serde_json::Value::Object(doc).to_string()).unwrap();
    let o = t1cl(&["oracle", "--config", "all.json", "--set", "verify.instances=2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(help.contains("T1CL_SEED"));
}
