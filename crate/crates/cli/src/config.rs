//! Run configuration: JSON document, defaults, `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use t1cl_core::lab::{Level, TrainConfig};
use t1cl_core::owan::{FusionConfig, NetConfig, OpKind};
use t1cl_core::verify::SweepConfig;
use t1cl_core::{Activation, KernelFormat};

pub const SEED_ENV: &str = "T1CL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub format: String,
    pub order: usize,
    pub rank: usize,
    pub shared: bool,
    pub add1: bool,
    pub activation: String,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            format: "cp".into(),
            order: 2,
            rank: 8,
            shared: true,
            add1: false,
            activation: "leaky_relu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub blocks: usize,
    pub ops: Vec<String>,
    pub channels: usize,
    pub image_channels: usize,
    pub residual: bool,
    pub global_residual: bool,
    pub zero_head: bool,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = NetConfig::default();
        NetSection {
            blocks: d.blocks,
            ops: d.ops.iter().map(|k| k.name().to_string()).collect(),
            channels: d.channels,
            image_channels: d.image_channels,
            residual: d.residual,
            global_residual: d.global_residual,
            zero_head: d.zero_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_min: f64,
    pub level: String,
    pub train_patches: usize,
    pub test_patches: usize,
    pub patch_side: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch: d.batch,
            seed: d.seed,
            lr: d.lr,
            lr_min: d.lr_min,
            level: "moderate".into(),
            train_patches: 2000,
            test_patches: 500,
            patch_side: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub instances: usize,
    pub max_order: usize,
    pub max_in: usize,
    pub max_out: usize,
    pub max_rank: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let d = SweepConfig::default();
        VerifySection {
            instances: d.instances,
            max_order: d.max_order,
            max_in: d.max_in,
            max_out: d.max_out,
            max_rank: d.max_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
    pub shared: bool,
    pub max_order: usize,
    pub reps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            in_dim: 16,
            out_dim: 16,
            rank: 4,
            shared: false,
            max_order: 4,
            reps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub hist_block: usize,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out_dir: PathBuf::from("t1cl-out"),
            checkpoint: None,
            hist_block: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kernel: KernelSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub verify: VerifySection,
    pub bench: BenchSection,
    pub io: IoSection,
}

/// Every configuration key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("kernel.format", "fusion kernel format: cp | tt | tr"),
    ("kernel.order", "fusion order p (1 = ordinary 1x1 convolution)"),
    ("kernel.rank", "CP rank, or every TT/TR bond rank"),
    ("kernel.shared", "share cores across the p positions"),
    ("kernel.add1", "append a constant-1 channel before fusion"),
    ("kernel.activation", "fusion activation: identity | relu | leaky_relu"),
    ("net.blocks", "number of blocks"),
    ("net.ops", "operation bank: identity conv1x1 conv3x3 conv5x5 dilated3x3 avgpool3x3"),
    ("net.channels", "channels per operation"),
    ("net.image_channels", "image channels (1 = gray, 3 = RGB)"),
    ("net.residual", "skip connection around every block"),
    ("net.global_residual", "skip connection from input image to output"),
    ("net.zero_head", "start the output convolution at zero"),
    ("train.epochs", "training epochs"),
    ("train.batch", "mini-batch size"),
    ("train.seed", "master seed (overridden by T1CL_SEED)"),
    ("train.lr", "peak Adam learning rate"),
    ("train.lr_min", "final learning rate of the cosine schedule"),
    ("train.level", "distortion level: mild | moderate | severe"),
    ("train.train_patches", "training patches"),
    ("train.test_patches", "test patches"),
    ("train.patch_side", "patch side in pixels"),
    ("verify.instances", "random instances per oracle/gradcheck case"),
    ("verify.max_order", "largest order in the oracle sweep"),
    ("verify.max_in", "largest input dimension in the oracle sweep"),
    ("verify.max_out", "largest output dimension in the oracle sweep"),
    ("verify.max_rank", "largest rank in the oracle sweep"),
    ("bench.in_dim", "bench input dimension I"),
    ("bench.out_dim", "bench output dimension J"),
    ("bench.rank", "bench rank"),
    ("bench.shared", "bench shared cores"),
    ("bench.max_order", "largest bench order"),
    ("bench.reps", "timed contractions per row"),
    ("io.out_dir", "directory for checkpoints and CSV files"),
    ("io.checkpoint", "checkpoint path (default <out_dir>/model.t1cn)"),
    ("io.hist_block", "block whose operation outputs `hist` bins"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut s = String::from("Configuration keys (JSON sections; defaults in brackets):\n");
    for (key, doc) in KEYS {
        let value = lookup(&defaults, key).map_or("null".to_string(), |v| v.to_string());
        s.push_str(&format!("  {key:<22} {doc} [{value}]\n"));
    }
    s.push_str(&format!("\nThe environment variable {SEED_ENV} overrides train.seed.\n"));
    s
}

fn lookup<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(v, |v, k| v.get(k))
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Invalid(m) => write!(f, "bad config: {m}"),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("--set expects key=value, got {assignment:?}")))?;
    if !KEYS.iter().any(|(k, _)| *k == key) {
        return Err(ConfigError::Invalid(format!("unknown key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let (section, field) = key.split_once('.').expect("keys are section.field");
    doc[section][field] = value;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--set` overrides, then `T1CL_SEED`.
    pub fn load(path: Option<&Path>, sets: &[String], seed_env: Option<String>) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(ConfigError::Invalid("top level must be a JSON object".into()));
            }
            merge(&mut doc, file);
        }
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        let mut config: RunConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(seed) = seed_env {
            config.train.seed = seed
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.format()?;
        self.activation()?;
        self.ops()?;
        self.level()?;
        let positive = [
            ("kernel.order", self.kernel.order),
            ("kernel.rank", self.kernel.rank),
            ("net.channels", self.net.channels),
            ("net.image_channels", self.net.image_channels),
            ("train.batch", self.train.batch),
            ("train.patch_side", self.train.patch_side),
            ("verify.max_order", self.verify.max_order),
            ("verify.max_in", self.verify.max_in),
            ("verify.max_out", self.verify.max_out),
            ("verify.max_rank", self.verify.max_rank),
            ("bench.in_dim", self.bench.in_dim),
            ("bench.out_dim", self.bench.out_dim),
            ("bench.rank", self.bench.rank),
            ("bench.max_order", self.bench.max_order),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{key} must be positive")));
            }
        }
        if !(self.train.lr >= 0.0 && self.train.lr_min >= 0.0) {
            return Err(ConfigError::Invalid("learning rates must be non-negative".into()));
        }
        Ok(())
    }

    pub fn format(&self) -> Result<KernelFormat, ConfigError> {
        self.kernel.format.parse().map_err(|e: t1cl_core::Error| ConfigError::Invalid(e.to_string()))
    }

    pub fn activation(&self) -> Result<Activation, ConfigError> {
        self.kernel.activation.parse().map_err(|e: t1cl_core::Error| ConfigError::Invalid(e.to_string()))
    }

    pub fn ops(&self) -> Result<Vec<OpKind>, ConfigError> {
        if self.net.ops.is_empty() {
            return Err(ConfigError::Invalid("net.ops must not be empty".into()));
        }
        self.net
            .ops
            .iter()
            .map(|s| s.parse().map_err(|e: t1cl_core::Error| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    pub fn level(&self) -> Result<Level, ConfigError> {
        match self.train.level.parse() {
            Ok(Level::Custom) | Err(_) => Err(ConfigError::Invalid(format!(
                "train.level must be mild, moderate or severe, got {:?}",
                self.train.level
            ))),
            Ok(l) => Ok(l),
        }
    }

    pub fn net_config(&self) -> Result<NetConfig, ConfigError> {
        Ok(NetConfig {
            image_channels: self.net.image_channels,
            channels: self.net.channels,
            blocks: self.net.blocks,
            ops: self.ops()?,
            fusion: FusionConfig {
                format: self.format()?,
                order: self.kernel.order,
                rank: self.kernel.rank,
                shared: self.kernel.shared,
                add_one: self.kernel.add1,
                activation: self.activation()?,
            },
            residual: self.net.residual,
            global_residual: self.net.global_residual,
            zero_head: self.net.zero_head,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.train.batch,
            seed: self.train.seed,
            lr: self.train.lr,
            lr_min: self.train.lr_min,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            instances: self.verify.instances,
            seed: self.train.seed,
            max_order: self.verify.max_order,
            max_in: self.verify.max_in,
            max_out: self.verify.max_out,
            max_rank: self.verify.max_rank,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.io
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.io.out_dir.join("model.t1cn"))
    }
}
