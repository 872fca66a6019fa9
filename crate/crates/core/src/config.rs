//! Flat `section.key = value` experiment configuration.
//!
//! Every key has a default, so an empty file is a complete configuration.
//! Unknown keys and malformed values are rejected with their line number.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::arch::{ArchConfig, Variant};
use crate::error::{Error, Result};
use crate::infer::GateConfig;
use crate::nn::OptimizerKind;
use crate::signal::GenConfig;
use crate::train::TrainConfig;

/// Thresholds swept when none are given.
pub const DEFAULT_SWEEP: [f64; 3] = [0.05, 0.35, 0.6];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    /// Seed of the stratified split shuffle.
    pub split_seed: u64,
    pub variant: Variant,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub gate: GateConfig,
    pub sweep_thresholds: Vec<f64>,
    /// Median-of-N batch-1 timing.
    pub timing_repeats: usize,
    /// Defaults to `<out>/dataset.amcd`.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<out>/model.eewt`.
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gen: GenConfig::default(),
            split_seed: 0,
            variant: Variant::V1,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            gate: GateConfig::default(),
            sweep_thresholds: DEFAULT_SWEEP.to_vec(),
            timing_repeats: 1,
            dataset: None,
            checkpoint: None,
            out: PathBuf::from("runs"),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "gen.samples_per_cell",
    "gen.seed",
    "gen.samples_per_symbol",
    "gen.rolloff",
    "gen.cfo",
    "gen.random_phase",
    "split.seed",
    "arch.variant",
    "arch.seed",
    "arch.dropout",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.seed",
    "train.shuffle",
    "train.patience",
    "gate.threshold",
    "sweep.thresholds",
    "infer.repeats",
    "paths.dataset",
    "paths.checkpoint",
    "paths.out",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse {v:?} as {}", std::any::type_name::<T>()))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// Parse a comma-separated threshold list.
pub fn parse_thresholds(v: &str) -> Result<Vec<f64>> {
    let ts = v
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| Error::config(format!("bad threshold {t:?}")))
                .and_then(GateConfig::new)
                .map(|g| g.threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    if ts.is_empty() {
        return Err(Error::config("empty threshold list"));
    }
    Ok(ts)
}

fn adam_parts(k: &OptimizerKind) -> (f64, f64, f64, f64) {
    match *k {
        OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => (lr, beta1, beta2, eps),
        OptimizerKind::Sgd { lr, .. } => (lr, 0.9, 0.999, 1e-8),
    }
}

impl ExperimentConfig {
    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let (mut lr, mut b1, mut b2, mut eps) = adam_parts(&self.train.optimizer_exit);
        match key {
            "gen.samples_per_cell" => self.gen.samples_per_cell = parse_num(key, v)?,
            "gen.seed" => self.gen.seed = parse_num(key, v)?,
            "gen.samples_per_symbol" => self.gen.samples_per_symbol = parse_num(key, v)?,
            "gen.rolloff" => self.gen.rolloff = parse_num(key, v)?,
            "gen.cfo" => self.gen.cfo = parse_num(key, v)?,
            "gen.random_phase" => self.gen.random_phase = parse_bool(key, v)?,
            "split.seed" => self.split_seed = parse_num(key, v)?,
            "arch.variant" => self.variant = v.parse().map_err(|e: Error| e.to_string())?,
            "arch.seed" => self.arch.seed = parse_num(key, v)?,
            "arch.dropout" => self.arch.dropout = parse_num(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.lr" => lr = parse_num(key, v)?,
            "train.beta1" => b1 = parse_num(key, v)?,
            "train.beta2" => b2 = parse_num(key, v)?,
            "train.eps" => eps = parse_num(key, v)?,
            "train.seed" => self.train.seed = parse_num(key, v)?,
            "train.shuffle" => self.train.shuffle = parse_bool(key, v)?,
            "train.patience" => {
                self.train.patience = match v {
                    "none" | "" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "gate.threshold" => self.gate.threshold = parse_num(key, v)?,
            "sweep.thresholds" => {
                self.sweep_thresholds = parse_thresholds(v).map_err(|e| format!("{key}: {e}"))?
            }
            "infer.repeats" => self.timing_repeats = parse_num(key, v)?,
            "paths.dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "paths.checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "paths.out" => self.out = PathBuf::from(v),
            _ => return Err(format!("unknown key {key:?}")),
        }
        let opt = OptimizerKind::Adam {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
        };
        self.train.optimizer_exit = opt;
        self.train.optimizer_backbone = opt;
        Ok(())
    }

    /// Current value of a key as text.
    pub fn get(&self, key: &str) -> Option<String> {
        let (lr, b1, b2, eps) = adam_parts(&self.train.optimizer_exit);
        Some(match key {
            "gen.samples_per_cell" => self.gen.samples_per_cell.to_string(),
            "gen.seed" => self.gen.seed.to_string(),
            "gen.samples_per_symbol" => self.gen.samples_per_symbol.to_string(),
            "gen.rolloff" => self.gen.rolloff.to_string(),
            "gen.cfo" => self.gen.cfo.to_string(),
            "gen.random_phase" => self.gen.random_phase.to_string(),
            "split.seed" => self.split_seed.to_string(),
            "arch.variant" => self.variant.to_string(),
            "arch.seed" => self.arch.seed.to_string(),
            "arch.dropout" => self.arch.dropout.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr" => lr.to_string(),
            "train.beta1" => b1.to_string(),
            "train.beta2" => b2.to_string(),
            "train.eps" => eps.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.shuffle" => self.train.shuffle.to_string(),
            "train.patience" => self.train.patience.map_or("none".into(), |p| p.to_string()),
            "gate.threshold" => self.gate.threshold.to_string(),
            "sweep.thresholds" => self
                .sweep_thresholds
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "infer.repeats" => self.timing_repeats.to_string(),
            "paths.dataset" => self.dataset.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "paths.checkpoint" => self
                .checkpoint
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
            "paths.out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.amcd"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.eewt"))
    }

    /// Set every seed (generation, split, init, training) at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.split_seed = seed;
        self.arch.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.gate.validate()?;
        if self.sweep_thresholds.is_empty() {
            return Err(Error::config("sweep.thresholds is empty"));
        }
        for &t in &self.sweep_thresholds {
            GateConfig::new(t)?;
        }
        if self.timing_repeats == 0 {
            return Err(Error::config("infer.repeats must be at least 1"));
        }
        Ok(())
    }

    /// The fully resolved configuration as `(key, value)` pairs.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("every listed key is gettable")))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Parse the flat config format. Later assignments of a key override earlier ones.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got {content:?}"),
        })?;
        cfg.set(key.trim(), value)
            .map_err(|msg| Error::Parse { line, msg })?;
    }
    cfg.validate()?;
    Ok(cfg)
}
