//! Dual-loss early-exit training and plain baseline training.
//!
//! Each early-exit step runs the common layers once, feeds the cached Q to
//! both the exit head and the tail, then applies two independent updates:
//! the exit loss updates the common layers and the exit head (θ1), the
//! backbone loss updates the tail only (θ2).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{classify, write_weights, BranchGraph, Section, Variant};
use crate::error::{Error, Result};
use crate::nn::loss::batch_cross_entropy;
use crate::nn::{Mode, Optimizer, OptimizerKind};
use crate::signal::{IqFrame, LabeledExample, FRAME_LEN};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer for θ1 (common layers and exit head); also used by baseline training.
    pub optimizer_exit: OptimizerKind,
    /// Optimizer for θ2 (tail).
    pub optimizer_backbone: OptimizerKind,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop after this many epochs without backbone validation improvement.
    pub patience: Option<usize>,
    /// Batch size used for validation forwards.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            optimizer_exit: OptimizerKind::adam(1e-3),
            optimizer_backbone: OptimizerKind::adam(1e-3),
            seed: 0,
            shuffle: true,
            patience: None,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience must be at least 1 when set"));
        }
        self.optimizer_exit.validate()?;
        self.optimizer_backbone.validate()
    }

    /// `key=value` pairs for checkpoint sidecars.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |prefix: &str, k: &OptimizerKind| -> Vec<(String, String)> {
            match *k {
                OptimizerKind::Sgd { lr, momentum } => vec![
                    (format!("{prefix}.kind"), "sgd".into()),
                    (format!("{prefix}.lr"), lr.to_string()),
                    (format!("{prefix}.momentum"), momentum.to_string()),
                ],
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => vec![
                    (format!("{prefix}.kind"), "adam".into()),
                    (format!("{prefix}.lr"), lr.to_string()),
                    (format!("{prefix}.beta1"), beta1.to_string()),
                    (format!("{prefix}.beta2"), beta2.to_string()),
                    (format!("{prefix}.eps"), eps.to_string()),
                ],
            }
        };
        let mut pairs = vec![
            ("train.epochs".to_string(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.shuffle".into(), self.shuffle.to_string()),
            (
                "train.patience".into(),
                self.patience.map_or("none".into(), |p| p.to_string()),
            ),
        ];
        pairs.extend(opt("train.optimizer_exit", &self.optimizer_exit));
        pairs.extend(opt("train.optimizer_backbone", &self.optimizer_backbone));
        pairs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean exit-head loss; `None` for the baseline.
    pub loss1: Option<f64>,
    /// Mean backbone loss.
    pub loss2: f64,
    pub val_acc_exit: Option<f64>,
    pub val_acc_backbone: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub const CSV_HEADER: &'static str = "epoch,loss1,loss2,val_acc_exit,val_acc_backbone,seconds";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{:.6},{:.3}",
                r.epoch,
                opt(r.loss1),
                r.loss2,
                opt(r.val_acc_exit),
                r.val_acc_backbone,
                r.seconds
            );
        }
        s
    }
}

/// Which of the two updates a step applies, and in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOptions {
    pub apply_loss1: bool,
    pub apply_loss2: bool,
    pub loss1_first: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            apply_loss1: true,
            apply_loss2: true,
            loss1_first: true,
        }
    }
}

/// Stack frames into `[N, 2, 128]` plus their labels.
pub fn batch_tensor(examples: &[&LabeledExample]) -> Result<(Tensor, Vec<u8>)> {
    if examples.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let mut data = Vec::with_capacity(examples.len() * IqFrame::LEN);
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        data.extend_from_slice(ex.frame.as_slice());
        labels.push(ex.label.code());
    }
    Ok((Tensor::new(&[examples.len(), 2, FRAME_LEN], data)?, labels))
}

/// One dual-loss step. Returns the batch-mean `(loss1, loss2)`.
pub fn train_step_ee(
    g: &mut BranchGraph,
    x: &Tensor,
    labels: &[u8],
    opt1: &mut Optimizer,
    opt2: &mut Optimizer,
) -> Result<(f64, f64)> {
    train_step_ee_with(g, x, labels, opt1, opt2, StepOptions::default())
}

pub fn train_step_ee_with(
    g: &mut BranchGraph,
    x: &Tensor,
    labels: &[u8],
    opt1: &mut Optimizer,
    opt2: &mut Optimizer,
    opts: StepOptions,
) -> Result<(f64, f64)> {
    if !g.has_exit() {
        return Err(Error::Contract(
            "early-exit training needs a graph with an exit head".into(),
        ));
    }
    g.zero_grad();
    let z1 = g.forward_pass1(x, Mode::Train)?;
    let z2 = g.forward_pass2(Mode::Train)?;
    let (loss1, grad1) = batch_cross_entropy(&z1, labels)
        .map_err(|e| Error::numeric(format!("exit loss: {e}")))?;
    let (loss2, grad2) = batch_cross_entropy(&z2, labels)
        .map_err(|e| Error::numeric(format!("backbone loss: {e}")))?;

    let mut grad1 = Some(grad1);
    let mut grad2 = Some(grad2);
    let order: [bool; 2] = if opts.loss1_first { [true, false] } else { [false, true] };
    for first_loss in order {
        if first_loss {
            let gq = g.backward_section(Section::ExitHead, grad1.take().unwrap(), true)?;
            g.backward_section(Section::Common, gq, false)?;
            if opts.apply_loss1 {
                opt1.step(&mut g.theta1())?;
            }
        } else {
            // The gradient reaching Q is dropped: the backbone loss never
            // touches the common layers.
            g.backward_section(Section::Tail, grad2.take().unwrap(), true)?;
            if opts.apply_loss2 {
                opt2.step(&mut g.theta2())?;
            }
        }
    }
    Ok((loss1, loss2))
}

/// One single-loss step over every parameter of a baseline graph.
pub fn train_step_baseline(g: &mut BranchGraph, x: &Tensor, labels: &[u8], opt: &mut Optimizer) -> Result<f64> {
    if g.variant() != Variant::Baseline {
        return Err(Error::Contract(format!(
            "baseline training called on {} graph",
            g.variant()
        )));
    }
    g.zero_grad();
    let z = g.forward_backbone(x, Mode::Train)?;
    let (loss, grad) = batch_cross_entropy(&z, labels)?;
    g.backward_section(Section::Common, grad, true)?;
    opt.step(&mut g.all_params())?;
    Ok(loss)
}

/// Exit-head and backbone predictions in eval mode, batched.
pub fn predict(g: &mut BranchGraph, examples: &[LabeledExample], batch: usize) -> Result<(Option<Vec<usize>>, Vec<usize>)> {
    let mut exit = g.has_exit().then(Vec::new);
    let mut backbone = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&LabeledExample> = chunk.iter().collect();
        let (x, _) = batch_tensor(&refs)?;
        if let Some(exit) = exit.as_mut() {
            let z1 = g.forward_pass1(&x, Mode::Eval)?;
            let z2 = g.forward_pass2(Mode::Eval)?;
            exit.extend((0..chunk.len()).map(|i| classify(z1.row(i))));
            backbone.extend((0..chunk.len()).map(|i| classify(z2.row(i))));
        } else {
            let z = g.forward_backbone(&x, Mode::Eval)?;
            backbone.extend((0..chunk.len()).map(|i| classify(z.row(i))));
        }
    }
    g.clear_caches();
    Ok((exit, backbone))
}

fn accuracy(pred: &[usize], examples: &[LabeledExample]) -> f64 {
    let correct = pred
        .iter()
        .zip(examples)
        .filter(|(&p, ex)| p == ex.label.code() as usize)
        .count();
    correct as f64 / examples.len() as f64
}

/// Exit-head (if any) and backbone accuracy in eval mode.
pub fn evaluate_accuracy(g: &mut BranchGraph, examples: &[LabeledExample], batch: usize) -> Result<(Option<f64>, f64)> {
    if examples.is_empty() {
        return Err(Error::config("cannot evaluate on an empty set"));
    }
    let (exit, backbone) = predict(g, examples, batch)?;
    Ok((exit.map(|p| accuracy(&p, examples)), accuracy(&backbone, examples)))
}

/// Train `g` with the step matching its variant, reporting each finished epoch.
pub fn fit(
    g: &mut BranchGraph,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    let ee = g.has_exit();
    let mut opt1 = Optimizer::new(cfg.optimizer_exit)?;
    let mut opt2 = Optimizer::new(cfg.optimizer_backbone)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    g.reseed_dropout(cfg.seed.wrapping_add(0x5EED));

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut sum1, mut sum2, mut seen) = (0f64, 0f64, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&LabeledExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (x, labels) = batch_tensor(&refs)?;
            if ee {
                let (l1, l2) = train_step_ee(g, &x, &labels, &mut opt1, &mut opt2)?;
                sum1 += l1 * idx.len() as f64;
                sum2 += l2 * idx.len() as f64;
            } else {
                sum2 += train_step_baseline(g, &x, &labels, &mut opt1)? * idx.len() as f64;
            }
            seen += idx.len();
        }
        g.clear_caches();
        let (val_exit, val_backbone) = evaluate_accuracy(g, val_set, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            loss1: ee.then(|| sum1 / seen as f64),
            loss2: sum2 / seen as f64,
            val_acc_exit: val_exit,
            val_acc_backbone: val_backbone,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        if let Some(patience) = cfg.patience {
            if val_backbone > best {
                best = val_backbone;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(history)
}

/// Dual-loss training of an early-exit graph.
pub fn train(
    g: &mut BranchGraph,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if !g.has_exit() {
        return Err(Error::Contract("train needs an early-exit graph; use train_baseline".into()));
    }
    fit(g, train_set, val_set, cfg, |_| {})
}

/// Single-loss training of the baseline backbone.
pub fn train_baseline(
    g: &mut BranchGraph,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if g.variant() != Variant::Baseline {
        return Err(Error::Contract(format!(
            "train_baseline called on {} graph",
            g.variant()
        )));
    }
    fit(g, train_set, val_set, cfg, |_| {})
}

/// Sidecar path written next to a checkpoint's weight file.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Write the weight file and a `key=value` sidecar with the configuration
/// pairs and the final epoch's metrics.
pub fn write_checkpoint(
    g: &BranchGraph,
    path: impl AsRef<Path>,
    config: &[(String, String)],
    history: &TrainHistory,
) -> Result<()> {
    let path = path.as_ref();
    write_weights(g, path)?;
    let mut meta = String::new();
    let _ = writeln!(meta, "arch.variant={}", g.variant());
    for (k, v) in config {
        let _ = writeln!(meta, "{k}={v}");
    }
    if let Some(last) = history.last() {
        let _ = writeln!(meta, "final.epoch={}", last.epoch);
        if let Some(l1) = last.loss1 {
            let _ = writeln!(meta, "final.loss1={l1}");
        }
        let _ = writeln!(meta, "final.loss2={}", last.loss2);
        if let Some(a) = last.val_acc_exit {
            let _ = writeln!(meta, "final.val_acc_exit={a}");
        }
        let _ = writeln!(meta, "final.val_acc_backbone={}", last.val_acc_backbone);
    }
    let side = sidecar_path(path);
    fs::write(&side, meta).map_err(|e| Error::io(side, e))
}
