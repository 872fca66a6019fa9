//! Entropy-gated early-exit inference with per-sample latency and FLOP accounting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::arch::{classify, BranchGraph, ExitPath};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::signal::{IqFrame, LabeledExample, FRAME_LEN};
use crate::tensor::Tensor;

/// Operation count charged for one entropy evaluation of a 10-class vector.
pub const ENTROPY_FLOPS: u64 = 10;

/// Probabilities below this are treated as exact zeros (0·log 0 = 0).
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Base-10 Shannon entropy of a probability vector.
pub fn entropy(p: &[f32]) -> f64 {
    p.iter()
        .map(|&v| v as f64)
        .filter(|&v| v >= ENTROPY_FLOOR)
        .map(|v| -v * v.log10())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// Exit when `entropy(z1) < threshold`.
    pub threshold: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { threshold: 0.35 }
    }
}

impl GateConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        let g = GateConfig { threshold };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(Error::config(format!(
                "threshold must be finite and non-negative, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn exits(&self, entropy: f64) -> bool {
        entropy < self.threshold
    }
}

/// Outcome of classifying one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub pred: u8,
    pub exit_taken: bool,
    /// Entropy of the exit head's output, or of the backbone output for a baseline graph.
    pub entropy: f64,
    pub latency_ns: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceRecord {
    pub pred: u8,
    pub exit_taken: bool,
    pub entropy: f64,
    pub latency_ns: u64,
    pub flops: u64,
    pub true_label: u8,
    pub snr_db: i8,
}

impl InferenceRecord {
    pub fn correct(&self) -> bool {
        self.pred == self.true_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOptions {
    /// Run each sample this many times and report the median latency.
    pub repeats: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions { repeats: 1 }
    }
}

pub(crate) fn frame_tensor(frame: &IqFrame) -> Tensor {
    Tensor::new(&[2, FRAME_LEN], frame.as_slice().to_vec()).expect("frame shape is fixed")
}

fn argmax_u8(p: &Tensor) -> u8 {
    classify(p.data()) as u8
}

/// Classify one frame. Early-exit graphs run the exit head, gate on its
/// entropy, and only continue from the cached Q when the gate rejects;
/// a baseline graph runs its backbone and never exits.
pub fn infer_frame(g: &mut BranchGraph, frame: &IqFrame, gate: &GateConfig) -> Result<Decision> {
    gate.validate()?;
    let x = frame_tensor(frame);
    if !g.has_exit() {
        let start = Instant::now();
        let z = g.forward_backbone(&x, Mode::Eval)?;
        let pred = argmax_u8(&z);
        let latency_ns = start.elapsed().as_nanos() as u64;
        return Ok(Decision {
            pred,
            exit_taken: false,
            entropy: entropy(z.data()),
            latency_ns,
            flops: g.backbone_flops(),
        });
    }
    let start = Instant::now();
    let z1 = g.forward_pass1(&x, Mode::Eval)?;
    let h = entropy(z1.data());
    let (pred, exit_taken) = if gate.exits(h) {
        (argmax_u8(&z1), true)
    } else {
        let z2 = g.forward_pass2(Mode::Eval)?;
        (argmax_u8(&z2), false)
    };
    let latency_ns = start.elapsed().as_nanos() as u64;
    g.clear_caches();
    let path = if exit_taken { ExitPath::Exit } else { ExitPath::Full };
    Ok(Decision {
        pred,
        exit_taken,
        entropy: h,
        latency_ns,
        flops: g.flop_count(path) + ENTROPY_FLOPS,
    })
}

/// Classify a labeled example, carrying its label and SNR into the record.
pub fn infer(g: &mut BranchGraph, example: &LabeledExample, gate: &GateConfig) -> Result<InferenceRecord> {
    infer_with(g, example, gate, &InferOptions::default())
}

pub fn infer_with(
    g: &mut BranchGraph,
    example: &LabeledExample,
    gate: &GateConfig,
    opts: &InferOptions,
) -> Result<InferenceRecord> {
    let mut d = infer_frame(g, &example.frame, gate)?;
    if opts.repeats > 1 {
        let mut times = vec![d.latency_ns];
        for _ in 1..opts.repeats {
            times.push(infer_frame(g, &example.frame, gate)?.latency_ns);
        }
        times.sort_unstable();
        d.latency_ns = times[times.len() / 2];
    }
    Ok(InferenceRecord {
        pred: d.pred,
        exit_taken: d.exit_taken,
        entropy: d.entropy,
        latency_ns: d.latency_ns,
        flops: d.flops,
        true_label: example.label.code(),
        snr_db: example.snr_db,
    })
}

/// Batch-1 inference over a set, records in input order.
pub fn infer_set(g: &mut BranchGraph, examples: &[LabeledExample], gate: &GateConfig) -> Result<Vec<InferenceRecord>> {
    infer_set_with(g, examples, gate, &InferOptions::default())
}

pub fn infer_set_with(
    g: &mut BranchGraph,
    examples: &[LabeledExample],
    gate: &GateConfig,
    opts: &InferOptions,
) -> Result<Vec<InferenceRecord>> {
    if examples.is_empty() {
        return Err(Error::config("cannot run inference on an empty set"));
    }
    examples.iter().map(|ex| infer_with(g, ex, gate, opts)).collect()
}

/// Threshold-independent trace of one sample: both heads' labels and the
/// timings of each path, from which any gate can be replayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateTrace {
    pub entropy: f64,
    pub exit_pred: u8,
    pub full_pred: u8,
    pub exit_latency_ns: u64,
    pub full_latency_ns: u64,
    pub exit_flops: u64,
    pub full_flops: u64,
    pub true_label: u8,
    pub snr_db: i8,
    /// False for baseline graphs, which never exit.
    pub can_exit: bool,
}

impl GateTrace {
    pub fn record(&self, gate: &GateConfig) -> InferenceRecord {
        let exit = self.can_exit && gate.exits(self.entropy);
        InferenceRecord {
            pred: if exit { self.exit_pred } else { self.full_pred },
            exit_taken: exit,
            entropy: self.entropy,
            latency_ns: if exit { self.exit_latency_ns } else { self.full_latency_ns },
            flops: if exit { self.exit_flops } else { self.full_flops },
            true_label: self.true_label,
            snr_db: self.snr_db,
        }
    }
}

/// Run both paths for every example once, timing the exit decision path and
/// the continuation from Q separately.
pub fn trace_set(g: &mut BranchGraph, examples: &[LabeledExample]) -> Result<Vec<GateTrace>> {
    if examples.is_empty() {
        return Err(Error::config("cannot run inference on an empty set"));
    }
    let never = GateConfig { threshold: 0.0 };
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        if !g.has_exit() {
            let d = infer_frame(g, &ex.frame, &never)?;
            out.push(GateTrace {
                entropy: d.entropy,
                exit_pred: d.pred,
                full_pred: d.pred,
                exit_latency_ns: d.latency_ns,
                full_latency_ns: d.latency_ns,
                exit_flops: d.flops,
                full_flops: d.flops,
                true_label: ex.label.code(),
                snr_db: ex.snr_db,
                can_exit: false,
            });
            continue;
        }
        let x = frame_tensor(&ex.frame);
        let start = Instant::now();
        let z1 = g.forward_pass1(&x, Mode::Eval)?;
        let h = entropy(z1.data());
        let exit_pred = argmax_u8(&z1);
        let exit_latency_ns = start.elapsed().as_nanos() as u64;
        let z2 = g.forward_pass2(Mode::Eval)?;
        let full_pred = argmax_u8(&z2);
        let full_latency_ns = start.elapsed().as_nanos() as u64;
        g.clear_caches();
        out.push(GateTrace {
            entropy: h,
            exit_pred,
            full_pred,
            exit_latency_ns,
            full_latency_ns,
            exit_flops: g.flop_count(ExitPath::Exit) + ENTROPY_FLOPS,
            full_flops: g.flop_count(ExitPath::Full) + ENTROPY_FLOPS,
            true_label: ex.label.code(),
            snr_db: ex.snr_db,
            can_exit: true,
        });
    }
    Ok(out)
}

pub const INFERENCE_LOG_HEADER: &str = "index,true_label,pred_label,snr_db,exit_taken,entropy,latency_ns,flops";

/// Inference log CSV, preceded by `# key=value` provenance lines.
pub fn inference_log_csv(records: &[InferenceRecord], echo: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in echo {
        let _ = writeln!(s, "# {k}={v}");
    }
    s.push_str(INFERENCE_LOG_HEADER);
    s.push('\n');
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{:.9},{},{}",
            r.true_label, r.pred, r.snr_db, r.exit_taken as u8, r.entropy, r.latency_ns, r.flops
        );
    }
    s
}

pub fn write_inference_log(
    records: &[InferenceRecord],
    echo: &[(String, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, inference_log_csv(records, echo)).map_err(|e| Error::io(path, e))
}
