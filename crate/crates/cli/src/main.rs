//! `amc-ee`: generate datasets, train, evaluate and sweep early-exit models.
//!
//! Failures print one line to stderr, `error kind=<kind> code=<n> msg=<quoted>`,
//! and exit with the matching code. Files a failed command started writing
//! are removed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amc_ee::arch::{build, load_graph, Variant};
use amc_ee::config::{parse_thresholds, ExperimentConfig};
use amc_ee::eval::{
    aggregate, confusion_csv, parse_report_csv, report_csv, sweep_csv, threshold_sweep, MetricsReport,
};
use amc_ee::infer::{inference_log_csv, infer_set_with, InferOptions};
use amc_ee::signal::{generate_dataset, read_dataset, split_dataset, write_dataset, LabeledExample};
use amc_ee::train::{fit, sidecar_path, write_checkpoint};
use amc_ee::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "amc-ee", version, about = "Early-exit CNNs for automatic modulation classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled IQ dataset and write it as an AMCD file.
    Generate(Common),
    /// Train a model on the training split and write a checkpoint and history.
    Train(Common),
    /// Batch-1 gated inference on a split; writes the inference log and reports.
    Eval(EvalArgs),
    /// Evaluate one model at several entropy thresholds.
    Sweep(SweepArgs),
    /// Print a summary of a report CSV.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for generation, splitting, initialization and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model variant: baseline, v0, v1, v2 or v3.
    #[arg(long)]
    variant: Option<String>,
    /// Entropy threshold T of the exit gate.
    #[arg(long)]
    threshold: Option<f64>,
    /// Dataset file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint weight file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Which split of the dataset to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated threshold list.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSV to summarize (defaults to `<out>/report.csv`).
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    kind: &'static str,
    code: u8,
    msg: String,
}

impl Failure {
    fn new(kind: &'static str, code: u8, msg: impl Into<String>) -> Self {
        Failure {
            kind,
            code,
            msg: msg.into(),
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Self::new("config", 2, msg)
    }

    fn missing_dataset(path: &Path) -> Self {
        Self::new("missing_dataset", 3, format!("dataset not found: {}", path.display()))
    }

    fn missing_checkpoint(path: &Path) -> Self {
        Self::new("missing_checkpoint", 4, format!("checkpoint not found: {}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Config(_) | Error::Parse { .. } => ("config", 2),
            Error::Format { .. } => ("format", 5),
            Error::Numeric(_) => ("numeric", 6),
            Error::Io { .. } => ("io", 7),
            Error::State(_) | Error::Contract(_) => ("internal", 1),
        };
        Failure::new(kind, code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Removes registered files unless disarmed.
#[derive(Default)]
struct Outputs {
    paths: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: PathBuf, text: &str) -> CmdResult {
        self.paths.push(path.clone());
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e }.into())
    }

    fn track(&mut self, path: PathBuf) {
        self.paths.push(path);
    }

    fn commit(&mut self) {
        self.paths.clear();
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for p in &self.paths {
            let _ = fs::remove_file(p);
        }
    }
}

/// Resolve config file, then `--set` overrides, then dedicated flags (flags win).
fn resolve(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) if !p.exists() => {
            return Err(Failure::usage(format!("config not found: {}", p.display())))
        }
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(|m| Failure::usage(format!("--set {m}")))?;
    }
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(v) = &c.variant {
        cfg.variant = v.parse::<Variant>()?;
    }
    if let Some(t) = c.threshold {
        cfg.gate.threshold = t;
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(ck) = &c.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io {
        path: cfg.out.clone(),
        source: e,
    })?;
    Ok(cfg)
}

fn with_echo(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    for (k, v) in cfg.to_pairs() {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

fn load_split(cfg: &ExperimentConfig, which: SplitName) -> Result<Vec<LabeledExample>, Failure> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(Failure::missing_dataset(&path));
    }
    let data = read_dataset(&path)?;
    if let SplitName::All = which {
        return Ok(data);
    }
    let split = split_dataset(&data, cfg.split_seed)?;
    Ok(match which {
        SplitName::Train => split.train,
        SplitName::Val => split.val,
        SplitName::Test | SplitName::All => split.test,
    })
}

fn load_model(cfg: &ExperimentConfig, explicit_variant: bool) -> Result<amc_ee::arch::BranchGraph, Failure> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(Failure::missing_checkpoint(&path));
    }
    let g = load_graph(&path, &cfg.arch)?;
    if explicit_variant && g.variant() != cfg.variant {
        return Err(Failure::new(
            "format",
            5,
            format!("checkpoint holds {} weights, {} requested", g.variant(), cfg.variant),
        ));
    }
    Ok(g)
}

fn variant_explicit(c: &Common) -> bool {
    c.variant.is_some() || c.overrides.iter().any(|kv| kv.trim_start().starts_with("arch.variant"))
}

fn cmd_generate(c: &Common) -> CmdResult {
    let cfg = resolve(c)?;
    let path = cfg.dataset_path();
    let data = generate_dataset(&cfg.gen)?;
    let mut outs = Outputs::default();
    outs.track(path.clone());
    write_dataset(&data, &path)?;
    outs.write(sidecar_path(&path), &with_echo(&cfg))?;
    outs.commit();
    println!("wrote {} examples to {}", data.len(), path.display());
    Ok(())
}

fn cmd_train(c: &Common) -> CmdResult {
    let cfg = resolve(c)?;
    let data = {
        let path = cfg.dataset_path();
        if !path.exists() {
            return Err(Failure::missing_dataset(&path));
        }
        read_dataset(&path)?
    };
    let split = split_dataset(&data, cfg.split_seed)?;
    let mut g = build(cfg.variant, &cfg.arch)?;
    eprintln!(
        "training {} ({} parameters) on {} frames, validating on {}",
        cfg.variant,
        g.param_count(),
        split.train.len(),
        split.val.len()
    );
    let history = fit(&mut g, &split.train, &split.val, &cfg.train, |r| {
        let exit = r.val_acc_exit.map_or(String::new(), |a| format!(" val_exit={a:.4}"));
        eprintln!(
            "epoch {:>3} loss={:.4} val_backbone={:.4}{exit} {:.1}s",
            r.epoch, r.loss2, r.val_acc_backbone, r.seconds
        );
    })?;

    let ckpt = cfg.checkpoint_path();
    let mut outs = Outputs::default();
    outs.track(ckpt.clone());
    outs.track(sidecar_path(&ckpt));
    write_checkpoint(&g, &ckpt, &cfg.to_pairs(), &history)?;
    let hist_path = cfg.out.join("history.csv");
    outs.write(hist_path.clone(), &(with_echo(&cfg) + &history.to_csv()))?;
    outs.commit();
    println!("wrote {} and {}", ckpt.display(), hist_path.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let cfg = resolve(&a.common)?;
    let examples = load_split(&cfg, a.split)?;
    let mut g = load_model(&cfg, variant_explicit(&a.common))?;
    let opts = InferOptions {
        repeats: cfg.timing_repeats,
    };
    let records = infer_set_with(&mut g, &examples, &cfg.gate, &opts)?;
    let mut echo = cfg.to_pairs();
    set_pair(&mut echo, "arch.variant", g.variant().to_string());
    let report = aggregate(&records, &echo)?;

    let mut outs = Outputs::default();
    let log = cfg.out.join("inference_log.csv");
    outs.write(log.clone(), &inference_log_csv(&records, &echo))?;
    outs.write(cfg.out.join("report.csv"), &report_csv(&report))?;
    outs.write(cfg.out.join("confusion.csv"), &confusion_csv(&report))?;
    outs.commit();
    print_summary(&report);
    Ok(())
}

fn set_pair(pairs: &mut [(String, String)], key: &str, value: String) {
    if let Some(p) = pairs.iter_mut().find(|(k, _)| k == key) {
        p.1 = value;
    }
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let cfg = resolve(&a.common)?;
    let thresholds = match &a.thresholds {
        Some(t) => parse_thresholds(t)?,
        None => cfg.sweep_thresholds.clone(),
    };
    let examples = load_split(&cfg, a.split)?;
    let mut g = load_model(&cfg, variant_explicit(&a.common))?;
    let mut echo = cfg.to_pairs();
    set_pair(&mut echo, "arch.variant", g.variant().to_string());
    set_pair(
        &mut echo,
        "sweep.thresholds",
        thresholds.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    let sweep = threshold_sweep(&mut g, &examples, &thresholds, &echo)?;
    let mut outs = Outputs::default();
    let path = cfg.out.join("sweep.csv");
    outs.write(path.clone(), &sweep_csv(&sweep))?;
    outs.commit();
    for (t, report) in &sweep {
        println!(
            "T={t}: accuracy={:.4} exit_fraction={:.4}",
            report.accuracy(),
            report.exit_fraction()
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    println!(
        "{:>6} {:>6} {:>8} {:>8} {:>12}",
        "snr_db", "n", "accuracy", "exit", "latency_us"
    );
    for r in &report.rows {
        println!(
            "{:>6} {:>6} {:>8.4} {:>8.4} {:>12.1}",
            r.snr_db,
            r.n,
            r.accuracy(),
            r.exit_fraction(),
            r.mean_latency_ns / 1e3
        );
    }
    println!(
        "overall accuracy={:.4} exit_fraction={:.4}",
        report.accuracy(),
        report.exit_fraction()
    );
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    let path = a
        .input
        .clone()
        .unwrap_or_else(|| a.out.clone().unwrap_or_else(|| PathBuf::from("runs")).join("report.csv"));
    if !path.exists() {
        return Err(Failure::usage(format!("report not found: {}", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let parsed = parse_report_csv(&text)?;
    for (k, v) in &parsed.echo {
        if ["arch.variant", "gate.threshold", "gen.seed", "train.seed"].contains(&k.as_str()) {
            println!("{k}={v}");
        }
    }
    let report = MetricsReport {
        rows: parsed.rows,
        confusion: [[0; amc_ee::NUM_CLASSES]; amc_ee::NUM_CLASSES],
        echo: parsed.echo,
    };
    print_summary(&report);
    Ok(())
}

fn init_threads() -> CmdResult {
    if let Ok(v) = std::env::var("AMC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::usage(format!("AMC_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error kind={} code={} msg={:?}", f.kind, f.code, f.msg);
            ExitCode::from(f.code)
        }
    }
}
