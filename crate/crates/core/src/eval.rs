//! Aggregation of inference records into per-SNR reports, threshold sweeps and CSV emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::arch::BranchGraph;
use crate::error::{Error, Result};
use crate::infer::{trace_set, GateConfig, InferenceRecord};
use crate::signal::{LabeledExample, ModulationScheme};
use crate::NUM_CLASSES;

/// Aggregates for one SNR level.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrRow {
    pub snr_db: i8,
    pub n: u64,
    pub exit_correct: u64,
    pub exit_incorrect: u64,
    pub full_correct: u64,
    pub full_incorrect: u64,
    pub mean_latency_ns: f64,
    pub median_latency_ns: f64,
    pub mean_flops: f64,
}

impl SnrRow {
    pub fn accuracy(&self) -> f64 {
        (self.exit_correct + self.full_correct) as f64 / self.n as f64
    }

    pub fn exit_fraction(&self) -> f64 {
        (self.exit_correct + self.exit_incorrect) as f64 / self.n as f64
    }

    pub fn exits(&self) -> u64 {
        self.exit_correct + self.exit_incorrect
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Ascending by SNR.
    pub rows: Vec<SnrRow>,
    /// `confusion[true][pred]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Provenance `key=value` pairs.
    pub echo: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.n).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = self.rows.iter().map(|r| r.exit_correct + r.full_correct).sum();
        correct as f64 / self.total() as f64
    }

    pub fn exit_fraction(&self) -> f64 {
        self.rows.iter().map(SnrRow::exits).sum::<u64>() as f64 / self.total() as f64
    }

    pub fn row(&self, snr_db: i8) -> Option<&SnrRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db)
    }

    /// Pooled accuracy, exit fraction and mean latency over rows whose SNR satisfies `keep`.
    pub fn pooled(&self, keep: impl Fn(i8) -> bool) -> Option<Pooled> {
        let rows: Vec<&SnrRow> = self.rows.iter().filter(|r| keep(r.snr_db)).collect();
        let n: u64 = rows.iter().map(|r| r.n).sum();
        if n == 0 {
            return None;
        }
        let correct: u64 = rows.iter().map(|r| r.exit_correct + r.full_correct).sum();
        let exits: u64 = rows.iter().map(|r| r.exits()).sum();
        let latency: f64 = rows.iter().map(|r| r.mean_latency_ns * r.n as f64).sum();
        Some(Pooled {
            n,
            accuracy: correct as f64 / n as f64,
            exit_fraction: exits as f64 / n as f64,
            mean_latency_ns: latency / n as f64,
        })
    }

    /// Per-class sample counts (confusion-matrix row sums).
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for (i, row) in self.confusion.iter().enumerate() {
            c[i] = row.iter().sum();
        }
        c
    }

    /// Whether the four-way counts sum to `n` in every row and the confusion
    /// matrix holds exactly `total` samples.
    pub fn counts_conserved(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.exit_correct + r.exit_incorrect + r.full_correct + r.full_incorrect == r.n)
            && self.class_counts().iter().sum::<u64>() == self.total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled {
    pub n: u64,
    pub accuracy: f64,
    pub exit_fraction: f64,
    pub mean_latency_ns: f64,
}

fn median(sorted: &[u64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m] as f64
    } else {
        (sorted[m - 1] as f64 + sorted[m] as f64) / 2.0
    }
}

/// Exact count-based aggregation of inference records.
pub fn aggregate(records: &[InferenceRecord], echo: &[(String, String)]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::config("cannot aggregate an empty record list"));
    }
    let mut by_snr: BTreeMap<i8, Vec<&InferenceRecord>> = BTreeMap::new();
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for r in records {
        let (t, p) = (r.true_label as usize, r.pred as usize);
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::config(format!("label out of range in record: true {t}, pred {p}")));
        }
        confusion[t][p] += 1;
        by_snr.entry(r.snr_db).or_default().push(r);
    }
    let rows = by_snr
        .into_iter()
        .map(|(snr_db, rs)| {
            let mut row = SnrRow {
                snr_db,
                n: rs.len() as u64,
                exit_correct: 0,
                exit_incorrect: 0,
                full_correct: 0,
                full_incorrect: 0,
                mean_latency_ns: 0.0,
                median_latency_ns: 0.0,
                mean_flops: 0.0,
            };
            for r in &rs {
                match (r.exit_taken, r.correct()) {
                    (true, true) => row.exit_correct += 1,
                    (true, false) => row.exit_incorrect += 1,
                    (false, true) => row.full_correct += 1,
                    (false, false) => row.full_incorrect += 1,
                }
            }
            let mut lat: Vec<u64> = rs.iter().map(|r| r.latency_ns).collect();
            lat.sort_unstable();
            let n = rs.len() as f64;
            row.mean_latency_ns = lat.iter().map(|&v| v as f64).sum::<f64>() / n;
            row.median_latency_ns = median(&lat);
            row.mean_flops = rs.iter().map(|r| r.flops as f64).sum::<f64>() / n;
            row
        })
        .collect();
    Ok(MetricsReport {
        rows,
        confusion,
        echo: echo.to_vec(),
    })
}

/// One timed pass over `examples`, then the gate replayed for every threshold.
/// Entropies and labels are shared across thresholds, so exit sets are nested.
pub fn threshold_sweep(
    g: &mut BranchGraph,
    examples: &[LabeledExample],
    thresholds: &[f64],
    echo: &[(String, String)],
) -> Result<Vec<(f64, MetricsReport)>> {
    if thresholds.is_empty() {
        return Err(Error::config("threshold list is empty"));
    }
    let gates = thresholds
        .iter()
        .map(|&t| GateConfig::new(t))
        .collect::<Result<Vec<_>>>()?;
    let traces = trace_set(g, examples)?;
    gates
        .iter()
        .map(|gate| {
            let records: Vec<InferenceRecord> = traces.iter().map(|t| t.record(gate)).collect();
            let mut e = echo.to_vec();
            e.retain(|(k, _)| k != "gate.threshold");
            e.push(("gate.threshold".into(), gate.threshold.to_string()));
            Ok((gate.threshold, aggregate(&records, &e)?))
        })
        .collect()
}

pub const REPORT_HEADER: &str = "snr_db,n,accuracy,exit_fraction,exit_correct,exit_incorrect,full_correct,full_incorrect,mean_latency_ns,median_latency_ns,mean_flops";

fn echo_lines(s: &mut String, echo: &[(String, String)]) {
    for (k, v) in echo {
        let _ = writeln!(s, "# {k}={v}");
    }
}

fn row_fields(r: &SnrRow) -> String {
    format!(
        "{},{},{:.6},{:.6},{},{},{},{},{:.1},{:.1},{:.1}",
        r.snr_db,
        r.n,
        r.accuracy(),
        r.exit_fraction(),
        r.exit_correct,
        r.exit_incorrect,
        r.full_correct,
        r.full_incorrect,
        r.mean_latency_ns,
        r.median_latency_ns,
        r.mean_flops
    )
}

/// Per-SNR report CSV, preceded by `# key=value` provenance lines.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::new();
    echo_lines(&mut s, &report.echo);
    s.push_str(REPORT_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&row_fields(r));
        s.push('\n');
    }
    s
}

/// Sweep CSV: the report schema with a leading `threshold` column, one block per threshold.
pub fn sweep_csv(sweep: &[(f64, MetricsReport)]) -> String {
    let mut s = String::new();
    if let Some((_, first)) = sweep.first() {
        let echo: Vec<(String, String)> = first
            .echo
            .iter()
            .filter(|(k, _)| k != "gate.threshold")
            .cloned()
            .collect();
        echo_lines(&mut s, &echo);
    }
    let _ = writeln!(s, "threshold,{REPORT_HEADER}");
    for (t, report) in sweep {
        for r in &report.rows {
            let _ = writeln!(s, "{t},{}", row_fields(r));
        }
    }
    s
}

/// 10×10 confusion matrix CSV; rows are true classes, columns predictions.
pub fn confusion_csv(report: &MetricsReport) -> String {
    let mut s = String::new();
    echo_lines(&mut s, &report.echo);
    s.push_str("true\\pred");
    for m in ModulationScheme::ALL {
        let _ = write!(s, ",{}", m.name());
    }
    s.push('\n');
    for (m, row) in ModulationScheme::ALL.iter().zip(&report.confusion) {
        s.push_str(m.name());
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), report_csv(report))
}

pub fn emit_sweep_csv(sweep: &[(f64, MetricsReport)], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), sweep_csv(sweep))
}

pub fn emit_confusion_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), confusion_csv(report))
}

/// A report CSV read back: provenance pairs and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub echo: Vec<(String, String)>,
    pub rows: Vec<SnrRow>,
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize) -> Result<T> {
    cols.get(i)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad or missing column {i}"),
        })
}

/// Parse a report CSV produced by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<ParsedReport> {
    let mut echo = Vec::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(kv) = line.strip_prefix("# ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "provenance line without '='".into(),
            })?;
            echo.push((k.to_string(), v.to_string()));
            continue;
        }
        if !header_seen {
            if line != REPORT_HEADER {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "unexpected header".into(),
                });
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 11 columns, got {}", cols.len()),
            });
        }
        rows.push(SnrRow {
            snr_db: field(&cols, 0, lineno)?,
            n: field(&cols, 1, lineno)?,
            exit_correct: field(&cols, 4, lineno)?,
            exit_incorrect: field(&cols, 5, lineno)?,
            full_correct: field(&cols, 6, lineno)?,
            full_incorrect: field(&cols, 7, lineno)?,
            mean_latency_ns: field(&cols, 8, lineno)?,
            median_latency_ns: field(&cols, 9, lineno)?,
            mean_flops: field(&cols, 10, lineno)?,
        });
    }
    if !header_seen {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: "missing header".into(),
        });
    }
    Ok(ParsedReport { echo, rows })
}
