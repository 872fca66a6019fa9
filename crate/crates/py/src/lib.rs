//! Python bindings: datasets, models, training, gated inference and sweeps.

use std::collections::HashMap;
use std::path::PathBuf;

use amc_core::arch::{build, load_graph, write_weights, ArchConfig, BranchGraph, ExitPath, Variant};
use amc_core::eval::{aggregate, threshold_sweep, MetricsReport};
use amc_core::infer::{infer_frame, infer_set, GateConfig};
use amc_core::nn::OptimizerKind;
use amc_core::signal::{
    generate_dataset, read_dataset, split_dataset, write_dataset, GenConfig, IqFrame, LabeledExample,
    ModulationScheme, SNR_LEVELS,
};
use amc_core::train::{train, train_baseline, TrainConfig, TrainHistory};
use amc_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::State(_) | Error::Contract(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Base-10 Shannon entropy of a class distribution.
#[pyfunction]
fn entropy(probs: Vec<f32>) -> f64 {
    amc_core::infer::entropy(&probs)
}

/// Class names in label-code order.
#[pyfunction]
fn modulations() -> Vec<&'static str> {
    ModulationScheme::ALL.iter().map(|m| m.name()).collect()
}

#[pyfunction]
fn snr_levels() -> Vec<i8> {
    SNR_LEVELS.to_vec()
}

/// A list of labeled 2×128 IQ frames.
#[pyclass(module = "amc_ee")]
struct Dataset {
    examples: Vec<LabeledExample>,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (samples_per_cell=200, seed=0))]
    fn generate(samples_per_cell: usize, seed: u64) -> PyResult<Self> {
        let cfg = GenConfig {
            samples_per_cell,
            seed,
            ..Default::default()
        };
        Ok(Dataset {
            examples: generate_dataset(&cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            examples: read_dataset(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.examples, path).map_err(py_err)
    }

    /// Stratified `(train, val, test)` split.
    #[pyo3(signature = (seed=0))]
    fn split(&self, seed: u64) -> PyResult<(Dataset, Dataset, Dataset)> {
        let s = split_dataset(&self.examples, seed).map_err(py_err)?;
        Ok((
            Dataset { examples: s.train },
            Dataset { examples: s.val },
            Dataset { examples: s.test },
        ))
    }

    fn __len__(&self) -> usize {
        self.examples.len()
    }

    fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label.code()).collect()
    }

    fn snrs(&self) -> Vec<i8> {
        self.examples.iter().map(|e| e.snr_db).collect()
    }

    /// Frame `i` as 256 floats: the I row then the Q row.
    fn frame(&self, i: usize) -> PyResult<Vec<f32>> {
        self.examples
            .get(i)
            .map(|e| e.frame.as_slice().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={})", self.examples.len())
    }
}

fn report_dict(r: &MetricsReport) -> HashMap<String, f64> {
    HashMap::from([
        ("n".to_string(), r.total() as f64),
        ("accuracy".to_string(), r.accuracy()),
        ("exit_fraction".to_string(), r.exit_fraction()),
    ])
}

fn rows(r: &MetricsReport) -> Vec<HashMap<String, f64>> {
    r.rows
        .iter()
        .map(|row| {
            HashMap::from([
                ("snr_db".to_string(), row.snr_db as f64),
                ("n".to_string(), row.n as f64),
                ("accuracy".to_string(), row.accuracy()),
                ("exit_fraction".to_string(), row.exit_fraction()),
                ("mean_latency_ns".to_string(), row.mean_latency_ns),
                ("mean_flops".to_string(), row.mean_flops),
            ])
        })
        .collect()
}

fn history_rows(h: &TrainHistory) -> Vec<HashMap<String, Option<f64>>> {
    h.epochs
        .iter()
        .map(|r| {
            HashMap::from([
                ("epoch".to_string(), Some(r.epoch as f64)),
                ("loss1".to_string(), r.loss1),
                ("loss2".to_string(), Some(r.loss2)),
                ("val_acc_exit".to_string(), r.val_acc_exit),
                ("val_acc_backbone".to_string(), Some(r.val_acc_backbone)),
                ("seconds".to_string(), Some(r.seconds)),
            ])
        })
        .collect()
}

/// A baseline or early-exit network.
#[pyclass(module = "amc_ee")]
struct Model {
    graph: BranchGraph,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (variant="v1", seed=0))]
    fn new(variant: &str, seed: u64) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(py_err)?;
        let cfg = ArchConfig {
            seed,
            ..Default::default()
        };
        Ok(Model {
            graph: build(v, &cfg).map_err(py_err)?,
        })
    }

    /// Load weights; the variant is read from the file header.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            graph: load_graph(path, &ArchConfig::default()).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_weights(&self.graph, path).map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.graph.variant().to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    /// Operation counts of the exit path, the full early-exit path and the backbone.
    fn flops(&self) -> HashMap<String, u64> {
        let mut m = HashMap::from([("backbone".to_string(), self.graph.backbone_flops())]);
        if self.graph.has_exit() {
            m.insert("exit".into(), self.graph.flop_count(ExitPath::Exit));
            m.insert("full".into(), self.graph.flop_count(ExitPath::Full));
        }
        m
    }

    /// Train in place and return one dict per epoch.
    #[pyo3(signature = (train_set, val_set, epochs=30, batch_size=128, lr=1e-3, seed=0))]
    fn train(
        &mut self,
        train_set: &Dataset,
        val_set: &Dataset,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<HashMap<String, Option<f64>>>> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            optimizer_exit: OptimizerKind::adam(lr),
            optimizer_backbone: OptimizerKind::adam(lr),
            seed,
            ..Default::default()
        };
        let g = &mut self.graph;
        let history = if g.has_exit() {
            train(g, &train_set.examples, &val_set.examples, &cfg)
        } else {
            train_baseline(g, &train_set.examples, &val_set.examples, &cfg)
        }
        .map_err(py_err)?;
        Ok(history_rows(&history))
    }

    /// Gated batch-1 inference on one 256-float frame.
    /// Returns `(label, exit_taken, entropy, flops)`.
    #[pyo3(signature = (frame, threshold=0.35))]
    fn infer(&mut self, frame: Vec<f32>, threshold: f64) -> PyResult<(u8, bool, f64, u64)> {
        let gate = GateConfig::new(threshold).map_err(py_err)?;
        let frame = IqFrame::new(frame).map_err(py_err)?;
        let d = infer_frame(&mut self.graph, &frame, &gate).map_err(py_err)?;
        Ok((d.pred, d.exit_taken, d.entropy, d.flops))
    }

    /// Overall metrics plus one dict per SNR level.
    #[pyo3(signature = (dataset, threshold=0.35))]
    fn evaluate(
        &mut self,
        dataset: &Dataset,
        threshold: f64,
    ) -> PyResult<(HashMap<String, f64>, Vec<HashMap<String, f64>>)> {
        let gate = GateConfig::new(threshold).map_err(py_err)?;
        let records = infer_set(&mut self.graph, &dataset.examples, &gate).map_err(py_err)?;
        let report = aggregate(&records, &[]).map_err(py_err)?;
        Ok((report_dict(&report), rows(&report)))
    }

    /// `(threshold, overall metrics)` for each threshold.
    #[pyo3(signature = (dataset, thresholds=vec![0.05, 0.35, 0.6]))]
    fn sweep(&mut self, dataset: &Dataset, thresholds: Vec<f64>) -> PyResult<Vec<(f64, HashMap<String, f64>)>> {
        let sweep = threshold_sweep(&mut self.graph, &dataset.examples, &thresholds, &[]).map_err(py_err)?;
        Ok(sweep.iter().map(|(t, r)| (*t, report_dict(r))).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, params={})",
            self.graph.variant(),
            self.graph.param_count()
        )
    }
}

#[pymodule]
fn amc_ee(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(modulations, m)?)?;
    m.add_function(wrap_pyfunction!(snr_levels, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    Ok(())
}
