//! Double-precision reference implementations written as plain loops, plus
//! finite-difference helpers. Independent of the crate's kernels.

#![allow(dead_code)]

pub mod gradcheck;

use amc_ee::arch::{build, ArchConfig, BranchGraph, Variant};
use amc_ee::signal::{generate_dataset, GenConfig, LabeledExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `x: [n, cin, l]`, `w: [cout, cin, k]` → `[n, cout, lout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let lout = (l + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * lout];
    for s in 0..n {
        for o in 0..cout {
            for t in 0..lout {
                let mut acc = b[o];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w[(o * cin + c) * k + j] * x[(s * cin + c) * l + pos as usize];
                        }
                    }
                }
                y[(s * cout + o) * lout + t] = acc;
            }
        }
    }
    y
}

/// `x: [n, din]`, `w: [dout, din]` → `[n, dout]`.
pub fn dense(x: &[f64], w: &[f64], b: &[f64], n: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for s in 0..n {
        for o in 0..dout {
            let mut acc = b[o];
            for i in 0..din {
                acc += w[o * din + i] * x[s * din + i];
            }
            y[s * dout + o] = acc;
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `[rows, c, l]` → `[rows, c, lout]`.
pub fn maxpool(x: &[f64], rows: usize, c: usize, l: usize, win: usize, stride: usize) -> Vec<f64> {
    let lout = (l - win) / stride + 1;
    let mut y = Vec::with_capacity(rows * c * lout);
    for r in 0..rows * c {
        for t in 0..lout {
            let window = &x[r * l + t * stride..r * l + t * stride + win];
            y.push(window.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    y
}

/// Training-mode batch norm over `[n, c, l]` with biased batch variance.
pub fn batchnorm(x: &[f64], gamma: &[f64], beta: &[f64], n: usize, c: usize, l: usize, eps: f64) -> Vec<f64> {
    let count = (n * l) as f64;
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let idx = |s: usize, i: usize| (s * c + ch) * l + i;
        let mut mean = 0.0;
        for s in 0..n {
            for i in 0..l {
                mean += x[idx(s, i)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for s in 0..n {
            for i in 0..l {
                var += (x[idx(s, i)] - mean).powi(2);
            }
        }
        var /= count;
        for s in 0..n {
            for i in 0..l {
                y[idx(s, i)] = gamma[ch] * (x[idx(s, i)] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    y
}

/// Row-wise softmax over the last axis of width `d`.
pub fn softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        y.extend(e.iter().map(|v| v / s));
    }
    y
}

/// Mean cross-entropy of softmax(logits) against labels.
pub fn softmax_ce(logits: &[f64], labels: &[u8], d: usize) -> f64 {
    let p = softmax_rows(logits, d);
    let n = labels.len();
    (0..n).map(|i| -p[i * d + labels[i] as usize].ln()).sum::<f64>() / n as f64
}

/// Central differences of a scalar function at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `sum(w ⊙ y)`: a scalar loss whose gradient with respect to `y` is `w`.
pub fn weighted_sum(w: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over two gradients.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Small balanced dataset for fast end-to-end tests.
pub fn small_dataset(per_cell: usize, seed: u64) -> Vec<LabeledExample> {
    generate_dataset(&GenConfig {
        samples_per_cell: per_cell,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn graph(variant: Variant, seed: u64) -> BranchGraph {
    build(
        variant,
        &ArchConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}
