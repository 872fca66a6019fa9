//! Finite-difference checks of every layer kind against the f64 oracles.

use amc_ee::nn::loss::batch_cross_entropy;
use amc_ee::nn::{Layer, LayerKind, Mode};
use amc_ee::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so near-zero gradient entries
/// are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
pub const INSTANCES: usize = 25;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub kind: &'static str,
    pub instances: usize,
    /// Worst forward mismatch against the oracle (relative, floor 1).
    pub forward_err: f64,
    /// Worst relative gradient error over inputs and parameters.
    pub grad_err: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.instances >= 20 && self.forward_err < 1e-5 && self.grad_err < TOLERANCE
    }
}

type Oracle = Box<dyn Fn(&[f64], &[Vec<f64>]) -> Vec<f64>>;

/// Run one instance: forward through the layer, compare with the oracle,
/// then compare the backward pass with central differences of the oracle.
fn check_instance(
    kind: LayerKind,
    shape: &[usize],
    x: Vec<f32>,
    r: &mut ChaCha8Rng,
    init_param: impl Fn(usize, &mut ChaCha8Rng, usize) -> Vec<f32>,
    make_oracle: impl FnOnce(&[f32], &[f32]) -> Oracle,
) -> (f64, f64) {
    let mut layer = Layer::new(kind, r).unwrap();
    for (i, p) in layer.params_mut().into_iter().enumerate() {
        let v = init_param(i, r, p.len());
        p.data_mut().copy_from_slice(&v);
    }
    let params: Vec<Vec<f64>> = layer.params().iter().map(|p| widen(p.data())).collect();
    let xt = Tensor::new(shape, x.clone()).unwrap();
    let y = layer.forward(&xt, Mode::Train, r).unwrap();
    let oracle = make_oracle(&x, y.data());
    let x64 = widen(&x);
    let y_ref = oracle(&x64, &params);
    let forward_err = y
        .data()
        .iter()
        .zip(&y_ref)
        .map(|(&a, &b)| (a as f64 - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);

    let w = widen(&uniform(r, y.len(), -1.0, 1.0));
    let wt = Tensor::new(y.shape(), w.iter().map(|&v| v as f32).collect()).unwrap();
    let dx = layer.backward(&wt).unwrap();
    let num_dx = fd_grad(|xx| weighted_sum(&w, &oracle(xx, &params)), &x64, H);
    let mut grad_err = max_rel_err(dx.data(), &num_dx, REL_FLOOR);

    for (i, g) in layer.grads().iter().enumerate() {
        let num = fd_grad(
            |pp| {
                let mut ps = params.clone();
                ps[i] = pp.to_vec();
                weighted_sum(&w, &oracle(&x64, &ps))
            },
            &params[i],
            H,
        );
        grad_err = grad_err.max(max_rel_err(g.data(), &num, REL_FLOOR));
    }
    (forward_err, grad_err)
}

fn signed_away_from_zero(r: &mut ChaCha8Rng, n: usize, gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = r.random_range(gap..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn default_params(_: usize, r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    uniform(r, n, -1.0, 1.0)
}

fn run(kind_name: &'static str, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> (f64, f64)) -> GradReport {
    let mut r = rng(seed);
    let mut forward_err: f64 = 0.0;
    let mut grad_err: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (f, g) = one(&mut r);
        forward_err = forward_err.max(f);
        grad_err = grad_err.max(g);
    }
    GradReport {
        kind: kind_name,
        instances: INSTANCES,
        forward_err,
        grad_err,
    }
}

pub fn conv1d(seed: u64) -> GradReport {
    run("conv1d", seed, |r| {
        let n = r.random_range(1..=3);
        let cin = r.random_range(1..=3);
        let cout = r.random_range(1..=3);
        let l = r.random_range(5..=10);
        let k = r.random_range(1..=4);
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=k / 2);
        let x = uniform(r, n * cin * l, -1.0, 1.0);
        check_instance(
            LayerKind::Conv1d {
                in_channels: cin,
                out_channels: cout,
                kernel_size: k,
                stride,
                padding: pad,
            },
            &[n, cin, l],
            x,
            r,
            default_params,
            move |_, _| Box::new(move |x, p| super::conv1d(x, &p[0], &p[1], n, cin, l, cout, k, stride, pad)),
        )
    })
}

pub fn dense(seed: u64) -> GradReport {
    run("dense", seed, |r| {
        let n = r.random_range(1..=4);
        let din = r.random_range(1..=8);
        let dout = r.random_range(1..=6);
        let x = uniform(r, n * din, -1.0, 1.0);
        check_instance(
            LayerKind::Dense { in_dim: din, out_dim: dout },
            &[n, din],
            x,
            r,
            default_params,
            move |_, _| Box::new(move |x, p| super::dense(x, &p[0], &p[1], n, din, dout)),
        )
    })
}

pub fn relu(seed: u64) -> GradReport {
    run("relu", seed, |r| {
        let shape = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(2..=8)];
        let x = signed_away_from_zero(r, shape.iter().product(), 0.05);
        check_instance(LayerKind::Relu, &shape, x, r, default_params, |_, _| {
            Box::new(|x, _| super::relu(x))
        })
    })
}

pub fn maxpool1d(seed: u64) -> GradReport {
    run("maxpool1d", seed, |r| {
        let (n, c) = (r.random_range(1..=3), r.random_range(1..=3));
        let win = r.random_range(1..=3);
        let stride = r.random_range(1..=3);
        let l = r.random_range(win..=win + 8);
        // Distinct values spaced well beyond 2h, so no window ever ties.
        let mut x: Vec<f32> = (0..n * c * l).map(|i| i as f32 * 0.01 - 0.5).collect();
        x.shuffle(r);
        check_instance(
            LayerKind::MaxPool1d { window: win, stride },
            &[n, c, l],
            x,
            r,
            default_params,
            move |_, _| Box::new(move |x, _| super::maxpool(x, n, c, l, win, stride)),
        )
    })
}

pub fn batchnorm1d(seed: u64) -> GradReport {
    run("batchnorm1d", seed, |r| {
        let c = r.random_range(1..=3);
        // Rank 2 is a single unbatched [C, L] sample.
        let rank2 = r.random_bool(0.3);
        let n = if rank2 { 1 } else { r.random_range(2..=4) };
        let l = if rank2 { r.random_range(2..=6) } else { r.random_range(1..=5) };
        let shape: Vec<usize> = if rank2 { vec![c, l] } else { vec![n, c, l] };
        let x = uniform(r, n * c * l, -2.0, 2.0);
        let eps = 1e-5;
        check_instance(
            LayerKind::BatchNorm1d {
                channels: c,
                momentum: 0.1,
                epsilon: eps,
            },
            &shape,
            x,
            r,
            |i, r, len| {
                if i == 0 {
                    uniform(r, len, 0.5, 1.5)
                } else {
                    uniform(r, len, -0.5, 0.5)
                }
            },
            move |_, _| Box::new(move |x, p| super::batchnorm(x, &p[0], &p[1], n, c, l, eps as f64)),
        )
    })
}

pub fn dropout(seed: u64) -> GradReport {
    run("dropout", seed, |r| {
        let rate: f32 = [0.0, 0.2, 0.3, 0.5][r.random_range(0..4)];
        let shape = [r.random_range(1..=4), r.random_range(2..=16)];
        let x = signed_away_from_zero(r, shape.iter().product(), 0.05);
        check_instance(LayerKind::Dropout { rate }, &shape, x, r, default_params, move |_, y| {
            // The sampled mask is read off the output: inputs are nonzero, so
            // a zero output means the unit was dropped.
            let scale = 1.0 / (1.0 - rate as f64);
            let mask: Vec<f64> = y.iter().map(|&v| if v == 0.0 { 0.0 } else { scale }).collect();
            Box::new(move |x, _| x.iter().zip(&mask).map(|(a, m)| a * m).collect())
        })
    })
}

pub fn softmax(seed: u64) -> GradReport {
    run("softmax", seed, |r| {
        let n = r.random_range(1..=4);
        let d = r.random_range(2..=10);
        let x = uniform(r, n * d, -3.0, 3.0);
        check_instance(LayerKind::Softmax, &[n, d], x, r, default_params, move |_, _| {
            Box::new(move |x, _| softmax_rows(x, d))
        })
    })
}

pub fn flatten(seed: u64) -> GradReport {
    run("flatten", seed, |r| {
        let shape = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=6)];
        let x = uniform(r, shape.iter().product(), -1.0, 1.0);
        check_instance(LayerKind::Flatten, &shape, x, r, default_params, |_, _| {
            Box::new(|x, _| x.to_vec())
        })
    })
}

/// Gradient of the batch-mean cross-entropy with respect to the logits,
/// as consumed by the training step (softmax folded into the loss).
pub fn softmax_cross_entropy(seed: u64) -> GradReport {
    run("softmax_cross_entropy", seed, |r| {
        let n = r.random_range(1..=6);
        let d = 10;
        let logits = uniform(r, n * d, -3.0, 3.0);
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..d as u8)).collect();
        let z = widen(&logits);
        let probs: Vec<f32> = softmax_rows(&z, d).iter().map(|&v| v as f32).collect();
        let (loss, grad) = batch_cross_entropy(&Tensor::new(&[n, d], probs).unwrap(), &labels).unwrap();
        let reference = softmax_ce(&z, &labels, d);
        let forward_err = (loss - reference).abs() / reference.abs().max(1.0);
        let num = fd_grad(|zz| softmax_ce(zz, &labels, d), &z, H);
        (forward_err, max_rel_err(grad.data(), &num, REL_FLOOR))
    })
}

pub fn all(seed: u64) -> Vec<GradReport> {
    vec![
        conv1d(seed),
        dense(seed + 1),
        relu(seed + 2),
        maxpool1d(seed + 3),
        batchnorm1d(seed + 4),
        dropout(seed + 5),
        softmax(seed + 6),
        flatten(seed + 7),
        softmax_cross_entropy(seed + 8),
    ]
}
