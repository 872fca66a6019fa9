//! Layers with explicit forward/backward passes, losses and optimizers.
//!
//! Every layer works on batched tensors. Spatial layers (`Conv1d`, `MaxPool1d`,
//! `BatchNorm1d`) take `[N, C, L]`, and also accept an unbatched `[C, L]`
//! which is returned unbatched. `Dense` takes `[N, D]` or `[D]`; `Softmax`
//! normalizes the last axis.

mod activation;
mod conv;
mod dense;
pub mod loss;
mod norm;
pub mod optim;
mod pool;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use activation::{Dropout, Flatten, Relu, Softmax};
pub use conv::Conv1d;
pub use dense::Dense;
pub use loss::{cross_entropy, softmax};
pub use norm::BatchNorm1d;
pub use optim::{Optimizer, OptimizerKind, ParamRef};
pub use pool::MaxPool1d;

pub const BATCHNORM_MOMENTUM: f32 = 0.1;
pub const BATCHNORM_EPSILON: f32 = 1e-5;

/// Whether stochastic layers sample and batch-norm uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool1d {
        window: usize,
        stride: usize,
    },
    BatchNorm1d {
        channels: usize,
        momentum: f32,
        epsilon: f32,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Dropout {
        rate: f32,
    },
    Softmax,
    Flatten,
}

impl LayerKind {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("{name} must be positive in {self:?}")))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            } => {
                positive("in_channels", in_channels)?;
                positive("out_channels", out_channels)?;
                positive("kernel_size", kernel_size)?;
                positive("stride", stride)
            }
            LayerKind::MaxPool1d { window, stride } => {
                positive("window", window)?;
                positive("stride", stride)
            }
            LayerKind::BatchNorm1d {
                channels,
                momentum,
                epsilon,
            } => {
                positive("channels", channels)?;
                if !(epsilon > 0.0) {
                    return Err(Error::config("batch-norm epsilon must be > 0"));
                }
                if !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::config("batch-norm momentum must be in [0, 1]"));
                }
                Ok(())
            }
            LayerKind::Dense { in_dim, out_dim } => {
                positive("in_dim", in_dim)?;
                positive("out_dim", out_dim)
            }
            LayerKind::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::config(format!("dropout rate {rate} outside [0, 1)")))
                }
            }
            LayerKind::Relu | LayerKind::Softmax | LayerKind::Flatten => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv1d { .. } => "conv1d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool1d { .. } => "maxpool1d",
            LayerKind::BatchNorm1d { .. } => "batchnorm1d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Softmax => "softmax",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Wire tag used by the weight file.
    pub fn tag(&self) -> u8 {
        match self {
            LayerKind::Conv1d { .. } => 0,
            LayerKind::Relu => 1,
            LayerKind::MaxPool1d { .. } => 2,
            LayerKind::BatchNorm1d { .. } => 3,
            LayerKind::Dense { .. } => 4,
            LayerKind::Dropout { .. } => 5,
            LayerKind::Softmax => 6,
            LayerKind::Flatten => 7,
        }
    }

    /// Integer extents recorded in the weight file after the tag.
    pub fn extents(&self) -> Vec<u32> {
        let v = |x: usize| x as u32;
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => vec![
                v(in_channels),
                v(out_channels),
                v(kernel_size),
                v(stride),
                v(padding),
            ],
            LayerKind::MaxPool1d { window, stride } => vec![v(window), v(stride)],
            LayerKind::BatchNorm1d { channels, .. } => vec![v(channels)],
            LayerKind::Dense { in_dim, out_dim } => vec![v(in_dim), v(out_dim)],
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::Softmax | LayerKind::Flatten => {
                vec![]
            }
        }
    }

    /// Number of extents that follow `tag` in the weight file.
    pub fn extent_count(tag: u8) -> Option<usize> {
        match tag {
            0 => Some(5),
            2 => Some(2),
            3 => Some(1),
            4 => Some(2),
            1 | 5 | 6 | 7 => Some(0),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || {
            Error::config(format!(
                "{} cannot take per-sample input of shape {input:?}",
                self.name()
            ))
        };
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let [c, l] = input else { return Err(mismatch()) };
                if *c != in_channels {
                    return Err(mismatch());
                }
                let l_out = conv_out_len(*l, kernel_size, stride, padding)?;
                Ok(vec![out_channels, l_out])
            }
            LayerKind::MaxPool1d { window, stride } => {
                let [c, l] = input else { return Err(mismatch()) };
                Ok(vec![*c, pool_out_len(*l, window, stride)?])
            }
            LayerKind::BatchNorm1d { channels, .. } => match input {
                [c, _] if *c == channels => Ok(input.to_vec()),
                _ => Err(mismatch()),
            },
            LayerKind::Dense { in_dim, out_dim } => match input {
                [d] if *d == in_dim => Ok(vec![out_dim]),
                _ => Err(mismatch()),
            },
            LayerKind::Flatten => match input {
                [c, l] => Ok(vec![c * l]),
                _ => Err(mismatch()),
            },
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::Softmax => Ok(input.to_vec()),
        }
    }

    /// Per-sample operation count: multiply-accumulates for conv/dense,
    /// one per input element for everything else, zero for reshapes.
    pub fn flops(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        let numel = input.iter().product::<usize>() as u64;
        Ok(match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => (out_channels * out[1] * in_channels * kernel_size) as u64,
            LayerKind::Dense { in_dim, out_dim } => (in_dim * out_dim) as u64,
            LayerKind::Flatten => 0,
            _ => numel,
        })
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => out_channels * in_channels * kernel_size + out_channels,
            LayerKind::BatchNorm1d { channels, .. } => 2 * channels,
            LayerKind::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }
}

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(Error::config(format!(
            "conv1d kernel {kernel} longer than padded input length {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub(crate) fn pool_out_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if len < window {
        return Err(Error::config(format!(
            "maxpool1d window {window} exceeds input length {len}"
        )));
    }
    Ok((len - window) / stride + 1)
}

/// Split a spatial tensor shape into `(batch, channels, length, batched)`.
pub(crate) fn spatial_dims(x: &Tensor, layer: &str) -> Result<(usize, usize, usize, bool)> {
    match *x.shape() {
        [c, l] => Ok((1, c, l, false)),
        [n, c, l] => Ok((n, c, l, true)),
        _ => Err(Error::config(format!(
            "{layer} expects [C, L] or [N, C, L], got {:?}",
            x.shape()
        ))),
    }
}

pub(crate) fn spatial_shape(n: usize, c: usize, l: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![n, c, l]
    } else {
        vec![c, l]
    }
}

pub(crate) fn check_grad_shape(grad: &Tensor, expected: &[usize], layer: &str) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::config(format!(
            "{layer} backward expects gradient of shape {expected:?}, got {:?}",
            grad.shape()
        )));
    }
    Ok(())
}

fn backward_before_forward(layer: &str) -> Error {
    Error::state(format!("{layer} backward called before forward"))
}

/// A layer together with its parameters, gradients, buffers and caches.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv1d(Conv1d),
    Relu(Relu),
    MaxPool1d(MaxPool1d),
    BatchNorm1d(BatchNorm1d),
    Dense(Dense),
    Dropout(Dropout),
    Softmax(Softmax),
    Flatten(Flatten),
}

impl Layer {
    /// Build a layer with freshly initialized parameters.
    pub fn new(kind: LayerKind, rng: &mut dyn RngCore) -> Result<Self> {
        kind.validate()?;
        Ok(match kind {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => Layer::Conv1d(Conv1d::new(
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
                rng,
            )),
            LayerKind::Relu => Layer::Relu(Relu::default()),
            LayerKind::MaxPool1d { window, stride } => Layer::MaxPool1d(MaxPool1d::new(window, stride)),
            LayerKind::BatchNorm1d {
                channels,
                momentum,
                epsilon,
            } => Layer::BatchNorm1d(BatchNorm1d::new(channels, momentum, epsilon)),
            LayerKind::Dense { in_dim, out_dim } => Layer::Dense(Dense::new(in_dim, out_dim, rng)),
            LayerKind::Dropout { rate } => Layer::Dropout(Dropout::new(rate)),
            LayerKind::Softmax => Layer::Softmax(Softmax::default()),
            LayerKind::Flatten => Layer::Flatten(Flatten::default()),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d(l) => l.kind(),
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool1d(l) => l.kind(),
            Layer::BatchNorm1d(l) => l.kind(),
            Layer::Dense(l) => l.kind(),
            Layer::Dropout(l) => l.kind(),
            Layer::Softmax(_) => LayerKind::Softmax,
            Layer::Flatten(_) => LayerKind::Flatten,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool1d(l) => l.forward(x),
            Layer::BatchNorm1d(l) => l.forward(x, mode),
            Layer::Dense(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode, rng),
            Layer::Softmax(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
        }
    }

    /// Gradient with respect to the input; parameter gradients accumulate.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::MaxPool1d(l) => l.backward(grad_out),
            Layer::BatchNorm1d(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Softmax(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
        }
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm1d(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&l.grad_weight, &l.grad_bias],
            Layer::BatchNorm1d(l) => vec![&l.grad_gamma, &l.grad_beta],
            Layer::Dense(l) => vec![&l.grad_weight, &l.grad_bias],
            _ => vec![],
        }
    }

    /// `(parameter, gradient)` pairs in declaration order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        match self {
            Layer::Conv1d(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            Layer::BatchNorm1d(l) => vec![(&mut l.gamma, &l.grad_gamma), (&mut l.beta, &l.grad_beta)],
            Layer::Dense(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_and_grads().into_iter().map(|(p, _)| p).collect()
    }

    /// Non-trainable state that still has to be persisted (batch-norm running stats).
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm1d(l) => vec![&l.running_mean, &l.running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm1d(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => vec![],
        }
    }

    /// Parameters followed by buffers, the order persisted in weight files.
    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm1d(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv1d(l) => {
                l.grad_weight.fill(0.0);
                l.grad_bias.fill(0.0);
            }
            Layer::BatchNorm1d(l) => {
                l.grad_gamma.fill(0.0);
                l.grad_beta.fill(0.0);
            }
            Layer::Dense(l) => {
                l.grad_weight.fill(0.0);
                l.grad_bias.fill(0.0);
            }
            _ => {}
        }
    }

    /// Drop forward caches.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv1d(l) => l.cache = None,
            Layer::Relu(l) => l.mask = None,
            Layer::MaxPool1d(l) => l.cache = None,
            Layer::BatchNorm1d(l) => l.cache = None,
            Layer::Dense(l) => l.input = None,
            Layer::Dropout(l) => l.cache = None,
            Layer::Softmax(l) => l.output = None,
            Layer::Flatten(l) => l.input_shape = None,
        }
    }
}

/// He-uniform initialization bound for a layer with the given fan-in.
pub(crate) fn he_uniform(n: usize, fan_in: usize, rng: &mut dyn RngCore) -> Vec<f32> {
    use rand::Rng;
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
