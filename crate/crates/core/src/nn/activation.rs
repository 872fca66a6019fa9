use rand::{Rng, RngCore};

use super::{check_grad_shape, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    pub(crate) mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.mask = Some((x.shape().to_vec(), mask));
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, mask) = self
            .mask
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("relu"))?;
        check_grad_shape(grad_out, shape, "relu")?;
        let dx = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(shape, dx)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time,
/// so evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f32,
    /// Per-element scale (0 or `1 / (1 - rate)`); `None` means identity.
    pub(crate) cache: Option<(Vec<usize>, Option<Vec<f32>>)>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, cache: None }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Dropout { rate: self.rate }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.cache = Some((x.shape().to_vec(), None));
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.cache = Some((x.shape().to_vec(), Some(mask)));
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, mask) = self
            .cache
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("dropout"))?;
        check_grad_shape(grad_out, shape, "dropout")?;
        match mask {
            None => Ok(grad_out.clone()),
            Some(mask) => Tensor::new(
                shape,
                grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect(),
            ),
        }
    }
}

/// Softmax over the last axis of a `[D]` or `[N, D]` tensor.
#[derive(Debug, Clone, Default)]
pub struct Softmax {
    pub(crate) output: Option<Tensor>,
}

impl Softmax {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() > 2 {
            return Err(Error::config(format!(
                "softmax expects [D] or [N, D], got {:?}",
                x.shape()
            )));
        }
        x.expect_finite("softmax input")?;
        let width = *x.shape().last().unwrap();
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(width) {
            out.extend(super::softmax(row));
        }
        let out = Tensor::new(x.shape(), out)?;
        self.output = Some(out.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let p = self
            .output
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("softmax"))?;
        check_grad_shape(grad_out, p.shape(), "softmax")?;
        let width = *p.shape().last().unwrap();
        let mut dx = Vec::with_capacity(p.len());
        for (prow, grow) in p.data().chunks(width).zip(grad_out.data().chunks(width)) {
            let dot: f64 = prow.iter().zip(grow).map(|(&a, &b)| a as f64 * b as f64).sum();
            dx.extend(
                prow.iter()
                    .zip(grow)
                    .map(|(&pi, &gi)| (pi as f64 * (gi as f64 - dot)) as f32),
            );
        }
        Tensor::new(p.shape(), dx)
    }
}

/// `[N, C, L] -> [N, C * L]`
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    pub(crate) input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let &[n, c, l] = x.shape() else {
            return Err(Error::config(format!(
                "flatten expects [N, C, L], got {:?}",
                x.shape()
            )));
        };
        self.input_shape = Some(x.shape().to_vec());
        x.clone().reshape(&[n, c * l])
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("flatten"))?;
        grad_out.clone().reshape(shape)
    }
}
