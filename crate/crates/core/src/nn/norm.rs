use super::{check_grad_shape, spatial_dims, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalization over the batch and length axes.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    channels: usize,
    momentum: f32,
    epsilon: f32,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub(crate) cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    shape: Vec<usize>,
    xhat: Vec<f32>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm1d {
    pub fn new(channels: usize, momentum: f32, epsilon: f32) -> Self {
        BatchNorm1d {
            channels,
            momentum,
            epsilon,
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm1d {
            channels: self.channels,
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, l, _) = spatial_dims(x, "batchnorm1d")?;
        if c != self.channels {
            return Err(Error::config(format!(
                "batchnorm1d expects {} channels, got {c}",
                self.channels
            )));
        }
        x.expect_finite("batchnorm1d input")?;
        let src = x.data();
        let count = (n * l) as f64;
        let eps = self.epsilon as f64;

        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut s = 0f64;
                    for b in 0..n {
                        s += src[(b * c + ch) * l..(b * c + ch + 1) * l]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    let m = s / count;
                    let mut sq = 0f64;
                    for b in 0..n {
                        sq += src[(b * c + ch) * l..(b * c + ch + 1) * l]
                            .iter()
                            .map(|&v| (v as f64 - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / count;
                }
                let mom = self.momentum as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let rm = self.running_mean.data_mut();
                for ch in 0..c {
                    rm[ch] = ((1.0 - mom) * rm[ch] as f64 + mom * mean[ch]) as f32;
                }
                let rv = self.running_var.data_mut();
                for ch in 0..c {
                    rv[ch] = ((1.0 - mom) * rv[ch] as f64 + mom * var[ch] * unbias) as f32;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = self.running_mean.data()[ch] as f64;
                    var[ch] = self.running_var.data()[ch] as f64;
                }
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gamma, beta) = (self.gamma.data(), self.beta.data());
        let mut xhat = vec![0f32; src.len()];
        let mut out = vec![0f32; src.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                for i in off..off + l {
                    let h = (src[i] as f64 - mean[ch]) * inv_std[ch];
                    xhat[i] = h as f32;
                    out[i] = (gamma[ch] as f64 * h + beta[ch] as f64) as f32;
                }
            }
        }
        self.cache = Some(NormCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("batchnorm1d"))?;
        check_grad_shape(grad_out, &cache.shape, "batchnorm1d")?;
        let (n, c, l, _) = spatial_dims(grad_out, "batchnorm1d")?;
        let g = grad_out.data();
        let xhat = &cache.xhat;
        let count = (n * l) as f64;

        let mut sum_g = vec![0f64; c];
        let mut sum_gx = vec![0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                for i in off..off + l {
                    sum_g[ch] += g[i] as f64;
                    sum_gx[ch] += g[i] as f64 * xhat[i] as f64;
                }
            }
        }
        for ch in 0..c {
            self.grad_gamma.data_mut()[ch] += sum_gx[ch] as f32;
            self.grad_beta.data_mut()[ch] += sum_g[ch] as f32;
        }

        let gamma = self.gamma.data();
        let mut dx = vec![0f32; g.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                let scale = gamma[ch] as f64 * cache.inv_std[ch];
                for i in off..off + l {
                    dx[i] = match cache.mode {
                        // Batch statistics depend on the input as well.
                        Mode::Train => {
                            scale
                                * (g[i] as f64
                                    - sum_g[ch] / count
                                    - xhat[i] as f64 * sum_gx[ch] / count)
                        }
                        Mode::Eval => scale * g[i] as f64,
                    } as f32;
                }
            }
        }
        Tensor::new(&cache.shape, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BATCHNORM_EPSILON, BATCHNORM_MOMENTUM};

    fn bn(c: usize) -> BatchNorm1d {
        BatchNorm1d::new(c, BATCHNORM_MOMENTUM, BATCHNORM_EPSILON)
    }

    #[test]
    fn standardized_batch_is_unchanged() {
        let mut layer = bn(1);
        let x = Tensor::new(&[2, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = layer.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut layer = bn(2);
        layer.beta = Tensor::from_vec(vec![0.25, -3.0]);
        let x = Tensor::new(&[3, 2, 4], (0..24).map(|i| if (i / 4) % 2 == 0 { 7.0 } else { -2.0 }).collect())
            .unwrap();
        let y = layer.forward(&x, Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let expect = if (i / 4) % 2 == 0 { 0.25 } else { -3.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn running_stats_track_train_batches_only() {
        let mut layer = bn(1);
        let x = Tensor::new(&[1, 1, 4], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        // Eval before any train step uses the initial stats (mean 0, var 1).
        let y = layer.forward(&x, Mode::Eval).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] as f64 - 2.0 * s).abs() < 1e-6);
        assert_eq!(layer.running_mean.data(), &[0.0]);

        layer.forward(&x, Mode::Train).unwrap();
        assert!((layer.running_mean.data()[0] - 0.5).abs() < 1e-6);
        // unbiased var of [2,4,6,8] is 20/3
        let expect_var = 0.9 + 0.1 * 20.0 / 3.0;
        assert!((layer.running_var.data()[0] as f64 - expect_var).abs() < 1e-5);
        assert!(layer.running_var.data()[0] >= 0.0);
    }
}
