use rand::RngCore;

use super::{check_grad_shape, he_uniform, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Below this many rows the forward uses dot products instead of GEMM.
const GEMV_ROWS: usize = 8;

/// Eight-lane dot product; the independent partial sums let it vectorize.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub(crate) input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut dyn RngCore) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: Tensor::new(&[out_dim, in_dim], he_uniform(out_dim * in_dim, in_dim, rng))
                .expect("dense weight shape"),
            bias: Tensor::zeros(&[out_dim]),
            grad_weight: Tensor::zeros(&[out_dim, in_dim]),
            grad_bias: Tensor::zeros(&[out_dim]),
            input: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
        }
    }

    fn rows(&self, x: &Tensor) -> Result<(usize, bool)> {
        match *x.shape() {
            [d] if d == self.in_dim => Ok((1, false)),
            [n, d] if d == self.in_dim => Ok((n, true)),
            _ => Err(Error::config(format!(
                "dense expects [{0}] or [N, {0}], got {1:?}",
                self.in_dim,
                x.shape()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, batched) = self.rows(x)?;
        x.expect_finite("dense input")?;
        let (di, dout) = (self.in_dim, self.out_dim);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        if n < GEMV_ROWS {
            // sgemm repacks the whole weight matrix per call, which dominates for a few rows.
            for (xr, or) in x.data().chunks_exact(di).zip(out.chunks_exact_mut(dout)) {
                for (o, w) in or.iter_mut().zip(self.weight.data().chunks_exact(di)) {
                    *o += dot(w, xr);
                }
            }
        } else {
            // SAFETY: buffers sized for the given strides.
            unsafe {
                // out[n, dout] += x[n, di] · Wᵀ
                matrixmultiply::sgemm(
                    n,
                    di,
                    dout,
                    1.0,
                    x.data().as_ptr(),
                    di as isize,
                    1,
                    self.weight.data().as_ptr(),
                    1,
                    di as isize,
                    1.0,
                    out.as_mut_ptr(),
                    dout as isize,
                    1,
                );
            }
        }
        self.input = Some(x.clone());
        let shape = if batched { vec![n, dout] } else { vec![dout] };
        Tensor::new(&shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("dense"))?;
        let batched = x.rank() == 2;
        let n = if batched { x.shape()[0] } else { 1 };
        let (di, dout) = (self.in_dim, self.out_dim);
        let expected = if batched { vec![n, dout] } else { vec![dout] };
        check_grad_shape(grad_out, &expected, "dense")?;
        let g = grad_out.data();

        for (o, gb) in self.grad_bias.data_mut().iter_mut().enumerate() {
            let s: f64 = (0..n).map(|b| g[b * dout + o] as f64).sum();
            *gb += s as f32;
        }
        let mut dx = vec![0f32; n * di];
        // SAFETY: buffers sized for the given strides.
        unsafe {
            // grad_weight[dout, di] += gᵀ · x
            matrixmultiply::sgemm(
                dout,
                n,
                di,
                1.0,
                g.as_ptr(),
                1,
                dout as isize,
                x.data().as_ptr(),
                di as isize,
                1,
                1.0,
                self.grad_weight.data_mut().as_mut_ptr(),
                di as isize,
                1,
            );
            // dx[n, di] = g · W
            matrixmultiply::sgemm(
                n,
                dout,
                di,
                1.0,
                g.as_ptr(),
                dout as isize,
                1,
                self.weight.data().as_ptr(),
                di as isize,
                1,
                0.0,
                dx.as_mut_ptr(),
                di as isize,
                1,
            );
        }
        let shape = if batched { vec![n, di] } else { vec![di] };
        Tensor::new(&shape, dx)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn layer(in_dim: usize, out_dim: usize) -> Dense {
        Dense::new(in_dim, out_dim, &mut ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn identity_weights_pass_input() {
        let mut d = layer(3, 3);
        d.weight = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::from_vec(vec![0.25, -2.0, 7.5]);
        assert_eq!(d.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut d = layer(4, 2);
        d.bias = Tensor::from_vec(vec![0.5, -1.5]);
        let y = d.forward(&Tensor::zeros(&[3, 4])).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        for b in 0..3 {
            assert_eq!(y.row(b), &[0.5, -1.5]);
        }
    }

    #[test]
    fn dim_mismatch_is_config_error() {
        let mut d = layer(4, 2);
        assert!(matches!(d.forward(&Tensor::zeros(&[3])), Err(Error::Config(_))));
    }

    #[test]
    fn hand_computed_gradients() {
        let mut d = layer(2, 1);
        d.weight = Tensor::new(&[1, 2], vec![2.0, -3.0]).unwrap();
        d.bias = Tensor::from_vec(vec![1.0]);
        let y = d.forward(&Tensor::from_vec(vec![0.5, 4.0])).unwrap();
        assert_eq!(y.data(), &[2.0 * 0.5 - 3.0 * 4.0 + 1.0]);
        let dx = d.backward(&Tensor::from_vec(vec![2.0])).unwrap();
        assert_eq!(dx.data(), &[4.0, -6.0]);
        assert_eq!(d.grad_weight.data(), &[1.0, 8.0]);
        assert_eq!(d.grad_bias.data(), &[2.0]);
    }
}
