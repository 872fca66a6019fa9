use rand::RngCore;

use super::{check_grad_shape, conv_out_len, he_uniform, spatial_dims, spatial_shape, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1-D convolution lowered to a single GEMM over an im2col buffer.
#[derive(Debug, Clone)]
pub struct Conv1d {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
    /// `[out_channels, in_channels, kernel_size]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub(crate) cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvCache {
    /// `[in_channels * kernel_size, n * l_out]`
    cols: Vec<f32>,
    n: usize,
    l_in: usize,
    l_out: usize,
    batched: bool,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let wshape = [out_channels, in_channels, kernel_size];
        let weight = Tensor::new(
            &wshape,
            he_uniform(out_channels * in_channels * kernel_size, in_channels * kernel_size, rng),
        )
        .expect("conv weight shape");
        Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            weight,
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&wshape),
            grad_bias: Tensor::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Conv1d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, l, batched) = spatial_dims(x, "conv1d")?;
        if c != self.in_channels {
            return Err(Error::config(format!(
                "conv1d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        x.expect_finite("conv1d input")?;
        let k = self.kernel_size;
        let l_out = conv_out_len(l, k, self.stride, self.padding)?;
        let ck = c * k;
        let cols_w = n * l_out;

        let src = x.data();
        let mut cols = vec![0f32; ck * cols_w];
        for ci in 0..c {
            for ki in 0..k {
                let row = &mut cols[(ci * k + ki) * cols_w..(ci * k + ki + 1) * cols_w];
                for b in 0..n {
                    let xrow = &src[(b * c + ci) * l..(b * c + ci + 1) * l];
                    let dst = &mut row[b * l_out..(b + 1) * l_out];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let pos = (t * self.stride + ki) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < l {
                            *d = xrow[pos as usize];
                        }
                    }
                }
            }
        }

        let oc = self.out_channels;
        let mut prod = vec![0f32; oc * cols_w];
        // SAFETY: all buffers are sized for the strides passed below.
        unsafe {
            matrixmultiply::sgemm(
                oc,
                ck,
                cols_w,
                1.0,
                self.weight.data().as_ptr(),
                ck as isize,
                1,
                cols.as_ptr(),
                cols_w as isize,
                1,
                0.0,
                prod.as_mut_ptr(),
                cols_w as isize,
                1,
            );
        }

        let bias = self.bias.data();
        let mut out = vec![0f32; n * oc * l_out];
        for o in 0..oc {
            let prow = &prod[o * cols_w..(o + 1) * cols_w];
            for b in 0..n {
                let dst = &mut out[(b * oc + o) * l_out..(b * oc + o + 1) * l_out];
                for (d, &p) in dst.iter_mut().zip(&prow[b * l_out..(b + 1) * l_out]) {
                    *d = p + bias[o];
                }
            }
        }

        self.cache = Some(ConvCache {
            cols,
            n,
            l_in: l,
            l_out,
            batched,
        });
        Tensor::new(&spatial_shape(n, oc, l_out, batched), out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("conv1d"))?;
        let (n, l, l_out) = (cache.n, cache.l_in, cache.l_out);
        let (oc, c, k) = (self.out_channels, self.in_channels, self.kernel_size);
        check_grad_shape(grad_out, &spatial_shape(n, oc, l_out, cache.batched), "conv1d")?;
        let ck = c * k;
        let cols_w = n * l_out;

        // [n, oc, l_out] -> [oc, n * l_out]
        let g = grad_out.data();
        let mut gmat = vec![0f32; oc * cols_w];
        for b in 0..n {
            for o in 0..oc {
                gmat[o * cols_w + b * l_out..o * cols_w + (b + 1) * l_out]
                    .copy_from_slice(&g[(b * oc + o) * l_out..(b * oc + o + 1) * l_out]);
            }
        }

        for (o, gb) in self.grad_bias.data_mut().iter_mut().enumerate() {
            let s: f64 = gmat[o * cols_w..(o + 1) * cols_w].iter().map(|&v| v as f64).sum();
            *gb += s as f32;
        }

        let mut dcols = vec![0f32; ck * cols_w];
        // SAFETY: all buffers are sized for the strides passed below.
        unsafe {
            // grad_weight += gmat · colsᵀ
            matrixmultiply::sgemm(
                oc,
                cols_w,
                ck,
                1.0,
                gmat.as_ptr(),
                cols_w as isize,
                1,
                cache.cols.as_ptr(),
                1,
                cols_w as isize,
                1.0,
                self.grad_weight.data_mut().as_mut_ptr(),
                ck as isize,
                1,
            );
            // dcols = weightᵀ · gmat
            matrixmultiply::sgemm(
                ck,
                oc,
                cols_w,
                1.0,
                self.weight.data().as_ptr(),
                1,
                ck as isize,
                gmat.as_ptr(),
                cols_w as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                cols_w as isize,
                1,
            );
        }

        let mut dx = vec![0f32; n * c * l];
        for ci in 0..c {
            for ki in 0..k {
                let row = &dcols[(ci * k + ki) * cols_w..(ci * k + ki + 1) * cols_w];
                for b in 0..n {
                    let dxrow = &mut dx[(b * c + ci) * l..(b * c + ci + 1) * l];
                    for (t, &v) in row[b * l_out..(b + 1) * l_out].iter().enumerate() {
                        let pos = (t * self.stride + ki) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < l {
                            dxrow[pos as usize] += v;
                        }
                    }
                }
            }
        }
        Tensor::new(&spatial_shape(n, c, l, cache.batched), dx)
    }
}
