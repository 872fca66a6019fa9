use super::{check_grad_shape, pool_out_len, spatial_dims, spatial_shape, LayerKind};
use crate::error::Result;
use crate::tensor::Tensor;

/// Max pooling along the length axis. Ties resolve to the lowest index.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    window: usize,
    stride: usize,
    pub(crate) cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl MaxPool1d {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool1d {
            window,
            stride,
            cache: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::MaxPool1d {
            window: self.window,
            stride: self.stride,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, l, batched) = spatial_dims(x, "maxpool1d")?;
        let l_out = pool_out_len(l, self.window, self.stride)?;
        let src = x.data();
        let mut out = Vec::with_capacity(n * c * l_out);
        let mut argmax = Vec::with_capacity(n * c * l_out);
        for row in 0..n * c {
            let base = row * l;
            for t in 0..l_out {
                let start = base + t * self.stride;
                let mut best = start;
                for i in start + 1..start + self.window {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let output_shape = spatial_shape(n, c, l_out, batched);
        self.cache = Some(PoolCache {
            input_shape: x.shape().to_vec(),
            output_shape: output_shape.clone(),
            argmax,
        });
        Tensor::new(&output_shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| super::backward_before_forward("maxpool1d"))?;
        check_grad_shape(grad_out, &cache.output_shape, "maxpool1d")?;
        let mut dx = Tensor::zeros(&cache.input_shape);
        let d = dx.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            d[idx] += g;
        }
        Ok(dx)
    }
}
