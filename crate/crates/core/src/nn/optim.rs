//! SGD with momentum and Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = match *self {
            OptimizerKind::Sgd { lr, momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config(format!("SGD momentum {momentum} outside [0, 1)")));
                }
                lr
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::config("Adam betas must lie in [0, 1)"));
                }
                if !(eps > 0.0) {
                    return Err(Error::config("Adam eps must be > 0"));
                }
                lr
            }
        };
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate {lr} must be > 0")));
        }
        Ok(())
    }
}

/// A parameter handed to the optimizer together with its gradient.
pub struct ParamRef<'a> {
    /// Used in diagnostics, e.g. `common[3].weight`.
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    /// First moment (Adam) or velocity (SGD), one buffer per parameter.
    first: Vec<Vec<f64>>,
    /// Second moment, Adam only.
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Optimizer {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [ParamRef<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.value.shape() != p.grad.shape() {
                return Err(Error::config(format!(
                    "{}: gradient shape {:?} differs from parameter {:?}",
                    p.name,
                    p.grad.shape(),
                    p.value.shape()
                )));
            }
            if !p.grad.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient in {}", p.name)));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::state(
                "optimizer called with a different parameter set than on its first step",
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let grad = p.grad.data();
            let value = p.value.data_mut();
            match self.kind {
                OptimizerKind::Sgd { lr, momentum } => {
                    for j in 0..value.len() {
                        m[j] = momentum * m[j] + grad[j] as f64;
                        value[j] = (value[j] as f64 - lr * m[j]) as f32;
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for j in 0..value.len() {
                        let g = grad[j] as f64;
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        value[j] = (value[j] as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
