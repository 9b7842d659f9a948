//! Batch normalization over NCHW input: per-channel statistics across
//! (N, H, W), learnable scale/shift, running moments for inference.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel normalization state. `gamma`/`beta` are the learnable
/// affine parameters; the running moments feed inference mode.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Batch statistics of one forward pass, kept so the trainer can fold
/// them into the running moments.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    /// Normalize `input` per channel. Training mode uses this batch's
    /// statistics and returns them (for the running update); inference
    /// mode uses the provided running moments. gamma/beta enter as tape
    /// leaves so they receive gradients.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        epsilon: f64,
        training: bool,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "batch_norm wants NCHW, got {shape:?}"
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if self.value(gamma).len() != c
            || self.value(beta).len() != c
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(Error::ShapeMismatch(format!(
                "batch_norm channel vectors disagree with {c} channels"
            )));
        }

        let x = self.value(input).data();
        let plane = h * w;
        let count = (n * plane) as f64;

        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * plane;
                    for i in 0..plane {
                        acc += x[base + i];
                    }
                }
                mean[ch] = acc / count;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * plane;
                    for i in 0..plane {
                        let d = x[base + i] - mean[ch];
                        sq += d * d;
                    }
                }
                var[ch] = sq / count;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + epsilon).sqrt()).collect();
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * plane;
                let (m, s, g, b) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for i in 0..plane {
                    out[base + i] = (x[base + i] - m) * s * g + b;
                }
            }
        }
        let value = Tensor::new(shape, out)?;

        let moments = training.then(|| BatchMoments {
            mean: mean.clone(),
            var: var.clone(),
        });

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let x = parents[0].data();
            let gamma = parents[1].data();
            let g = grad.data();
            let mut dx = Tensor::zeros(parents[0].shape());
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];

            for ch in 0..c {
                let (m, s) = (mean[ch], inv_std[ch]);
                // per-channel reductions over (N, H, W)
                let mut sum_g = 0.0;
                let mut sum_g_xhat = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ch) * plane;
                    for i in 0..plane {
                        let xhat = (x[base + i] - m) * s;
                        sum_g += g[base + i];
                        sum_g_xhat += g[base + i] * xhat;
                    }
                }
                dbeta[ch] = sum_g;
                dgamma[ch] = sum_g_xhat;

                let dxs = dx.data_mut();
                if training {
                    // statistics depend on x: full batch-norm backward
                    let mg = sum_g / count;
                    let mgx = sum_g_xhat / count;
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for i in 0..plane {
                            let xhat = (x[base + i] - m) * s;
                            dxs[base + i] =
                                gamma[ch] * s * (g[base + i] - mg - xhat * mgx);
                        }
                    }
                } else {
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for i in 0..plane {
                            dxs[base + i] = g[base + i] * gamma[ch] * s;
                        }
                    }
                }
            }
            vec![dx, Tensor::from_vec(dgamma), Tensor::from_vec(dbeta)]
        });
        let out_var = self.push_op(value, vec![input, gamma, beta], back);
        Ok((out_var, moments))
    }
}

/// Fold one batch's moments into the running estimates:
/// running = (1 - momentum) * running + momentum * batch.
pub fn update_running(state: &mut BatchNormState, moments: &BatchMoments) {
    let m = state.momentum;
    for (r, b) in state.running_mean.iter_mut().zip(&moments.mean) {
        *r = (1.0 - m) * *r + m * b;
    }
    for (r, b) in state.running_var.iter_mut().zip(&moments.var) {
        *r = (1.0 - m) * *r + m * b;
    }
}
