//! Activation functions. `softmax_channel` normalizes over the channel
//! axis of an NCHW tensor, per pixel; everything else is elementwise.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Sigmoid,
    Relu,
    LeakyRelu,
    Tanh,
    SoftmaxChannel,
}

impl ActKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActKind::Sigmoid => "sigmoid",
            ActKind::Relu => "relu",
            ActKind::LeakyRelu => "leaky_relu",
            ActKind::Tanh => "tanh",
            ActKind::SoftmaxChannel => "softmax_channel",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn activation(&mut self, kind: ActKind, input: Var) -> Result<Var> {
        match kind {
            ActKind::Sigmoid => {
                let value = self.value(input).map(sigmoid);
                let back = Box::new(move |grad: &Tensor, _p: &[&Tensor], out: &Tensor| {
                    let dg: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    vec![Tensor::new(out.shape().to_vec(), dg).unwrap()]
                });
                Ok(self.push_op(value, vec![input], back))
            }
            ActKind::Relu => {
                let value = self.value(input).map(|x| x.max(0.0));
                let back = Box::new(move |grad: &Tensor, p: &[&Tensor], _out: &Tensor| {
                    let dg: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(p[0].data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    vec![Tensor::new(p[0].shape().to_vec(), dg).unwrap()]
                });
                Ok(self.push_op(value, vec![input], back))
            }
            ActKind::LeakyRelu => {
                let value = self
                    .value(input)
                    .map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
                let back = Box::new(move |grad: &Tensor, p: &[&Tensor], _out: &Tensor| {
                    let dg: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(p[0].data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { g * LEAKY_SLOPE })
                        .collect();
                    vec![Tensor::new(p[0].shape().to_vec(), dg).unwrap()]
                });
                Ok(self.push_op(value, vec![input], back))
            }
            ActKind::Tanh => {
                let value = self.value(input).map(f64::tanh);
                let back = Box::new(move |grad: &Tensor, _p: &[&Tensor], out: &Tensor| {
                    let dg: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    vec![Tensor::new(out.shape().to_vec(), dg).unwrap()]
                });
                Ok(self.push_op(value, vec![input], back))
            }
            ActKind::SoftmaxChannel => self.softmax_channel(input),
        }
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(ActKind::Sigmoid, input)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(ActKind::Relu, input)
    }

    /// Per-pixel softmax over the channel axis of an NCHW tensor.
    /// Output sums to 1 over channels at every pixel.
    pub fn softmax_channel(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "softmax_channel wants NCHW, got {shape:?}"
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for p in 0..plane {
                let mut max = f64::NEG_INFINITY;
                for ch in 0..c {
                    max = max.max(x[(ni * c + ch) * plane + p]);
                }
                let mut denom = 0.0;
                for ch in 0..c {
                    let e = (x[(ni * c + ch) * plane + p] - max).exp();
                    out[(ni * c + ch) * plane + p] = e;
                    denom += e;
                }
                for ch in 0..c {
                    out[(ni * c + ch) * plane + p] /= denom;
                }
            }
        }
        let value = Tensor::new(shape, out)?;

        let back = Box::new(move |grad: &Tensor, _p: &[&Tensor], out: &Tensor| {
            let g = grad.data();
            let s = out.data();
            let mut dx = vec![0.0; s.len()];
            for ni in 0..n {
                for p in 0..plane {
                    let mut dot = 0.0;
                    for ch in 0..c {
                        let i = (ni * c + ch) * plane + p;
                        dot += g[i] * s[i];
                    }
                    for ch in 0..c {
                        let i = (ni * c + ch) * plane + p;
                        dx[i] = s[i] * (g[i] - dot);
                    }
                }
            }
            vec![Tensor::new(out.shape().to_vec(), dx).unwrap()]
        });
        Ok(self.push_op(value, vec![input], back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-3.0, 3.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn leaky_slope_applies_below_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-2.0, 2.0]));
        let y = tape.activation(ActKind::LeakyRelu, x).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.02, 2.0]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4, 1, 1], 2.3));
        let y = tape.softmax_channel(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_per_pixel() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 1.37).sin() * 3.0).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3, 2, 2], data).unwrap());
        let y = tape.softmax_channel(x).unwrap();
        let s = tape.value(y);
        for n in 0..2 {
            for p in 0..4 {
                let total: f64 = (0..3).map(|c| s.data()[(n * 3 + c) * 4 + p]).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sigmoid_monotone_on_grid() {
        let mut tape = Tape::new();
        let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
        let x = tape.constant(Tensor::from_vec(xs));
        let y = tape.sigmoid(x).unwrap();
        let v = tape.value(y).data();
        for pair in v.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }
}
