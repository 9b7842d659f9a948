//! Fully connected layer: y = f(xW + b).

use super::act::ActKind;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

impl Tape {
    /// Affine map over rank-2 input [N, F] with weights [F, U] and bias
    /// [U], then an optional elementwise activation.
    pub fn dense(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        activation: Option<ActKind>,
    ) -> Result<Var> {
        if matches!(activation, Some(ActKind::SoftmaxChannel)) {
            return Err(Error::BadConfig(
                "softmax_channel needs NCHW input, not a dense layer".into(),
            ));
        }
        let y = self.matmul(input, weights)?;
        let y = self.add(y, bias)?;
        match activation {
            Some(kind) => self.activation(kind, y),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_weights_pass_through() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![3.0, -1.5]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.dense(x, w, b, None).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.5]);
    }

    #[test]
    fn hand_arithmetic() {
        // x=[1,1], W=[[1],[1]], b=[1] -> [3]
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![1.0]));
        let y = tape.dense(x, w, b, None).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);
    }

    #[test]
    fn relu_zeroes_negative_preactivation() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let w = tape.constant(Tensor::new(vec![1, 1], vec![-3.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.dense(x, w, b, Some(ActKind::Relu)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }
}
