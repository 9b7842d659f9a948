//! Central finite-difference gradient checking, the oracle every
//! differentiable operation is verified against.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compare the tape's analytic gradients of a scalar function against
/// central differences. Returns the maximum relative error over every
/// element of every input; the denominator is max(1, |analytic|).
pub fn finite_difference_check<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite difference step must be positive");

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NotScalar(tape.value(out).len()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let fp = eval(&plus)?;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            let fm = eval(&minus)?;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
