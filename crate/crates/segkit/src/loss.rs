//! Segmentation losses, one representative per family: cross-entropy
//! (binary, categorical, class-weighted), soft Dice, and mean squared
//! error. Every loss reduces to the mean over elements / pixels so values
//! are comparable across batch sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, GUARD};

/// Probability clamp for logarithms: [GUARD, 1 - GUARD].
fn clamp_p(p: f64) -> f64 {
    p.clamp(GUARD, 1.0 - GUARD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    CategoricalCe,
    Dice,
    Mse,
    WeightedCe,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "categorical_ce" | "categorical_crossentropy" => Ok(LossKind::CategoricalCe),
            "dice" => Ok(LossKind::Dice),
            "mse" => Ok(LossKind::Mse),
            "weighted_ce" => Ok(LossKind::WeightedCe),
            other => Err(Error::BadConfig(format!("unknown loss kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::CategoricalCe => "categorical_ce",
            LossKind::Dice => "dice",
            LossKind::Mse => "mse",
            LossKind::WeightedCe => "weighted_ce",
        }
    }
}

/// Loss selection plus its parameters, expressible in the run-config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub class_weights: Option<Vec<f64>>,
    pub smoothing: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::CategoricalCe,
            class_weights: None,
            smoothing: 1.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.smoothing <= 0.0 {
            return Err(Error::BadConfig(format!(
                "dice smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes {
                return Err(Error::BadConfig(format!(
                    "{} class weights for {classes} classes",
                    w.len()
                )));
            }
            if w.iter().any(|&x| x <= 0.0) {
                return Err(Error::BadConfig("class weights must be positive".into()));
            }
        } else if self.kind == LossKind::WeightedCe {
            return Err(Error::BadConfig(
                "weighted_ce needs class_weights".into(),
            ));
        }
        Ok(())
    }

    /// Apply this loss to one-hot targets and channel probabilities
    /// (both N x C x H x W).
    pub fn compute(&self, tape: &mut Tape, target_onehot: Var, probs: Var) -> Result<Var> {
        match self.kind {
            LossKind::Bce => tape.bce_loss(target_onehot, probs),
            LossKind::CategoricalCe => tape.categorical_ce(target_onehot, probs, None),
            LossKind::WeightedCe => {
                tape.categorical_ce(target_onehot, probs, self.class_weights.as_deref())
            }
            LossKind::Dice => tape.dice_loss(target_onehot, probs, self.smoothing),
            LossKind::Mse => tape.mse_loss(target_onehot, probs),
        }
    }
}

fn check_same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    Ok(())
}

impl Tape {
    /// Mean binary cross-entropy: -(y ln p + (1-y) ln(1-p)), probabilities
    /// clamped away from {0, 1}.
    pub fn bce_loss(&mut self, target: Var, prob: Var) -> Result<Var> {
        check_same_shape(self, target, prob, "bce_loss")?;
        let y = self.value(target).data();
        let p = self.value(prob).data();
        let n = y.len() as f64;
        let mut acc = 0.0;
        for (&y, &p) in y.iter().zip(p) {
            let p = clamp_p(p);
            acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let value = Tensor::scalar(acc / n);

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let g = grad.data()[0] / n;
            let y = parents[0].data();
            let p = parents[1].data();
            let dy: Vec<f64> = p
                .iter()
                .map(|&p| {
                    let p = clamp_p(p);
                    -g * (p.ln() - (1.0 - p).ln())
                })
                .collect();
            let dp: Vec<f64> = y
                .iter()
                .zip(p)
                .map(|(&y, &p)| {
                    if !(GUARD..=1.0 - GUARD).contains(&p) {
                        return 0.0; // clamped region
                    }
                    -g * (y / p - (1.0 - y) / (1.0 - p))
                })
                .collect();
            vec![
                Tensor::new(parents[0].shape().to_vec(), dy).unwrap(),
                Tensor::new(parents[1].shape().to_vec(), dp).unwrap(),
            ]
        });
        Ok(self.push_op(value, vec![target, prob], back))
    }

    /// Mean over pixels of -sum_c w_c y_c ln(p_c) for N x C x H x W
    /// one-hot targets and softmax probabilities. Channel sums must be
    /// within 1e-6 of 1.
    pub fn categorical_ce(
        &mut self,
        target_onehot: Var,
        probs: Var,
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        check_same_shape(self, target_onehot, probs, "categorical_ce")?;
        let shape = self.value(probs).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "categorical_ce wants NCHW, got {shape:?}"
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let wts: Vec<f64> = match weights {
            Some(w) => {
                if w.len() != c {
                    return Err(Error::ShapeMismatch(format!(
                        "{} weights for {c} classes",
                        w.len()
                    )));
                }
                w.to_vec()
            }
            None => vec![1.0; c],
        };

        let plane = h * w;
        let p = self.value(probs).data();
        let mut worst = 0.0f64;
        for ni in 0..n {
            for i in 0..plane {
                let mut s = 0.0;
                for ch in 0..c {
                    s += p[(ni * c + ch) * plane + i];
                }
                worst = worst.max((s - 1.0).abs());
            }
        }
        if worst > 1e-6 {
            return Err(Error::NotNormalized(worst));
        }

        let y = self.value(target_onehot).data();
        let npix = (n * plane) as f64;
        let mut acc = 0.0;
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * plane;
                for i in 0..plane {
                    if y[base + i] != 0.0 {
                        acc -= wts[ch] * y[base + i] * clamp_p(p[base + i]).ln();
                    }
                }
            }
        }
        let value = Tensor::scalar(acc / npix);

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let g = grad.data()[0] / npix;
            let y = parents[0].data();
            let p = parents[1].data();
            let mut dy = vec![0.0; y.len()];
            let mut dp = vec![0.0; p.len()];
            for ni in 0..n {
                for ch in 0..c {
                    let base = (ni * c + ch) * plane;
                    for i in 0..plane {
                        let pc = clamp_p(p[base + i]);
                        dy[base + i] = -g * wts[ch] * pc.ln();
                        if (GUARD..=1.0 - GUARD).contains(&p[base + i]) {
                            dp[base + i] = -g * wts[ch] * y[base + i] / pc;
                        }
                    }
                }
            }
            vec![
                Tensor::new(parents[0].shape().to_vec(), dy).unwrap(),
                Tensor::new(parents[1].shape().to_vec(), dp).unwrap(),
            ]
        });
        Ok(self.push_op(value, vec![target_onehot, probs], back))
    }

    /// Soft Dice over flattened tensors:
    /// 1 - (2 sum(y p) + s) / (sum y + sum p + s). Defined at y = p = 0.
    pub fn dice_loss(&mut self, target: Var, prob: Var, smoothing: f64) -> Result<Var> {
        check_same_shape(self, target, prob, "dice_loss")?;
        if smoothing <= 0.0 {
            return Err(Error::BadConfig(format!(
                "dice smoothing must be positive, got {smoothing}"
            )));
        }
        let y = self.value(target).data();
        let p = self.value(prob).data();
        let mut inter = 0.0;
        let mut sum_y = 0.0;
        let mut sum_p = 0.0;
        for (&y, &p) in y.iter().zip(p) {
            inter += y * p;
            sum_y += y;
            sum_p += p;
        }
        let numer = 2.0 * inter + smoothing;
        let denom = sum_y + sum_p + smoothing;
        let value = Tensor::scalar(1.0 - numer / denom);

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let g = grad.data()[0];
            let y = parents[0].data();
            let p = parents[1].data();
            let d2 = denom * denom;
            // d/dp_i of numer/denom = (2 y_i denom - numer) / denom^2
            let dp: Vec<f64> = y.iter().map(|&y| -g * (2.0 * y * denom - numer) / d2).collect();
            let dy: Vec<f64> = p.iter().map(|&p| -g * (2.0 * p * denom - numer) / d2).collect();
            vec![
                Tensor::new(parents[0].shape().to_vec(), dy).unwrap(),
                Tensor::new(parents[1].shape().to_vec(), dp).unwrap(),
            ]
        });
        Ok(self.push_op(value, vec![target, prob], back))
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, target: Var, prediction: Var) -> Result<Var> {
        check_same_shape(self, target, prediction, "mse_loss")?;
        let y = self.value(target).data();
        let p = self.value(prediction).data();
        let n = y.len() as f64;
        let acc: f64 = y.iter().zip(p).map(|(y, p)| (y - p) * (y - p)).sum();
        let value = Tensor::scalar(acc / n);

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let g = grad.data()[0] * 2.0 / n;
            let y = parents[0].data();
            let p = parents[1].data();
            let dy: Vec<f64> = y.iter().zip(p).map(|(y, p)| g * (y - p)).collect();
            let dp: Vec<f64> = y.iter().zip(p).map(|(y, p)| g * (p - y)).collect();
            vec![
                Tensor::new(parents[0].shape().to_vec(), dy).unwrap(),
                Tensor::new(parents[1].shape().to_vec(), dp).unwrap(),
            ]
        });
        Ok(self.push_op(value, vec![target, prediction], back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_of(f: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape);
        tape.value(v).item().unwrap()
    }

    #[test]
    fn bce_perfect_prediction() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.0]));
            let p = t.constant(Tensor::from_vec(vec![1.0]));
            t.bce_loss(y, p).unwrap()
        });
        assert!(l.abs() < 1e-9, "bce at perfect prediction: {l}");
    }

    #[test]
    fn bce_half_is_ln2() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.0]));
            let p = t.constant(Tensor::from_vec(vec![0.5]));
            t.bce_loss(y, p).unwrap()
        });
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn bce_symmetric_at_half() {
        let a = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![0.0]));
            let p = t.constant(Tensor::from_vec(vec![0.5]));
            t.bce_loss(y, p).unwrap()
        });
        let b = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.0]));
            let p = t.constant(Tensor::from_vec(vec![0.5]));
            t.bce_loss(y, p).unwrap()
        });
        assert_eq!(a, b);
    }

    fn onehot_2class(class: usize) -> Tensor {
        let mut t = Tensor::zeros(&[1, 2, 1, 1]);
        t.data_mut()[class] = 1.0;
        t
    }

    #[test]
    fn cce_zero_at_exact_onehot() {
        let l = scalar_of(|t| {
            let y = t.constant(onehot_2class(0));
            let p = t.constant(onehot_2class(0));
            t.categorical_ce(y, p, None).unwrap()
        });
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn cce_uniform_two_class_is_ln2() {
        let l = scalar_of(|t| {
            let y = t.constant(onehot_2class(0));
            let p = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap());
            t.categorical_ce(y, p, None).unwrap()
        });
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cce_weights_scale_linearly() {
        let base = scalar_of(|t| {
            let y = t.constant(onehot_2class(0));
            let p = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap());
            t.categorical_ce(y, p, Some(&[1.0, 1.0])).unwrap()
        });
        let doubled = scalar_of(|t| {
            let y = t.constant(onehot_2class(0));
            let p = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap());
            t.categorical_ce(y, p, Some(&[2.0, 1.0])).unwrap()
        });
        assert!((doubled - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn cce_uniform_weights_equal_unweighted() {
        // layout [N=1, C=2, H=1, W=2]: channel sums per pixel are 1
        let data: Vec<f64> = vec![0.3, 0.7, 0.7, 0.3];
        let p = Tensor::new(vec![1, 2, 1, 2], data).unwrap();
        let y = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = scalar_of(|t| {
            let yv = t.constant(y.clone());
            let pv = t.constant(p.clone());
            t.categorical_ce(yv, pv, None).unwrap()
        });
        let b = scalar_of(|t| {
            let yv = t.constant(y.clone());
            let pv = t.constant(p.clone());
            t.categorical_ce(yv, pv, Some(&[1.0, 1.0])).unwrap()
        });
        assert_eq!(a, b);
    }

    #[test]
    fn cce_rejects_unnormalized() {
        let mut tape = Tape::new();
        let y = tape.constant(onehot_2class(0));
        let p = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.6, 0.6]).unwrap());
        assert!(matches!(
            tape.categorical_ce(y, p, None),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn dice_all_zeros_edge_case() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::zeros(&[4]));
            let p = t.constant(Tensor::zeros(&[4]));
            t.dice_loss(y, p, 1.0).unwrap()
        });
        assert_eq!(l, 0.0);
    }

    #[test]
    fn dice_perfect_overlap() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.0]));
            let p = t.constant(Tensor::from_vec(vec![1.0]));
            t.dice_loss(y, p, 1.0).unwrap()
        });
        assert_eq!(l, 0.0);
    }

    #[test]
    fn dice_total_miss_is_half() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.0]));
            let p = t.constant(Tensor::from_vec(vec![0.0]));
            t.dice_loss(y, p, 1.0).unwrap()
        });
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dice_symmetric_in_arguments() {
        let a = Tensor::from_vec(vec![0.2, 0.9, 0.4, 0.0]);
        let b = Tensor::from_vec(vec![0.7, 0.1, 0.5, 1.0]);
        let l1 = scalar_of(|t| {
            let y = t.constant(a.clone());
            let p = t.constant(b.clone());
            t.dice_loss(y, p, 1.0).unwrap()
        });
        let l2 = scalar_of(|t| {
            let y = t.constant(b.clone());
            let p = t.constant(a.clone());
            t.dice_loss(y, p, 1.0).unwrap()
        });
        assert_eq!(l1, l2);
    }

    #[test]
    fn mse_values() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![0.0, 2.0]));
            let p = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
            t.mse_loss(y, p).unwrap()
        });
        assert_eq!(l, 1.0);
    }

    #[test]
    fn mse_zero_iff_equal() {
        let l = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![1.5, -2.0]));
            let p = t.constant(Tensor::from_vec(vec![1.5, -2.0]));
            t.mse_loss(y, p).unwrap()
        });
        assert_eq!(l, 0.0);
    }

    #[test]
    fn mse_quadratic_homogeneity() {
        let base = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
            let p = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
            t.mse_loss(y, p).unwrap()
        });
        let scaled = scalar_of(|t| {
            let y = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
            let p = t.constant(Tensor::from_vec(vec![2.0, 4.0]));
            t.mse_loss(y, p).unwrap()
        });
        assert!((scaled - 4.0 * base).abs() < 1e-12);
    }

    #[test]
    fn losses_nonnegative_on_random_inputs() {
        let mut s = 3u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 33) as f64 / (1u64 << 31) as f64).abs().min(0.999)
        };
        for _ in 0..20 {
            let y0: Vec<f64> = (0..8).map(|_| if next() > 0.5 { 1.0 } else { 0.0 }).collect();
            let p0: Vec<f64> = (0..8).map(|_| next().clamp(0.01, 0.99)).collect();
            for kind in ["bce", "dice", "mse"] {
                let (y0, p0) = (y0.clone(), p0.clone());
                let l = scalar_of(move |t| {
                    let y = t.constant(Tensor::from_vec(y0));
                    let p = t.constant(Tensor::from_vec(p0));
                    match kind {
                        "bce" => t.bce_loss(y, p).unwrap(),
                        "dice" => t.dice_loss(y, p, 1.0).unwrap(),
                        _ => t.mse_loss(y, p).unwrap(),
                    }
                });
                assert!(l >= 0.0, "{kind} loss negative: {l}");
            }
        }
    }
}
