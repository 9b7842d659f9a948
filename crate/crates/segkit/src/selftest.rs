//! Self-verification suites: central finite-difference gradient checks
//! for every differentiable operation and loss, the atrous/standard
//! convolution identity, metric oracles against brute-force set
//! computations, analytic loss values, and palette fidelity.
//!
//! `segkit selftest` runs all of them; the acceptance tests call the
//! same functions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image_io::RgbImage;
use crate::data::palette::{
    hex_to_rgb, labels_to_rgb, rgb_mask_to_labels, LabelPalette, UnknownColorPolicy,
};
use crate::error::Result;
use crate::metrics::{
    f1_score, iou_per_class, mean_iou, pixel_accuracy, thresholded_score, AbsentClassPolicy,
    ConfusionMatrix, ThresholdMetric,
};
use crate::ops::{conv2d_forward_atrous, conv2d_forward_standard, ActKind, ConvSpec, Padding, PoolKind};
use crate::tensor::{finite_difference_check, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_SEEDS: u64 = 10;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in +-[margin, 1]; keeps kinked functions away from their kinks.
fn rand_margin(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(margin..1.0)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rand_binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rand_onehot_nchw(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, c, h, w]);
    let plane = h * w;
    for ni in 0..n {
        for i in 0..plane {
            let class = rng.gen_range(0..c);
            t.data_mut()[(ni * c + class) * plane + i] = 1.0;
        }
    }
    t
}

/// Distinct values so max pooling has no near-ties.
fn rand_distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|i| rng.gen_range(-0.5..0.5) * 0.01 + i as f64 * 0.037)
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type GenFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type ScalarFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct GradCase {
    name: &'static str,
    gen: GenFn,
    f: ScalarFn,
}

fn mean_of(tape: &mut Tape, v: Var) -> Var {
    tape.mean_all(v)
}

fn gradient_cases() -> Vec<GradCase> {
    let mut cases: Vec<GradCase> = Vec::new();
    let mut push = |name: &'static str, gen: GenFn, f: ScalarFn| {
        cases.push(GradCase { name, gen, f });
    };

    push(
        "elementwise_add",
        Box::new(|r| vec![rand_tensor(r, &[2, 3], -1.0, 1.0), rand_tensor(r, &[2, 3], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "elementwise_sub",
        Box::new(|r| vec![rand_tensor(r, &[6], -1.0, 1.0), rand_tensor(r, &[6], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "elementwise_mul",
        Box::new(|r| vec![rand_tensor(r, &[2, 3], -1.0, 1.0), rand_tensor(r, &[2, 3], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "elementwise_div",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[5], -1.0, 1.0),
                rand_margin(r, &[5], 0.5),
            ]
        }),
        Box::new(|t, v| {
            let y = t.div(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "elementwise_max",
        Box::new(|r| {
            let a = rand_tensor(r, &[6], -1.0, 1.0);
            // keep a clear gap so the max argument never flips under fd steps
            let offsets = rand_margin(r, &[6], 0.2);
            let b_data: Vec<f64> = a.data().iter().zip(offsets.data()).map(|(x, d)| x + d).collect();
            vec![a, Tensor::from_vec(b_data)]
        }),
        Box::new(|t, v| {
            let y = t.emax(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "broadcast_mul",
        Box::new(|r| vec![rand_tensor(r, &[2, 3], -1.0, 1.0), rand_tensor(r, &[1, 3], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "matmul",
        Box::new(|r| vec![rand_tensor(r, &[2, 3], -1.0, 1.0), rand_tensor(r, &[3, 2], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "reshape_concat_slice",
        Box::new(|r| vec![rand_tensor(r, &[2, 4], -1.0, 1.0), rand_tensor(r, &[2, 4], -1.0, 1.0)]),
        Box::new(|t, v| {
            let a = t.reshape(v[0], vec![4, 2])?;
            let b = t.reshape(v[1], vec![4, 2])?;
            let c = t.concat(0, &[a, b])?;
            let s = t.slice(c, 0, 1, 5)?;
            Ok(mean_of(t, s))
        }),
    );
    push(
        "pad2d",
        Box::new(|r| vec![rand_tensor(r, &[1, 2, 3, 3], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.pad2d(v[0], 1, 0.0)?;
            let sq = t.mul(y, y)?;
            Ok(mean_of(t, sq))
        }),
    );
    push(
        "scale_shift",
        Box::new(|r| vec![rand_tensor(r, &[7], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.scale_shift(v[0], 2.5, -0.75);
            Ok(mean_of(t, y))
        }),
    );
    push(
        "conv2d_same",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 2, 5, 5], -1.0, 1.0),
                rand_tensor(r, &[3, 2, 3, 3], -1.0, 1.0),
                rand_tensor(r, &[3], -0.5, 0.5),
            ]
        }),
        Box::new(|t, v| {
            let spec = ConvSpec::new(3, 3);
            let y = t.conv2d(v[0], v[1], Some(v[2]), &spec)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "conv2d_valid_stride2",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 2, 6, 6], -1.0, 1.0),
                rand_tensor(r, &[2, 2, 3, 3], -1.0, 1.0),
            ]
        }),
        Box::new(|t, v| {
            let spec = ConvSpec::new(2, 3).stride(2).padding(Padding::Valid);
            let y = t.conv2d(v[0], v[1], None, &spec)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "conv2d_atrous_rate2",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 1, 7, 7], -1.0, 1.0),
                rand_tensor(r, &[2, 1, 3, 3], -1.0, 1.0),
                rand_tensor(r, &[2], -0.5, 0.5),
            ]
        }),
        Box::new(|t, v| {
            let spec = ConvSpec::new(2, 3).dilation(2);
            let y = t.conv2d(v[0], v[1], Some(v[2]), &spec)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "depthwise_conv2d",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 3, 5, 5], -1.0, 1.0),
                rand_tensor(r, &[3, 1, 3, 3], -1.0, 1.0),
            ]
        }),
        Box::new(|t, v| {
            let spec = ConvSpec::new(3, 3);
            let y = t.depthwise_conv2d(v[0], v[1], None, &spec)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "transposed_conv2d",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 2, 3, 3], -1.0, 1.0),
                rand_tensor(r, &[2, 3, 2, 2], -1.0, 1.0),
            ]
        }),
        Box::new(|t, v| {
            let y = t.transposed_conv2d(v[0], v[1], 2)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "max_pool",
        Box::new(|r| vec![rand_distinct(r, &[1, 2, 4, 4])]),
        Box::new(|t, v| {
            let y = t.pool2d(PoolKind::Max, v[0], 2, 2)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "average_pool",
        Box::new(|r| vec![rand_tensor(r, &[1, 2, 4, 4], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.pool2d(PoolKind::Average, v[0], 2, 2)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "adaptive_avg_pool",
        Box::new(|r| vec![rand_tensor(r, &[1, 2, 5, 5], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.adaptive_avg_pool(v[0], 2)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "batch_norm_training",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[2, 3, 2, 2], -1.0, 1.0),
                rand_tensor(r, &[3], 0.5, 1.5),
                rand_tensor(r, &[3], -0.5, 0.5),
            ]
        }),
        Box::new(|t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], &[0.0; 3], &[1.0; 3], 1e-5, true)?;
            let sq = t.mul(y, y)?;
            Ok(mean_of(t, sq))
        }),
    );
    push(
        "batch_norm_inference",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[1, 2, 3, 3], -1.0, 1.0),
                rand_tensor(r, &[2], 0.5, 1.5),
                rand_tensor(r, &[2], -0.5, 0.5),
            ]
        }),
        Box::new(|t, v| {
            let (y, _) =
                t.batch_norm(v[0], v[1], v[2], &[0.2, -0.1], &[1.3, 0.8], 1e-5, false)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "bilinear_resize",
        Box::new(|r| vec![rand_tensor(r, &[1, 2, 3, 5], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.bilinear_resize(v[0], 4, 7)?;
            let sq = t.mul(y, y)?;
            Ok(mean_of(t, sq))
        }),
    );
    push(
        "bilinear_upsample",
        Box::new(|r| vec![rand_tensor(r, &[1, 1, 3, 3], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.bilinear_upsample(v[0], 2)?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "nearest_upsample",
        Box::new(|r| vec![rand_tensor(r, &[1, 2, 2, 2], -1.0, 1.0)]),
        Box::new(|t, v| {
            let y = t.nearest_upsample(v[0], 2)?;
            let sq = t.mul(y, y)?;
            Ok(mean_of(t, sq))
        }),
    );
    push(
        "dense",
        Box::new(|r| {
            vec![
                rand_tensor(r, &[2, 3], -1.0, 1.0),
                rand_tensor(r, &[3, 4], -1.0, 1.0),
                rand_tensor(r, &[4], -0.5, 0.5),
            ]
        }),
        Box::new(|t, v| {
            let y = t.dense(v[0], v[1], v[2], Some(ActKind::Tanh))?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "sigmoid",
        Box::new(|r| vec![rand_tensor(r, &[8], -2.0, 2.0)]),
        Box::new(|t, v| {
            let y = t.sigmoid(v[0])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "relu",
        Box::new(|r| vec![rand_margin(r, &[8], 0.05)]),
        Box::new(|t, v| {
            let y = t.relu(v[0])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "leaky_relu",
        Box::new(|r| vec![rand_margin(r, &[8], 0.05)]),
        Box::new(|t, v| {
            let y = t.activation(ActKind::LeakyRelu, v[0])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "tanh",
        Box::new(|r| vec![rand_tensor(r, &[8], -2.0, 2.0)]),
        Box::new(|t, v| {
            let y = t.activation(ActKind::Tanh, v[0])?;
            Ok(mean_of(t, y))
        }),
    );
    push(
        "softmax_channel",
        Box::new(|r| vec![rand_tensor(r, &[1, 4, 2, 2], -2.0, 2.0)]),
        Box::new(|t, v| {
            let y = t.softmax_channel(v[0])?;
            let sq = t.mul(y, y)?;
            Ok(mean_of(t, sq))
        }),
    );
    push(
        "bce_loss",
        Box::new(|r| vec![rand_binary(r, &[8]), rand_tensor(r, &[8], 0.1, 0.9)]),
        Box::new(|t, v| t.bce_loss(v[0], v[1])),
    );
    push(
        "categorical_ce_from_logits",
        Box::new(|r| {
            vec![
                rand_onehot_nchw(r, 1, 3, 2, 2),
                rand_tensor(r, &[1, 3, 2, 2], -1.5, 1.5),
            ]
        }),
        Box::new(|t, v| {
            let probs = t.softmax_channel(v[1])?;
            t.categorical_ce(v[0], probs, None)
        }),
    );
    push(
        "weighted_ce_from_logits",
        Box::new(|r| {
            vec![
                rand_onehot_nchw(r, 1, 3, 2, 2),
                rand_tensor(r, &[1, 3, 2, 2], -1.5, 1.5),
            ]
        }),
        Box::new(|t, v| {
            let probs = t.softmax_channel(v[1])?;
            t.categorical_ce(v[0], probs, Some(&[2.0, 1.0, 0.5]))
        }),
    );
    push(
        "dice_loss",
        Box::new(|r| vec![rand_binary(r, &[8]), rand_tensor(r, &[8], 0.05, 0.95)]),
        Box::new(|t, v| t.dice_loss(v[0], v[1], 1.0)),
    );
    push(
        "mse_loss",
        Box::new(|r| vec![rand_tensor(r, &[8], -1.0, 1.0), rand_tensor(r, &[8], -1.0, 1.0)]),
        Box::new(|t, v| t.mse_loss(v[0], v[1])),
    );

    cases
}

/// Finite-difference check for every differentiable op and loss over
/// `seeds` random draws each.
pub fn gradient_suite(seeds: u64) -> Vec<Check> {
    gradient_cases()
        .into_iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            let mut failure = None;
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_for(case.name, seed));
                let inputs = (case.gen)(&mut rng);
                match finite_difference_check(&case.f, &inputs, FD_STEP) {
                    Ok(err) => worst = worst.max(err),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            match failure {
                Some(e) => Check::new(format!("grad/{}", case.name), false, e),
                None => Check::new(
                    format!("grad/{}", case.name),
                    worst < FD_TOLERANCE,
                    format!("max relative error {worst:.3e} over {seeds} seeds"),
                ),
            }
        })
        .collect()
}

fn seed_for(name: &str, trial: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ trial.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Rate-1 atrous convolutions must be bit-identical to the standard
/// path across random shapes, strides, and paddings.
pub fn atrous_identity_suite(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa7b05);
    for i in 0..cases {
        let in_c = rng.gen_range(1..=3);
        let out_c = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let h = rng.gen_range(k + 2..=9);
        let w = rng.gen_range(k + 2..=9);
        let stride = rng.gen_range(1..=2);
        let padding = if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let x = rand_tensor(&mut rng, &[1, in_c, h, w], -2.0, 2.0);
        let wt = rand_tensor(&mut rng, &[out_c, in_c, k, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[out_c], -0.5, 0.5);
        let atrous = conv2d_forward_atrous(&x, &wt, Some(&b), stride, 1, padding, 1)
            .expect("valid case");
        let standard =
            conv2d_forward_standard(&x, &wt, Some(&b), stride, padding, 1).expect("valid case");
        if atrous.shape() != standard.shape() {
            return Check::new("atrous/rate1_identity", false, format!("case {i}: shape mismatch"));
        }
        for (a, s) in atrous.data().iter().zip(standard.data()) {
            if a.to_bits() != s.to_bits() {
                return Check::new(
                    "atrous/rate1_identity",
                    false,
                    format!("case {i}: {a} != {s}"),
                );
            }
        }
    }
    Check::new(
        "atrous/rate1_identity",
        true,
        format!("{cases} random cases bit-identical"),
    )
}

/// Brute-force per-pixel set computation of TP/FP/FN per class.
pub fn brute_force_class_sets(
    truth: &[u32],
    pred: &[u32],
    classes: usize,
) -> Vec<(u64, u64, u64)> {
    (0..classes as u32)
        .map(|c| {
            let tp = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t == c && **p == c)
                .count() as u64;
            let fp = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t != c && **p == c)
                .count() as u64;
            let fneg = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t == c && **p != c)
                .count() as u64;
            (tp, fp, fneg)
        })
        .collect()
}

/// Confusion-matrix metrics must equal direct set computations exactly
/// on random label maps.
pub fn metric_oracle_suite(maps: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0e71c);
    for i in 0..maps {
        let classes = rng.gen_range(2..=5usize);
        let n = 64; // 8x8
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes as u32)).collect();
        let pred: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes as u32)).collect();
        let mut cm = ConfusionMatrix::new(classes);
        cm.record(&truth, &pred).expect("labels in range");

        let sets = brute_force_class_sets(&truth, &pred, classes);
        // per-class IoU
        let got_iou = iou_per_class(&cm);
        for (c, &(tp, fp, fneg)) in sets.iter().enumerate() {
            let want = if tp + fp + fneg > 0 {
                Some(tp as f64 / (tp + fp + fneg) as f64)
            } else {
                None
            };
            if got_iou[c] != want {
                return Check::new("metrics/set_oracle", false, format!("map {i} class {c} iou"));
            }
        }
        // mean IoU over defined classes
        let defined: Vec<f64> = sets
            .iter()
            .filter(|(tp, fp, fneg)| tp + fp + fneg > 0)
            .map(|(tp, fp, fneg)| *tp as f64 / (tp + fp + fneg) as f64)
            .collect();
        let want_miou = defined.iter().sum::<f64>() / defined.len() as f64;
        if mean_iou(&cm, AbsentClassPolicy::Exclude).unwrap() != want_miou {
            return Check::new("metrics/set_oracle", false, format!("map {i} mean iou"));
        }
        // pixel accuracy
        let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        let want_acc = correct as f64 / n as f64;
        if pixel_accuracy(&cm).unwrap() != want_acc {
            return Check::new("metrics/set_oracle", false, format!("map {i} accuracy"));
        }
        // macro F1 over defined classes
        let f1s: Vec<f64> = sets
            .iter()
            .filter(|(tp, fp, fneg)| 2 * tp + fp + fneg > 0)
            .map(|(tp, fp, fneg)| 2.0 * *tp as f64 / (2 * tp + fp + fneg) as f64)
            .collect();
        let want_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
        if f1_score(&cm, AbsentClassPolicy::Exclude).unwrap() != want_f1 {
            return Check::new("metrics/set_oracle", false, format!("map {i} f1"));
        }
    }
    Check::new(
        "metrics/set_oracle",
        true,
        format!("{maps} random 8x8 maps match exactly"),
    )
}

/// Closed-form loss and activation values.
pub fn analytic_loss_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let scalar = |f: &dyn Fn(&mut Tape) -> Result<Var>| -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape).expect("loss builds");
        tape.value(v).item().expect("scalar")
    };

    let bce = scalar(&|t| {
        let y = t.constant(Tensor::from_vec(vec![1.0]));
        let p = t.constant(Tensor::from_vec(vec![0.5]));
        t.bce_loss(y, p)
    });
    checks.push(Check::new(
        "loss/bce_half_ln2",
        (bce - std::f64::consts::LN_2).abs() < 1e-9,
        format!("BCE(1, 0.5) = {bce:.12}"),
    ));

    let dice = scalar(&|t| {
        let y = t.constant(Tensor::zeros(&[6]));
        let p = t.constant(Tensor::zeros(&[6]));
        t.dice_loss(y, p, 1.0)
    });
    checks.push(Check::new(
        "loss/dice_defined_at_zero",
        dice == 0.0,
        format!("Dice(0, 0) = {dice}"),
    ));

    let mse = scalar(&|t| {
        let y = t.constant(Tensor::from_vec(vec![0.25, -1.5, 3.0]));
        let p = t.constant(Tensor::from_vec(vec![0.25, -1.5, 3.0]));
        t.mse_loss(y, p)
    });
    checks.push(Check::new(
        "loss/mse_zero_at_equality",
        mse == 0.0,
        format!("MSE(y, y) = {mse}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let logits = rand_tensor(&mut rng, &[2, 5, 3, 3], -3.0, 3.0);
    let mut tape = Tape::new();
    let lv = tape.constant(logits);
    let sm = tape.softmax_channel(lv).expect("softmax");
    let s = tape.value(sm);
    let mut worst: f64 = 0.0;
    let plane = 9;
    for n in 0..2 {
        for i in 0..plane {
            let total: f64 = (0..5).map(|c| s.data()[(n * 5 + c) * plane + i]).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    checks.push(Check::new(
        "activation/softmax_rows_sum_to_one",
        worst < 1e-9,
        format!("max |sum - 1| = {worst:.3e}"),
    ));
    checks
}

/// Palette fidelity: the hex worked example, the road triple, round-trip
/// identity, and duplicate-black resolution.
pub fn palette_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let palette = LabelPalette::default_22();

    let hex = hex_to_rgb("3C1098");
    checks.push(Check::new(
        "palette/hex_worked_example",
        matches!(hex, Ok((60, 16, 152))),
        format!("3C1098 -> {hex:?}"),
    ));

    let road = palette.class_id_of((128, 64, 128));
    checks.push(Check::new(
        "palette/road_is_class_2",
        road == Some(2),
        format!("(128,64,128) -> {road:?}"),
    ));

    let black = palette.class_id_of((0, 0, 0));
    checks.push(Check::new(
        "palette/duplicate_black_resolves_low",
        black == Some(0),
        format!("(0,0,0) -> {black:?}, never 1"),
    ));

    // round-trip on a random mask that avoids the duplicate triple
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let non_degenerate: Vec<u32> = (2..22).collect();
    let mut mask = RgbImage::filled(8, 8, (128, 64, 128));
    for y in 0..8 {
        for x in 0..8 {
            let id = non_degenerate[rng.gen_range(0..non_degenerate.len())];
            mask.set_pixel(y, x, palette.rgb_of(id).unwrap());
        }
    }
    let ok = match rgb_mask_to_labels(&mask, &palette, UnknownColorPolicy::Strict) {
        Ok((labels, _)) => labels_to_rgb(&labels, 8, 8, &palette)
            .map(|img| img == mask)
            .unwrap_or(false),
        Err(_) => false,
    };
    checks.push(Check::new(
        "palette/round_trip_identity",
        ok,
        "labels_to_rgb . rgb_mask_to_labels == id on non-degenerate masks",
    ));
    checks
}

/// Thresholded scores against the brute-force set computation.
pub fn thresholded_oracle_suite(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7123);
    for i in 0..cases {
        let c = rng.gen_range(2..=4usize);
        let probs = rand_tensor(&mut rng, &[c, 8, 8], 0.0, 1.0);
        let onehot = rand_onehot_chw(&mut rng, c, 8, 8);
        let got = thresholded_score(ThresholdMetric::Iou, &probs, &onehot, 0.5).unwrap();
        // brute force: binarize then per-class sets
        let hw = 64;
        let mut scores = Vec::new();
        for ch in 0..c {
            let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
            for p in 0..hw {
                let pred = probs.data()[ch * hw + p] >= 0.5;
                let truth = onehot.data()[ch * hw + p] >= 0.5;
                match (pred, truth) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            if tp + fp + fneg > 0 {
                scores.push(tp as f64 / (tp + fp + fneg) as f64);
            }
        }
        let want = scores.iter().sum::<f64>() / scores.len() as f64;
        if (got - want).abs() > 1e-12 {
            return Check::new(
                "metrics/thresholded_oracle",
                false,
                format!("case {i}: {got} vs {want}"),
            );
        }
    }
    Check::new(
        "metrics/thresholded_oracle",
        true,
        format!("{cases} random maps match to 1e-12"),
    )
}

fn rand_onehot_chw(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(&[c, h, w]);
    let plane = h * w;
    for i in 0..plane {
        let class = rng.gen_range(0..c);
        t.data_mut()[class * plane + i] = 1.0;
    }
    t
}

/// The fixed 4-image synthetic 2-class 32x32 fixture used by capacity
/// smoke tests: strongly color-coded regions with four different
/// geometries (vertical split, horizontal split, quadrant, centered
/// square).
pub fn synthetic_fixture() -> (Tensor, Tensor, Vec<u32>) {
    let (n, h, w) = (4, 32, 32);
    let mut images = Tensor::zeros(&[n, 3, h, w]);
    let mut labels = Vec::with_capacity(n * h * w);
    let plane = h * w;
    for img in 0..n {
        for y in 0..h {
            for x in 0..w {
                let class = match img {
                    0 => usize::from(x >= w / 2),
                    1 => usize::from(y >= h / 2),
                    2 => usize::from(x >= w / 2 && y >= h / 2),
                    _ => usize::from((8..24).contains(&x) && (8..24).contains(&y)),
                };
                let i = y * w + x;
                let base = img * 3 * plane;
                if class == 1 {
                    images.data_mut()[base + i] = 1.0;
                    images.data_mut()[base + plane + i] = 1.0;
                } else {
                    images.data_mut()[base + 2 * plane + i] = 1.0;
                }
                labels.push(class as u32);
            }
        }
    }
    let mut onehot = Tensor::zeros(&[n, 2, h, w]);
    for img in 0..n {
        for i in 0..plane {
            let class = labels[img * plane + i] as usize;
            onehot.data_mut()[(img * 2 + class) * plane + i] = 1.0;
        }
    }
    (images, onehot, labels)
}

/// Capacity config for the smoke run: desk-scale models sized so every
/// architecture fits the fixture within the step budget.
pub fn overfit_config(arch: crate::arch::Architecture) -> crate::arch::ModelConfig {
    use crate::arch::{Architecture, ModelConfig};
    use crate::backbone::{BackboneFamily, BackboneSpec};
    let mut backbone = BackboneSpec::new(BackboneFamily::Vgg);
    backbone.depth_per_stage = vec![1, 1, 1, 1];
    backbone.base_width = match arch {
        Architecture::Unet | Architecture::Fpn => 8,
        _ => 16,
    };
    let mut cfg = ModelConfig::new(arch, backbone, 2);
    cfg.decoder_width = match arch {
        Architecture::Unet | Architecture::Fpn => 16,
        _ => 64,
    };
    if arch == Architecture::Pspnet {
        cfg.pyramid_bins = vec![1, 2, 4]; // stride-8 map is 4x4 at 32x32
    }
    if arch == Architecture::Deeplabv3plus {
        cfg.output_stride = 8;
        cfg.atrous_rates = vec![1, 2, 3];
    }
    cfg
}

pub struct OverfitOutcome {
    pub final_ce: f64,
    pub final_accuracy: f64,
    pub steps_run: usize,
    pub reached_at: Option<usize>,
}

/// Full-batch Adam on the synthetic fixture; returns the training-mode
/// cross-entropy and pixel accuracy trajectory endpoints.
pub fn overfit_smoke(
    arch: crate::arch::Architecture,
    steps: usize,
    learning_rate: f64,
) -> Result<OverfitOutcome> {
    overfit_smoke_with(overfit_config(arch), steps, learning_rate)
}

pub fn overfit_smoke_with(
    cfg: crate::arch::ModelConfig,
    steps: usize,
    learning_rate: f64,
) -> Result<OverfitOutcome> {
    use crate::arch::Model;
    use crate::metrics::argmax_channel;
    use crate::nn::trainable_grads;
    use crate::train::Adam;

    let (images, onehot, labels) = synthetic_fixture();
    let mut model = Model::build(&cfg, 0)?;
    let mut adam = Adam::new(learning_rate);

    let mut final_ce = f64::INFINITY;
    let mut final_accuracy = 0.0;
    let mut reached_at = None;
    let mut steps_run = 0;
    for step in 0..steps {
        let mut pass = model.forward(&images, true)?;
        let probs = pass.tape.softmax_channel(pass.logits)?;
        let target = pass.tape.constant(onehot.clone());
        let loss = pass.tape.categorical_ce(target, probs, None)?;
        final_ce = pass.tape.value(loss).item()?;
        let pred = argmax_channel(pass.tape.value(probs))?;
        let correct = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        final_accuracy = correct as f64 / labels.len() as f64;
        steps_run = step + 1;
        if final_ce < 0.05 && final_accuracy > 0.99 {
            reached_at = Some(step);
            break;
        }
        let grads = pass.tape.backward(loss)?;
        let updates = trainable_grads(&model.store, &pass.binding, &grads);
        adam.step(&mut model.store, &updates)?;
    }
    Ok(OverfitOutcome {
        final_ce,
        final_accuracy,
        steps_run,
        reached_at,
    })
}

/// All suites at their standard sizes.
pub fn run_all() -> Vec<Check> {
    let mut checks = gradient_suite(FD_SEEDS);
    checks.push(atrous_identity_suite(50));
    checks.push(metric_oracle_suite(100));
    checks.push(thresholded_oracle_suite(25));
    checks.extend(analytic_loss_suite());
    checks.extend(palette_suite());
    checks
}
