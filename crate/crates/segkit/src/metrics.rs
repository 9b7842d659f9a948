//! Evaluation suite: confusion matrices, per-class and mean IoU, pixel
//! accuracy, macro F1, and thresholded scores over probability maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// C x C counts; `counts[t][p]` is the number of pixels with true class t
/// predicted as p. Accumulable across batches by addition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.classes + pred_class]
    }

    /// Tally one batch of label maps.
    pub fn record(&mut self, true_labels: &[u32], pred_labels: &[u32]) -> Result<()> {
        if true_labels.len() != pred_labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "label maps differ in length: {} vs {}",
                true_labels.len(),
                pred_labels.len()
            )));
        }
        let c = self.classes as u32;
        for (&t, &p) in true_labels.iter().zip(pred_labels) {
            if t >= c {
                return Err(Error::LabelOutOfRange {
                    label: t,
                    classes: self.classes,
                });
            }
            if p >= c {
                return Err(Error::LabelOutOfRange {
                    label: p,
                    classes: self.classes,
                });
            }
            self.counts[(t as usize) * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Shard merge; addition is associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&t| t != c)
            .map(|t| self.count(t, c))
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.count(c, p))
            .sum()
    }
}

/// What to do with classes that have no support (TP + FP + FN = 0):
/// exclude them from the mean, or score them zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentClassPolicy {
    #[default]
    Exclude,
    Zero,
}

impl AbsentClassPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(AbsentClassPolicy::Exclude),
            "zero" => Ok(AbsentClassPolicy::Zero),
            other => Err(Error::BadConfig(format!(
                "unknown absent_class_policy {other:?}"
            ))),
        }
    }
}

/// TP / (TP + FP + FN) per class; `None` marks an undefined class.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.true_positives(c);
            let denom = tp + cm.false_positives(c) + cm.false_negatives(c);
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect()
}

/// 2 TP / (2 TP + FP + FN) per class.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.true_positives(c);
            let denom = 2 * tp + cm.false_positives(c) + cm.false_negatives(c);
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
        .collect()
}

fn mean_defined(per_class: &[Option<f64>], policy: AbsentClassPolicy) -> Result<f64> {
    let scores: Vec<f64> = match policy {
        AbsentClassPolicy::Exclude => per_class.iter().filter_map(|v| *v).collect(),
        AbsentClassPolicy::Zero => per_class.iter().map(|v| v.unwrap_or(0.0)).collect(),
    };
    if scores.is_empty() {
        return Err(Error::AllUndefined);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn mean_iou(cm: &ConfusionMatrix, policy: AbsentClassPolicy) -> Result<f64> {
    mean_defined(&iou_per_class(cm), policy)
}

pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Macro-averaged F1 over defined classes.
pub fn f1_score(cm: &ConfusionMatrix, policy: AbsentClassPolicy) -> Result<f64> {
    mean_defined(&f1_per_class(cm), policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMetric {
    Iou,
    F1,
}

/// Per-class TP/FP/FN under channel-wise binarization; accumulable
/// across batches.
#[derive(Debug, Clone)]
pub struct BinarizedSets {
    classes: usize,
    threshold: f64,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fneg: Vec<u64>,
}

impl BinarizedSets {
    pub fn new(classes: usize, threshold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
            return Err(Error::BadThreshold(threshold));
        }
        Ok(BinarizedSets {
            classes,
            threshold,
            tp: vec![0; classes],
            fp: vec![0; classes],
            fneg: vec![0; classes],
        })
    }

    /// A probability exactly at the threshold counts positive.
    pub fn accumulate(&mut self, probs: &Tensor, target_onehot: &Tensor) -> Result<()> {
        if probs.shape() != target_onehot.shape() {
            return Err(Error::ShapeMismatch(format!(
                "probabilities {:?} vs targets {:?}",
                probs.shape(),
                target_onehot.shape()
            )));
        }
        let (batch, c, hw) = match probs.shape() {
            [n, c, h, w] => (*n, *c, h * w),
            [c, h, w] => (1, *c, h * w),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "thresholded metrics want CHW or NCHW, got {other:?}"
                )))
            }
        };
        if c != self.classes {
            return Err(Error::ClassCountMismatch {
                model: c,
                palette: self.classes,
            });
        }
        for ch in 0..c {
            for n in 0..batch {
                let base = (n * c + ch) * hw;
                for i in 0..hw {
                    let pred = probs.data()[base + i] >= self.threshold;
                    let truth = target_onehot.data()[base + i] >= 0.5;
                    match (pred, truth) {
                        (true, true) => self.tp[ch] += 1,
                        (true, false) => self.fp[ch] += 1,
                        (false, true) => self.fneg[ch] += 1,
                        (false, false) => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// Macro mean over classes with support.
    pub fn score(&self, kind: ThresholdMetric) -> Result<f64> {
        let mut scores = Vec::new();
        for ch in 0..self.classes {
            let (tp, fp, fneg) = (self.tp[ch], self.fp[ch], self.fneg[ch]);
            if tp + fp + fneg == 0 {
                continue;
            }
            scores.push(match kind {
                ThresholdMetric::Iou => tp as f64 / (tp + fp + fneg) as f64,
                ThresholdMetric::F1 => 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64,
            });
        }
        if scores.is_empty() {
            return Err(Error::AllUndefined);
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Binarize probabilities per channel at `threshold`, then macro-average
/// the metric over classes with support.
pub fn thresholded_score(
    kind: ThresholdMetric,
    probs: &Tensor,
    target_onehot: &Tensor,
    threshold: f64,
) -> Result<f64> {
    let classes = match probs.shape() {
        [_, c, _, _] | [c, _, _] => *c,
        other => {
            return Err(Error::ShapeMismatch(format!(
                "thresholded_score wants CHW or NCHW, got {other:?}"
            )))
        }
    };
    let mut sets = BinarizedSets::new(classes, threshold)?;
    sets.accumulate(probs, target_onehot)?;
    sets.score(kind)
}

/// Argmax over the channel axis of an NCHW tensor; ties resolve to the
/// lowest class id.
pub fn argmax_channel(t: &Tensor) -> Result<Vec<u32>> {
    let shape = t.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "argmax_channel wants NCHW, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for ni in 0..n {
        for i in 0..hw {
            let mut best = f64::NEG_INFINITY;
            let mut best_c = 0u32;
            for ch in 0..c {
                let v = t.data()[(ni * c + ch) * hw + i];
                if v > best {
                    best = v;
                    best_c = ch as u32;
                }
            }
            out.push(best_c);
        }
    }
    Ok(out)
}

/// One evaluation's numbers, in the shape of a results-table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    /// Pixel accuracy; reported under the Val_Accuracy column.
    pub pixel_accuracy: f64,
    pub f1_macro: f64,
    pub loss: f64,
    /// Macro IoU / F1 after binarizing probabilities at the configured
    /// threshold; filled by evaluation runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_score_thresholded: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_score_thresholded: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        policy: AbsentClassPolicy,
        loss: f64,
    ) -> Result<Self> {
        Ok(MetricsReport {
            per_class_iou: iou_per_class(cm),
            mean_iou: mean_iou(cm, policy)?,
            pixel_accuracy: pixel_accuracy(cm)?,
            f1_macro: f1_score(cm, policy)?,
            loss,
            iou_score_thresholded: None,
            f_score_thresholded: None,
        })
    }
}
