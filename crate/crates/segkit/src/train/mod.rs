//! The training loop: forward, loss, backward, Adam; per-epoch validation
//! with confusion-matrix metrics; best-checkpoint tracking by validation
//! mean IoU (ties broken by lower validation loss).

mod adam;
mod bench;
mod checkpoint;
mod config;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use bench::{
    benchmark, evaluate_checkpoint, loss_curve_svg, render_benchmark, rows_from_dir,
    BenchmarkOutput, BenchmarkRow,
};
pub use checkpoint::{load_checkpoint, prefix_bytes, save_checkpoint};
pub use config::{RunFile, TrainConfig};

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::data::batch::{batch_iter, Batch, BatchConfig};
use crate::data::manifest::DatasetManifest;
use crate::data::LabelPalette;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::metrics::{BinarizedSets, ConfusionMatrix, MetricsReport, ThresholdMetric};
use crate::nn::trainable_grads;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_mean_iou: f64,
}

/// Everything one run produced; serializes to JSON so reports can be
/// re-rendered without retraining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub backbone: String,
    pub palette: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub wall_seconds: f64,
    pub final_report: MetricsReport,
    pub checkpoint_dir: Option<String>,
}

fn batch_config(cfg: &TrainConfig, seed: u64) -> BatchConfig {
    BatchConfig {
        batch_size: cfg.batch_size,
        seed,
        resize_to: cfg.resize_to,
        unknown_colors: cfg.unknown_colors,
    }
}

/// One optimization step over a prepared batch; returns the loss value.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    loss_spec: &LossSpec,
) -> Result<f64> {
    let mut pass = model.forward(&batch.images, true)?;
    let probs = pass.tape.softmax_channel(pass.logits)?;
    let target = pass.tape.constant(batch.onehot.clone());
    let loss = loss_spec.compute(&mut pass.tape, target, probs)?;
    let value = pass.tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss became {value}")));
    }
    let grads = pass.tape.backward(loss)?;
    let updates = trainable_grads(&model.store, &pass.binding, &grads);
    adam.step(&mut model.store, &updates)?;
    Ok(value)
}

/// Accumulate one confusion matrix and mean loss over a manifest.
pub fn evaluate(
    model: &mut Model,
    manifest: &DatasetManifest,
    palette: &LabelPalette,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if model.num_classes() != palette.num_classes() {
        return Err(Error::ClassCountMismatch {
            model: model.num_classes(),
            palette: palette.num_classes(),
        });
    }
    let mut cm = ConfusionMatrix::new(palette.num_classes());
    let mut sets = BinarizedSets::new(palette.num_classes(), cfg.eval_threshold)?;
    let mut loss_weighted = 0.0;
    let mut pixels = 0usize;
    if !manifest.pairs.is_empty() {
        for batch in batch_iter(manifest, palette, &batch_config(cfg, 0))? {
            let batch = batch?;
            let mut pass = model.forward(&batch.images, false)?;
            let probs = pass.tape.softmax_channel(pass.logits)?;
            let target = pass.tape.constant(batch.onehot.clone());
            let loss = cfg.loss.compute(&mut pass.tape, target, probs)?;
            let loss_value = pass.tape.value(loss).item()?;
            let pred = crate::metrics::argmax_channel(pass.tape.value(probs))?;
            cm.record(&batch.labels, &pred)?;
            sets.accumulate(pass.tape.value(probs), &batch.onehot)?;
            loss_weighted += loss_value * batch.labels.len() as f64;
            pixels += batch.labels.len();
        }
    }
    if pixels == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut report = MetricsReport::from_confusion(
        &cm,
        cfg.absent_class_policy,
        loss_weighted / pixels as f64,
    )?;
    report.iou_score_thresholded = sets.score(ThresholdMetric::Iou).ok();
    report.f_score_thresholded = sets.score(ThresholdMetric::F1).ok();
    Ok(report)
}

/// Full training run. Deterministic given (seed, config, data): epoch
/// shuffles derive from seed + epoch index, parameter init from seed.
pub fn train(
    cfg: &TrainConfig,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    palette: &LabelPalette,
    checkpoint_dir: Option<&Path>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = Model::build(&cfg.model, cfg.seed)?;
    if cfg.freeze_encoder {
        model.freeze_encoder();
    }
    let mut adam = Adam::new(cfg.learning_rate);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, MetricsReport)> = None;

    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut batches = 0usize;
        let stream = batch_iter(
            train_manifest,
            palette,
            &batch_config(cfg, cfg.seed.wrapping_add(epoch as u64)),
        )?;
        for batch in stream {
            let batch = batch.map_err(|e| {
                Error::BadManifest(format!("epoch {epoch} batch {batches}: {e}"))
            })?;
            total += train_step(&mut model, &mut adam, &batch, &cfg.loss)?;
            batches += 1;
        }
        let train_loss = total / batches.max(1) as f64;

        let report = evaluate(&mut model, val_manifest, palette, cfg)?;
        epochs.push(EpochStats {
            train_loss,
            val_loss: report.loss,
            val_accuracy: report.pixel_accuracy,
            val_mean_iou: report.mean_iou,
        });

        let better = match &best {
            None => true,
            Some((_, b)) => {
                report.mean_iou > b.mean_iou
                    || (report.mean_iou == b.mean_iou && report.loss < b.loss)
            }
        };
        if better {
            best = Some((epoch, report));
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(dir, &model.store)?;
            }
        }
    }

    let (best_epoch, final_report) = best.expect("at least one epoch ran");
    Ok(RunRecord {
        model: cfg.model.architecture.name().to_string(),
        backbone: cfg.model.backbone.family.name().to_string(),
        palette: palette.name.clone(),
        config: cfg.clone(),
        epochs,
        best_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
        final_report,
        checkpoint_dir: checkpoint_dir.map(|d| d.display().to_string()),
    })
}
