//! The model x backbone comparison matrix: train and evaluate every
//! combination under one shared config and seed, then emit CSV and
//! aligned-text tables (Model | Backbone | Mean IoU | Val_Accuracy |
//! Loss), per-run loss-curve SVGs, and prediction overlays. A failing
//! combination becomes a FAILED row; the run continues.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, EpochStats, RunRecord, TrainConfig};
use crate::arch::{Architecture, Model, ALL_ARCHITECTURES};
use crate::backbone::{BackboneFamily, ALL_FAMILIES};
use crate::data::batch::{batch_iter, BatchConfig};
use crate::data::image_io::{save_image, RgbImage};
use crate::data::manifest::DatasetManifest;
use crate::data::palette::labels_to_rgb;
use crate::data::LabelPalette;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub backbone: String,
    pub mean_iou: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub failed: Option<String>,
}

pub struct BenchmarkOutput {
    pub rows: Vec<BenchmarkRow>,
    pub csv: String,
    pub text: String,
}

pub const CSV_HEADER: &str = "Model,Backbone,Mean IoU,Val_Accuracy,Loss";
pub const MISSING_CELL: &str = "—";

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.8}"),
        None => MISSING_CELL.to_string(),
    }
}

fn arch_order(name: &str) -> usize {
    ALL_ARCHITECTURES
        .iter()
        .position(|a| a.name() == name)
        .unwrap_or(usize::MAX)
}

fn family_order(name: &str) -> usize {
    ALL_FAMILIES
        .iter()
        .position(|f| f.name() == name)
        .unwrap_or(usize::MAX)
}

/// Group rows the way the results tables do: by model, then backbone.
pub fn sort_rows(rows: &mut [BenchmarkRow]) {
    rows.sort_by_key(|r| (arch_order(&r.model), family_order(&r.backbone)));
}

pub fn render_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model,
            r.backbone,
            fmt_cell(r.mean_iou),
            fmt_cell(r.val_accuracy),
            fmt_cell(r.loss),
        ));
    }
    out
}

pub fn render_text(rows: &[BenchmarkRow]) -> String {
    let mut out = format!(
        "{:<14} {:<14} {:>12} {:>12} {:>12}\n",
        "Model", "Backbone", "Mean IoU", "Val_Accuracy", "Loss"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:<14} {:>12} {:>12} {:>12}",
            r.model,
            r.backbone,
            fmt_cell(r.mean_iou),
            fmt_cell(r.val_accuracy),
            fmt_cell(r.loss),
        ));
        if let Some(err) = &r.failed {
            out.push_str(&format!("  FAILED: {err}"));
        } else if r.mean_iou.is_none() || r.val_accuracy.is_none() || r.loss.is_none() {
            out.push_str("  (missing cells)");
        }
        out.push('\n');
    }
    out
}

/// Per-epoch train/val loss curves as a small standalone SVG.
pub fn loss_curve_svg(epochs: &[EpochStats]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let max_loss = epochs
        .iter()
        .flat_map(|e| [e.train_loss, e.val_loss])
        .fold(1e-9f64, f64::max);
    let n = epochs.len().max(2) as f64;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1.0);
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v / max_loss);
    let poly = |pick: &dyn Fn(&EpochStats) -> f64| -> String {
        epochs
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{:.2},{:.2}", x(i), y(pick(e))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<line x1=\"{pad}\" y1=\"{yaxis}\" x2=\"{xmax}\" y2=\"{yaxis}\" stroke=\"black\"/>\n",
            "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{yaxis}\" stroke=\"black\"/>\n",
            "<text x=\"{pad}\" y=\"20\" font-size=\"12\">loss (max {maxloss:.4}, {n} epochs)</text>\n",
            "<polyline points=\"{train}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            "<polyline points=\"{val}\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"2\"/>\n",
            "<text x=\"{legend}\" y=\"20\" font-size=\"12\" fill=\"steelblue\">train</text>\n",
            "<text x=\"{legend2}\" y=\"20\" font-size=\"12\" fill=\"firebrick\">val</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        pad = pad,
        yaxis = h - pad,
        xmax = w - pad,
        maxloss = max_loss,
        n = epochs.len(),
        train = poly(&|e| e.train_loss),
        val = poly(&|e| e.val_loss),
        legend = w - 140.0,
        legend2 = w - 80.0,
    )
}

/// Blend prediction colors over the input at 50%.
fn overlay_image(image: &Tensor, sample: usize, pred: &RgbImage) -> RgbImage {
    let (h, w) = (pred.height, pred.width);
    let plane = h * w;
    let base = sample * 3 * plane;
    let mut out = RgbImage::filled(w, h, (0, 0, 0));
    for yy in 0..h {
        for xx in 0..w {
            let i = yy * w + xx;
            let img = |c: usize| (image.data()[base + c * plane + i] * 255.0) as u8;
            let (pr, pg, pb) = pred.pixel(yy, xx);
            out.set_pixel(
                yy,
                xx,
                (
                    ((img(0) as u16 + pr as u16) / 2) as u8,
                    ((img(1) as u16 + pg as u16) / 2) as u8,
                    ((img(2) as u16 + pb as u16) / 2) as u8,
                ),
            );
        }
    }
    out
}

fn write_overlays(
    model: &mut Model,
    val: &DatasetManifest,
    palette: &LabelPalette,
    cfg: &TrainConfig,
    out_dir: &Path,
    tag: &str,
) -> Result<()> {
    let bc = BatchConfig {
        batch_size: 8,
        seed: 0,
        resize_to: cfg.resize_to,
        unknown_colors: cfg.unknown_colors,
    };
    let Some(batch) = batch_iter(val, palette, &bc)?.next() else {
        return Ok(());
    };
    let batch = batch?;
    let (_probs, labels) = model.predict(&batch.images)?;
    let (h, w) = cfg.resize_to;
    let n = batch.images.shape()[0].min(8);
    for i in 0..n {
        let pred = labels_to_rgb(&labels[i * h * w..(i + 1) * h * w], h, w, palette)?;
        let img = overlay_image(&batch.images, i, &pred);
        save_image(&out_dir.join(format!("overlay_{tag}_{i}.png")), &img)?;
    }
    Ok(())
}

/// Train and evaluate every (architecture, backbone) combination with
/// identical data and seed; write reports, run records, loss curves,
/// and overlays under `out_dir`.
pub fn benchmark(
    matrix: &[(Architecture, BackboneFamily)],
    base: &TrainConfig,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    palette: &LabelPalette,
    out_dir: &Path,
) -> Result<BenchmarkOutput> {
    if matrix.is_empty() {
        return Err(Error::Usage("benchmark needs at least one arch:family combination".into()));
    }
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)
        .map_err(|e| Error::io(runs_dir.display().to_string(), e))?;

    let mut rows = Vec::with_capacity(matrix.len());
    for (arch, family) in matrix {
        let mut cfg = base.clone();
        cfg.model.architecture = *arch;
        cfg.model.backbone.family = *family;
        let tag = format!("{}_{}", arch.name(), family.name());
        let ckpt = out_dir.join("checkpoints").join(&tag);

        let outcome = train(&cfg, train_manifest, val_manifest, palette, Some(&ckpt))
            .and_then(|record| {
                let json = serde_json::to_string_pretty(&record)
                    .map_err(|e| Error::BadManifest(format!("record encode: {e}")))?;
                let rpath = runs_dir.join(format!("{tag}.json"));
                std::fs::write(&rpath, json)
                    .map_err(|e| Error::io(rpath.display().to_string(), e))?;
                let svg = loss_curve_svg(&record.epochs);
                let spath = out_dir.join(format!("loss_{tag}.svg"));
                std::fs::write(&spath, svg)
                    .map_err(|e| Error::io(spath.display().to_string(), e))?;

                let mut model = Model::build(&cfg.model, cfg.seed)?;
                super::load_checkpoint(&ckpt, &mut model.store)?;
                write_overlays(&mut model, val_manifest, palette, &cfg, out_dir, &tag)?;
                Ok(record)
            });

        match outcome {
            Ok(record) => rows.push(BenchmarkRow {
                model: record.model.clone(),
                backbone: record.backbone.clone(),
                mean_iou: Some(record.final_report.mean_iou),
                val_accuracy: Some(record.final_report.pixel_accuracy),
                loss: Some(record.final_report.loss),
                failed: None,
            }),
            Err(err) => {
                let msg = err.to_string();
                let fpath = runs_dir.join(format!("{tag}.failed.txt"));
                std::fs::write(&fpath, &msg)
                    .map_err(|e| Error::io(fpath.display().to_string(), e))?;
                rows.push(BenchmarkRow {
                    model: arch.name().to_string(),
                    backbone: family.name().to_string(),
                    mean_iou: None,
                    val_accuracy: None,
                    loss: None,
                    failed: Some(msg),
                });
            }
        }
    }

    let output = render_benchmark(rows);
    let cpath = out_dir.join("report.csv");
    std::fs::write(&cpath, &output.csv).map_err(|e| Error::io(cpath.display().to_string(), e))?;
    let tpath = out_dir.join("report.txt");
    std::fs::write(&tpath, &output.text).map_err(|e| Error::io(tpath.display().to_string(), e))?;
    Ok(output)
}

/// Pure rendering step shared by `benchmark` and `report`.
pub fn render_benchmark(mut rows: Vec<BenchmarkRow>) -> BenchmarkOutput {
    sort_rows(&mut rows);
    let csv = render_csv(&rows);
    let text = render_text(&rows);
    BenchmarkOutput { rows, csv, text }
}

/// Rebuild rows from persisted run records and failure markers.
pub fn rows_from_dir(runs_dir: &Path) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    let entries = std::fs::read_dir(runs_dir)
        .map_err(|_| Error::MissingFile(runs_dir.display().to_string()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(tag) = name.strip_suffix(".failed.txt") {
            let msg = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let (model, backbone) = tag.split_once('_').unwrap_or((tag, ""));
            rows.push(BenchmarkRow {
                model: model.to_string(),
                backbone: backbone.to_string(),
                mean_iou: None,
                val_accuracy: None,
                loss: None,
                failed: Some(msg),
            });
        } else if name.ends_with(".json") {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let record: RunRecord = serde_json::from_str(&text)
                .map_err(|e| Error::BadManifest(format!("{}: {e}", path.display())))?;
            rows.push(BenchmarkRow {
                model: record.model.clone(),
                backbone: record.backbone.clone(),
                mean_iou: Some(record.final_report.mean_iou),
                val_accuracy: Some(record.final_report.pixel_accuracy),
                loss: Some(record.final_report.loss),
                failed: None,
            });
        }
    }
    Ok(rows)
}

/// Re-evaluate a checkpointed model; used by the evaluate subcommand.
pub fn evaluate_checkpoint(
    cfg: &TrainConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    palette: &LabelPalette,
) -> Result<crate::metrics::MetricsReport> {
    let mut model = Model::build(&cfg.model, cfg.seed)?;
    super::load_checkpoint(checkpoint, &mut model.store)?;
    evaluate(&mut model, manifest, palette, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, backbone: &str, v: Option<f64>) -> BenchmarkRow {
        BenchmarkRow {
            model: model.into(),
            backbone: backbone.into(),
            mean_iou: v,
            val_accuracy: v,
            loss: v,
            failed: None,
        }
    }

    #[test]
    fn csv_columns_match_report_shape() {
        let rows = vec![row("unet", "vgg", Some(0.5))];
        let csv = render_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "Model,Backbone,Mean IoU,Val_Accuracy,Loss");
        assert_eq!(
            lines.next().unwrap(),
            "unet,vgg,0.50000000,0.50000000,0.50000000"
        );
    }

    #[test]
    fn missing_cells_render_as_dash_and_flag() {
        let mut r = row("fpn", "resnet", Some(0.25));
        r.mean_iou = None;
        let csv = render_csv(&[r.clone()]);
        assert!(csv.contains("fpn,resnet,—,0.25000000,0.25000000"));
        let text = render_text(&[r]);
        assert!(text.contains("(missing cells)"));
    }

    #[test]
    fn failed_rows_keep_the_error() {
        let r = BenchmarkRow {
            model: "pspnet".into(),
            backbone: "vgg".into(),
            mean_iou: None,
            val_accuracy: None,
            loss: None,
            failed: Some("boom".into()),
        };
        let text = render_text(&[r]);
        assert!(text.contains("FAILED: boom"));
    }

    #[test]
    fn rows_sort_by_table_grouping() {
        let mut rows = vec![
            row("pspnet", "vgg", Some(0.1)),
            row("unet", "efficientnet", Some(0.2)),
            row("unet", "resnet", Some(0.3)),
        ];
        sort_rows(&mut rows);
        assert_eq!(rows[0].model, "unet");
        assert_eq!(rows[0].backbone, "resnet");
        assert_eq!(rows[1].backbone, "efficientnet");
        assert_eq!(rows[2].model, "pspnet");
    }

    #[test]
    fn svg_has_two_polylines() {
        let epochs = vec![
            EpochStats {
                train_loss: 1.0,
                val_loss: 1.2,
                val_accuracy: 0.5,
                val_mean_iou: 0.3,
            },
            EpochStats {
                train_loss: 0.5,
                val_loss: 0.7,
                val_accuracy: 0.6,
                val_mean_iou: 0.4,
            },
        ];
        let svg = loss_curve_svg(&epochs);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
