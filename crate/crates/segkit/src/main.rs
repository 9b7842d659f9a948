//! Command-line entry point: prepare, train, evaluate, benchmark,
//! report, selftest. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use segkit::data::palette::UnknownColorPolicy;
use segkit::data::{load_manifest, rgb_mask_to_labels, validate_splits, DatasetManifest, LabelPalette};
use segkit::error::{Error, Result};
use segkit::train::{
    benchmark, evaluate_checkpoint, loss_curve_svg, render_benchmark, rows_from_dir, train,
    RunFile,
};

#[derive(Parser)]
#[command(
    name = "segkit",
    about = "Desk-scale semantic segmentation engine and benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate manifests and palettes; emit a class histogram.
    Prepare {
        /// Manifest files to validate (repeatable).
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        /// Palette reference: default22, eval19, or a palette file.
        #[arg(long)]
        palette: Option<String>,
        /// Write a class-distribution CSV here.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Train one model per the run-config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        freeze_encoder: Option<bool>,
        /// Output directory (overrides out_dir in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a manifest.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to evaluate; defaults to val_manifest from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train and evaluate every arch:family combination in the matrix.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render benchmark reports from persisted run records.
    Report {
        /// Directory holding <arch>_<family>.json run records.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient-check and oracle suites.
    Selftest,
}

fn main() {
    segkit::ops::init_thread_pool();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help on its own; anything unparseable is usage
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            manifest,
            palette,
            histogram,
        } => prepare(&manifest, palette.as_deref(), histogram.as_deref()),
        Command::Train {
            config,
            epochs,
            lr,
            seed,
            batch_size,
            freeze_encoder,
            out,
        } => {
            let mut rf = RunFile::load(&config)?;
            override_num(&mut rf, "epochs", epochs);
            override_num(&mut rf, "lr", lr);
            override_num(&mut rf, "seed", seed);
            override_num(&mut rf, "batch_size", batch_size);
            if let Some(f) = freeze_encoder {
                rf.set("freeze_encoder", f.to_string());
            }
            run_train(&rf, out)
        }
        Command::Evaluate {
            config,
            checkpoint,
            manifest,
        } => run_evaluate(&RunFile::load(&config)?, &checkpoint, manifest),
        Command::Benchmark {
            config,
            out,
            epochs,
            seed,
        } => {
            let mut rf = RunFile::load(&config)?;
            override_num(&mut rf, "epochs", epochs);
            override_num(&mut rf, "seed", seed);
            run_benchmark(&rf, out)
        }
        Command::Report { runs, out } => run_report(&runs, out),
        Command::Selftest => run_selftest(),
    }
}

fn override_num<T: ToString>(rf: &mut RunFile, key: &str, value: Option<T>) {
    if let Some(v) = value {
        rf.set(key, v.to_string());
    }
}

fn prepare(
    manifests: &[PathBuf],
    palette_ref: Option<&str>,
    histogram: Option<&Path>,
) -> Result<()> {
    let loaded: Vec<DatasetManifest> = manifests
        .iter()
        .map(|p| load_manifest(p))
        .collect::<Result<_>>()?;
    let palette = LabelPalette::resolve(palette_ref.unwrap_or("default22"))?;
    for dup in palette.duplicate_triples() {
        println!(
            "note: palette {} shares {:?} between classes {:?}; lookup resolves to {}",
            palette.name,
            dup.0,
            dup.1,
            dup.1[0]
        );
    }

    let refs: Vec<&DatasetManifest> = loaded.iter().collect();
    let report = validate_splits(&refs);
    for (m, check) in loaded.iter().zip(&report.checks) {
        match check.expected {
            Some(want) => println!(
                "{} {}: {} pairs (expected {want}) {}",
                m.dataset,
                check.split.name(),
                check.count,
                if check.ok { "ok" } else { "MISMATCH" }
            ),
            None => println!(
                "{} {}: {} pairs (no canonical count)",
                m.dataset,
                check.split.name(),
                check.count
            ),
        }
    }

    // class histogram over every mask, at native resolution
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut unknown_total = 0u64;
    for m in &loaded {
        for (_, mask_path) in &m.pairs {
            let mask = segkit::data::load_image(mask_path)?;
            let (labels, unknown) =
                rgb_mask_to_labels(&mask, &palette, UnknownColorPolicy::MapToClassZero)?;
            for l in labels {
                *counts.entry(l).or_insert(0) += 1;
            }
            unknown_total += unknown.iter().map(|(_, n)| *n as u64).sum::<u64>();
        }
    }
    let total: u64 = counts.values().sum();
    println!("class distribution over {total} pixels:");
    let mut hist_csv = String::from("class_id,name,pixels\n");
    for e in palette.entries() {
        let n = counts.get(&e.class_id).copied().unwrap_or(0);
        println!("  {:>3} {:<16} {n}", e.class_id, e.name);
        hist_csv.push_str(&format!("{},{},{n}\n", e.class_id, e.name));
    }
    if unknown_total > 0 {
        println!("warning: {unknown_total} pixels had colors outside the palette (mapped to class 0)");
    }
    if let Some(path) = histogram {
        std::fs::write(path, hist_csv).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("histogram written to {}", path.display());
    }
    if !report.ok {
        return Err(Error::BadManifest(
            "split counts do not match the declared dataset".into(),
        ));
    }
    Ok(())
}

fn manifest_from(rf: &RunFile, key: &str) -> Result<DatasetManifest> {
    let path = rf
        .manifest_path(key)
        .ok_or_else(|| Error::Usage(format!("run config needs {key} = <path>")))?;
    load_manifest(&path)
}

fn run_train(rf: &RunFile, out: Option<PathBuf>) -> Result<()> {
    let cfg = rf.train_config()?;
    let palette = rf.palette()?;
    let train_manifest = manifest_from(rf, "train_manifest")?;
    let val_manifest = manifest_from(rf, "val_manifest")?;
    let out_dir = out.unwrap_or_else(|| rf.out_dir());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let ckpt = out_dir.join("checkpoint");

    let record = train(&cfg, &train_manifest, &val_manifest, &palette, Some(&ckpt))?;
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::BadManifest(format!("record encode: {e}")))?;
    let rpath = out_dir.join("run.json");
    std::fs::write(&rpath, json).map_err(|e| Error::io(rpath.display().to_string(), e))?;
    let spath = out_dir.join("loss.svg");
    std::fs::write(&spath, loss_curve_svg(&record.epochs))
        .map_err(|e| Error::io(spath.display().to_string(), e))?;

    println!(
        "{} + {}: best epoch {} of {}, val mIoU {:.6}, val accuracy {:.6}, val loss {:.6}",
        record.model,
        record.backbone,
        record.best_epoch + 1,
        record.epochs.len(),
        record.final_report.mean_iou,
        record.final_report.pixel_accuracy,
        record.final_report.loss,
    );
    println!("checkpoint: {}", ckpt.display());
    println!("record: {}", rpath.display());
    Ok(())
}

fn run_evaluate(rf: &RunFile, checkpoint: &Path, manifest: Option<PathBuf>) -> Result<()> {
    let cfg = rf.train_config()?;
    let palette = rf.palette()?;
    let manifest = match manifest {
        Some(p) => load_manifest(&p)?,
        None => manifest_from(rf, "val_manifest")?,
    };
    let report = evaluate_checkpoint(&cfg, checkpoint, &manifest, &palette)?;
    println!("model,backbone,mean_iou,val_accuracy,loss");
    println!(
        "{},{},{:.8},{:.8},{:.8}",
        cfg.model.architecture.name(),
        cfg.model.backbone.family.name(),
        report.mean_iou,
        report.pixel_accuracy,
        report.loss
    );
    if let (Some(iou), Some(f)) = (report.iou_score_thresholded, report.f_score_thresholded) {
        println!(
            "thresholded@{:.2}: iou_score {:.8}, f_score {:.8}",
            cfg.eval_threshold, iou, f
        );
    }
    println!("per-class IoU ({}):", palette.name);
    for (e, iou) in palette.entries().iter().zip(&report.per_class_iou) {
        match iou {
            Some(v) => println!("  {:>3} {:<16} {v:.6}", e.class_id, e.name),
            None => println!("  {:>3} {:<16} (absent)", e.class_id, e.name),
        }
    }
    Ok(())
}

fn run_benchmark(rf: &RunFile, out: Option<PathBuf>) -> Result<()> {
    let matrix = rf.matrix()?;
    if matrix.is_empty() {
        return Err(Error::Usage(
            "benchmark needs matrix = arch:family[, ...] in the run config".into(),
        ));
    }
    let cfg = rf.train_config()?;
    let palette = rf.palette()?;
    let train_manifest = manifest_from(rf, "train_manifest")?;
    let val_manifest = manifest_from(rf, "val_manifest")?;
    let out_dir = out.unwrap_or_else(|| rf.out_dir());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let output = benchmark(
        &matrix,
        &cfg,
        &train_manifest,
        &val_manifest,
        &palette,
        &out_dir,
    )?;
    print!("{}", output.text);
    println!("reports written to {}", out_dir.display());
    Ok(())
}

fn run_report(runs: &Path, out: Option<PathBuf>) -> Result<()> {
    let rows = rows_from_dir(runs)?;
    if rows.is_empty() {
        return Err(Error::MissingFile(format!(
            "{}: no run records",
            runs.display()
        )));
    }
    let output = render_benchmark(rows);
    let out_dir = out.unwrap_or_else(|| runs.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let cpath = out_dir.join("report.csv");
    std::fs::write(&cpath, &output.csv).map_err(|e| Error::io(cpath.display().to_string(), e))?;
    let tpath = out_dir.join("report.txt");
    std::fs::write(&tpath, &output.text).map_err(|e| Error::io(tpath.display().to_string(), e))?;
    print!("{}", output.text);
    Ok(())
}

fn run_selftest() -> Result<()> {
    let checks = segkit::selftest::run_all();
    let mut failed = 0;
    for c in &checks {
        println!("[{}] {} - {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} selftest checks failed")));
    }
    Ok(())
}
