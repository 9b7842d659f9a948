//! End-to-end trainer behavior on a tiny on-disk dataset: descent,
//! determinism, freezing, checkpoints, evaluation, and benchmarking.

mod common;

use common::{make_dataset, tiny_train_config};
use segkit::arch::{Architecture, Model};
use segkit::backbone::{BackboneFamily, ENCODER_PREFIX};
use segkit::data::manifest::{DatasetManifest, Split};
use segkit::error::Error;
use segkit::train::{
    benchmark, evaluate, load_checkpoint, prefix_bytes, render_benchmark, rows_from_dir, train,
};

#[test]
fn two_epoch_smoke_train_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 8, 4, 32);
    let cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    let record = train(&cfg, &data.train, &data.val, &data.palette, None).unwrap();
    assert_eq!(record.epochs.len(), 2);
    assert!(
        record.epochs[1].train_loss < record.epochs[0].train_loss,
        "epoch losses should descend: {:?}",
        record.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>()
    );
}

#[test]
fn same_seed_identical_run_numerics() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 6, 3, 32);
    let cfg = tiny_train_config(Architecture::Fpn, BackboneFamily::Mobilenet);
    let a = train(&cfg, &data.train, &data.val, &data.palette, None).unwrap();
    let b = train(&cfg, &data.train, &data.val, &data.palette, None).unwrap();
    for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
        assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits());
        assert_eq!(ea.val_mean_iou.to_bits(), eb.val_mean_iou.to_bits());
    }
    assert_eq!(
        a.final_report.mean_iou.to_bits(),
        b.final_report.mean_iou.to_bits()
    );
}

#[test]
fn frozen_encoder_bytes_do_not_move() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let mut cfg = tiny_train_config(Architecture::Linknet, BackboneFamily::Resnet);
    cfg.epochs = 1;
    cfg.freeze_encoder = true;

    // train() builds its own model from the seed; replicate it to compare
    let before = {
        let model = Model::build(&cfg.model, cfg.seed).unwrap();
        prefix_bytes(&model.store, ENCODER_PREFIX)
    };
    let ckpt = dir.path().join("ckpt");
    train(&cfg, &data.train, &data.val, &data.palette, Some(&ckpt)).unwrap();

    let mut reloaded = Model::build(&cfg.model, cfg.seed).unwrap();
    load_checkpoint(&ckpt, &mut reloaded.store).unwrap();
    let after = prefix_bytes(&reloaded.store, ENCODER_PREFIX);
    assert_eq!(before, after, "frozen encoder parameters must be bit-identical");

    // decoder parameters did change under the same step
    let decoder_before = {
        let model = Model::build(&cfg.model, cfg.seed).unwrap();
        prefix_bytes(&model.store, "decoder.")
    };
    let decoder_after = prefix_bytes(&reloaded.store, "decoder.");
    assert_ne!(decoder_before, decoder_after);
}

#[test]
fn unfreezing_restores_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let mut cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    cfg.epochs = 1;
    cfg.freeze_encoder = false;

    let before = {
        let model = Model::build(&cfg.model, cfg.seed).unwrap();
        prefix_bytes(&model.store, ENCODER_PREFIX)
    };
    let ckpt = dir.path().join("ckpt");
    train(&cfg, &data.train, &data.val, &data.palette, Some(&ckpt)).unwrap();
    let mut reloaded = Model::build(&cfg.model, cfg.seed).unwrap();
    load_checkpoint(&ckpt, &mut reloaded.store).unwrap();
    assert_ne!(
        before,
        prefix_bytes(&reloaded.store, ENCODER_PREFIX),
        "unfrozen encoder should move"
    );
}

#[test]
fn evaluation_is_batch_size_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 5, 32);
    let cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    let mut model = Model::build(&cfg.model, 3).unwrap();

    let mut cfg1 = cfg.clone();
    cfg1.batch_size = 1;
    let r1 = evaluate(&mut model, &data.val, &data.palette, &cfg1).unwrap();
    let mut cfg8 = cfg.clone();
    cfg8.batch_size = 8;
    let r8 = evaluate(&mut model, &data.val, &data.palette, &cfg8).unwrap();

    // confusion-derived numbers are exact integer ratios
    assert_eq!(r1.mean_iou.to_bits(), r8.mean_iou.to_bits());
    assert_eq!(r1.pixel_accuracy.to_bits(), r8.pixel_accuracy.to_bits());
    assert_eq!(r1.f1_macro.to_bits(), r8.f1_macro.to_bits());
    assert_eq!(r1.per_class_iou, r8.per_class_iou);
}

#[test]
fn empty_manifest_yields_empty_matrix_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 2, 1, 32);
    let cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    let mut model = Model::build(&cfg.model, 0).unwrap();
    let empty = DatasetManifest {
        dataset: "tiny".into(),
        split: Split::Val,
        palette_ref: String::new(),
        pairs: Vec::new(),
    };
    assert!(matches!(
        evaluate(&mut model, &empty, &data.palette, &cfg),
        Err(Error::EmptyMatrix)
    ));
}

#[test]
fn class_count_mismatch_detected() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 2, 1, 32);
    let cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    let mut model = Model::build(&cfg.model, 0).unwrap();
    let wrong = segkit::data::LabelPalette::default_22();
    assert!(matches!(
        evaluate(&mut model, &data.val, &wrong, &cfg),
        Err(Error::ClassCountMismatch { .. })
    ));
}

#[test]
fn checkpoint_round_trip_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 3, 32);
    let mut cfg = tiny_train_config(Architecture::Pspnet, BackboneFamily::Densenet);
    cfg.epochs = 1;
    let ckpt = dir.path().join("ckpt");
    let record = train(&cfg, &data.train, &data.val, &data.palette, Some(&ckpt)).unwrap();

    let mut model = Model::build(&cfg.model, cfg.seed).unwrap();
    load_checkpoint(&ckpt, &mut model.store).unwrap();
    let report = evaluate(&mut model, &data.val, &data.palette, &cfg).unwrap();
    assert_eq!(
        report.mean_iou.to_bits(),
        record.final_report.mean_iou.to_bits()
    );
    assert_eq!(report.loss.to_bits(), record.final_report.loss.to_bits());
    assert_eq!(
        report.pixel_accuracy.to_bits(),
        record.final_report.pixel_accuracy.to_bits()
    );
}

#[test]
fn benchmark_two_by_two_rows_and_rerender() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let mut cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    cfg.epochs = 1;
    let matrix = vec![
        (Architecture::Unet, BackboneFamily::Vgg),
        (Architecture::Unet, BackboneFamily::Mobilenet),
        (Architecture::Fpn, BackboneFamily::Vgg),
        (Architecture::Fpn, BackboneFamily::Mobilenet),
    ];
    let out = dir.path().join("bench");
    let output = benchmark(&matrix, &cfg, &data.train, &data.val, &data.palette, &out).unwrap();
    assert_eq!(output.rows.len(), 4);
    assert_eq!(output.csv.lines().count(), 5, "header plus four rows");
    assert!(output.rows.iter().all(|r| r.failed.is_none()));

    // loss curves and at least one overlay per run exist
    for (arch, family) in &matrix {
        let tag = format!("{}_{}", arch.name(), family.name());
        assert!(out.join(format!("loss_{tag}.svg")).exists());
        assert!(out.join(format!("overlay_{tag}_0.png")).exists());
    }

    // re-render from persisted records is byte-identical
    let rows = rows_from_dir(&out.join("runs")).unwrap();
    let rerendered = render_benchmark(rows);
    assert_eq!(rerendered.csv, output.csv);
    assert_eq!(rerendered.text, output.text);
}

#[test]
fn benchmark_continues_past_failing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let mut cfg = tiny_train_config(Architecture::Unet, BackboneFamily::Vgg);
    cfg.epochs = 1;
    // pspnet with default bins [1,2] is fine; sabotage via pyramid bins
    // larger than the stride-8 map of a 32x32 input
    cfg.model.pyramid_bins = vec![1, 2, 3, 6];
    let matrix = vec![
        (Architecture::Pspnet, BackboneFamily::Vgg),
        (Architecture::Unet, BackboneFamily::Vgg),
    ];
    let out = dir.path().join("bench");
    let output = benchmark(&matrix, &cfg, &data.train, &data.val, &data.palette, &out).unwrap();
    assert_eq!(output.rows.len(), 2);
    let failed: Vec<_> = output.rows.iter().filter(|r| r.failed.is_some()).collect();
    assert_eq!(failed.len(), 1, "pspnet should fail on 6 bins over a 4x4 map");
    assert_eq!(failed[0].model, "pspnet");
    assert!(output.csv.contains("pspnet,vgg,—,—,—"));
    assert!(output.text.contains("FAILED"));
}
