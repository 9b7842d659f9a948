//! Subprocess tests of the command-line interface: subcommand behavior,
//! flag precedence, and exit codes (0 success, 1 usage, 2 data error,
//! 3 numeric failure).

mod common;

use std::path::Path;
use std::process::Command;

use common::make_dataset;

fn segkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segkit"))
}

fn write_run_config(dir: &Path, data: &common::TinyDataset, extra: &str) -> std::path::PathBuf {
    let body = format!(
        concat!(
            "arch = unet\n",
            "family = vgg\n",
            "base_width = 8\n",
            "depth_per_stage = 1,1,1,1\n",
            "decoder_width = 16\n",
            "batch_size = 4\n",
            "resize_to = 32,32\n",
            "seed = 5\n",
            "palette = {palette}\n",
            "train_manifest = {train}\n",
            "val_manifest = {val}\n",
            "{extra}"
        ),
        palette = data.palette_path.display(),
        train = data.train_path.display(),
        val = data.val_path.display(),
        extra = extra,
    );
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn selftest_exits_zero() {
    let out = segkit().arg("selftest").output().unwrap();
    assert!(
        out.status.success(),
        "selftest failed:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS]"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = segkit().args(["train", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_flag_overrides_config_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let cfg = write_run_config(dir.path(), &data, "epochs = 3\n");
    let out_dir = dir.path().join("out");
    let out = segkit()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--epochs", "1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["epochs"].as_array().unwrap().len(), 1, "flag must override file");
    assert!(out_dir.join("checkpoint/manifest.txt").exists());
    assert!(out_dir.join("loss.svg").exists());
}

#[test]
fn evaluate_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let cfg = write_run_config(dir.path(), &data, "epochs = 1\n");
    let out_dir = dir.path().join("out");
    assert!(segkit()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .status()
        .unwrap()
        .success());
    let out = segkit()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(out_dir.join("checkpoint"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "evaluate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("model,backbone,mean_iou,val_accuracy,loss"));
    assert!(text.contains("unet,vgg,"));
}

#[test]
fn benchmark_without_matrix_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let cfg = write_run_config(dir.path(), &data, "epochs = 1\n");
    let out = segkit()
        .args(["benchmark", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn benchmark_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 4, 2, 32);
    let cfg = write_run_config(
        dir.path(),
        &data,
        "epochs = 1\nmatrix = unet:vgg, fpn:mobilenet\n",
    );
    let out_dir = dir.path().join("bench");
    let out = segkit()
        .args(["benchmark", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "benchmark failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let original = std::fs::read(out_dir.join("report.csv")).unwrap();

    let report_dir = dir.path().join("rerender");
    assert!(segkit()
        .args(["report", "--runs"])
        .arg(out_dir.join("runs"))
        .args(["--out"])
        .arg(&report_dir)
        .status()
        .unwrap()
        .success());
    let rerendered = std::fs::read(report_dir.join("report.csv")).unwrap();
    assert_eq!(original, rerendered, "re-rendered report must be byte-identical");
}

#[test]
fn prepare_validates_and_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 3, 2, 32);
    let hist = dir.path().join("hist.csv");
    let out = segkit()
        .args(["prepare", "--manifest"])
        .arg(&data.train_path)
        .args(["--manifest"])
        .arg(&data.val_path)
        .args(["--palette"])
        .arg(data.palette_path.to_str().unwrap())
        .args(["--histogram"])
        .arg(&hist)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "prepare failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("class distribution"));
    let csv = std::fs::read_to_string(&hist).unwrap();
    assert!(csv.starts_with("class_id,name,pixels\n"));
    // histogram sums to the total pixel count: 5 images of 32x32
    let total: u64 = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 5 * 32 * 32);
}

#[test]
fn prepare_flags_bad_camvid_counts_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = segkit::data::RgbImage::filled(2, 2, (128, 64, 128));
    let img_path = dir.path().join("img.ppm");
    std::fs::write(&img_path, segkit::data::image_io::encode_ppm(&img)).unwrap();
    let mut body = String::from("#dataset=camvid\n#split=train\n");
    for _ in 0..366 {
        body.push_str(&format!("{}\t{}\n", img_path.display(), img_path.display()));
    }
    let manifest = dir.path().join("camvid.manifest");
    std::fs::write(&manifest, body).unwrap();
    let out = segkit()
        .args(["prepare", "--manifest"])
        .arg(&manifest)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("MISMATCH"), "{text}");
}

#[test]
fn missing_data_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(dir.path(), 2, 1, 32);
    let cfg = write_run_config(dir.path(), &data, "epochs = 1\n");
    // break the dataset after manifest creation
    std::fs::remove_file(dir.path().join("train_0.ppm")).unwrap();
    let out = segkit()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
