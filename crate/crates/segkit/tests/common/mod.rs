//! Shared fixtures for integration tests: a tiny 3-class dataset written
//! as PPM files plus small model configurations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use segkit::arch::{Architecture, ModelConfig};
use segkit::backbone::{BackboneFamily, BackboneSpec};
use segkit::data::image_io::{encode_ppm, RgbImage};
use segkit::data::{load_manifest, DatasetManifest, LabelPalette};
use segkit::train::TrainConfig;

pub const BG: (u8, u8, u8) = (0, 0, 0);
pub const ROAD: (u8, u8, u8) = (128, 64, 128);
pub const SKY: (u8, u8, u8) = (70, 130, 180);

/// Three-class palette file: background, road, sky.
pub fn write_palette(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.palette");
    std::fs::write(&path, "0 background 0 0 0\n1 road 128 64 128\n2 sky 70 130 180\n").unwrap();
    path
}

/// Color-coded sample i: a vertical road stripe whose width varies with
/// the index, sky above a horizon. Image colors encode the class
/// directly so the mapping is learnable at desk scale.
fn sample(i: usize, size: usize) -> (RgbImage, RgbImage) {
    let mut img = RgbImage::filled(size, size, (40, 40, 40));
    let mut mask = RgbImage::filled(size, size, BG);
    let horizon = size / 4 + (i % 3);
    let road_lo = size / 4 + (i % 4);
    let road_hi = road_lo + size / 3;
    for y in 0..size {
        for x in 0..size {
            if y < horizon {
                img.set_pixel(y, x, (60, 90, 230));
                mask.set_pixel(y, x, SKY);
            } else if x >= road_lo && x < road_hi {
                img.set_pixel(y, x, (200, 60, 200));
                mask.set_pixel(y, x, ROAD);
            }
        }
    }
    (img, mask)
}

pub struct TinyDataset {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub palette: LabelPalette,
    pub palette_path: PathBuf,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
}

pub fn make_dataset(dir: &Path, n_train: usize, n_val: usize, size: usize) -> TinyDataset {
    let palette_path = write_palette(dir);
    let mut write_split = |name: &str, n: usize, offset: usize| -> PathBuf {
        let mut body = format!(
            "#dataset=tiny\n#split={name}\n#palette={}\n",
            palette_path.display()
        );
        for i in 0..n {
            let (img, mask) = sample(i + offset, size);
            let ip = dir.join(format!("{name}_{i}.ppm"));
            let mp = dir.join(format!("{name}_{i}_mask.ppm"));
            std::fs::write(&ip, encode_ppm(&img)).unwrap();
            std::fs::write(&mp, encode_ppm(&mask)).unwrap();
            writeln!(body, "{}\t{}", ip.display(), mp.display()).unwrap();
        }
        let path = dir.join(format!("{name}.manifest"));
        std::fs::write(&path, body).unwrap();
        path
    };
    let train_path = write_split("train", n_train, 0);
    let val_path = write_split("val", n_val, 1);
    TinyDataset {
        train: load_manifest(&train_path).unwrap(),
        val: load_manifest(&val_path).unwrap(),
        palette: LabelPalette::from_file(&palette_path).unwrap(),
        palette_path,
        train_path,
        val_path,
    }
}

pub fn tiny_model(arch: Architecture, family: BackboneFamily, classes: usize) -> ModelConfig {
    let mut backbone = BackboneSpec::new(family);
    backbone.base_width = 8;
    backbone.depth_per_stage = vec![1, 1, 1, 1];
    let mut cfg = ModelConfig::new(arch, backbone, classes);
    cfg.decoder_width = 16;
    cfg.pyramid_bins = vec![1, 2];
    cfg
}

pub fn tiny_train_config(arch: Architecture, family: BackboneFamily) -> TrainConfig {
    let mut cfg = TrainConfig::new(tiny_model(arch, family, 3));
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.seed = 7;
    cfg.resize_to = (32, 32);
    cfg
}
