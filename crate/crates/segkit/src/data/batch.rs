//! Deterministic batching: a seeded shuffle over manifest pairs, bilinear
//! resize for images, nearest-neighbor for masks, [0,1] pixel scaling,
//! and one-hot label expansion.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::{load_image, resize_bilinear, resize_nearest, RgbImage};
use super::manifest::DatasetManifest;
use super::palette::{labels_to_onehot, rgb_mask_to_labels, LabelPalette, UnknownColorPolicy};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub seed: u64,
    /// Target (height, width); both divisible by 32.
    pub resize_to: (usize, usize),
    pub unknown_colors: UnknownColorPolicy,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be positive".into()));
        }
        let (h, w) = self.resize_to;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::InputNotDivisible { h, w, divisor: 32 });
        }
        Ok(())
    }
}

pub struct Batch {
    /// N x 3 x H x W in [0, 1].
    pub images: Tensor,
    /// N x C x H x W.
    pub onehot: Tensor,
    /// N*H*W class ids, row-major.
    pub labels: Vec<u32>,
}

/// Fisher-Yates permutation from a seeded stream cipher; stable across
/// platforms and releases.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Load, resize, and encode one image/mask pair.
pub fn load_sample(
    image_path: &std::path::Path,
    mask_path: &std::path::Path,
    palette: &LabelPalette,
    resize_to: (usize, usize),
    policy: UnknownColorPolicy,
) -> Result<(Tensor, Vec<u32>)> {
    let (h, w) = resize_to;
    let img = resize_bilinear(&load_image(image_path)?, w, h);
    let mask = resize_nearest(&load_image(mask_path)?, w, h);
    let image = image_to_tensor(&img);
    let (labels, _unknown) = rgb_mask_to_labels(&mask, palette, policy)?;
    Ok((image, labels))
}

/// HWC u8 to 3 x H x W f64 scaled to [0, 1].
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (h, w) = (img.height, img.width);
    let mut out = Tensor::zeros(&[3, h, w]);
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = img.pixel(y, x);
            let i = y * w + x;
            out.data_mut()[i] = r as f64 / 255.0;
            out.data_mut()[plane + i] = g as f64 / 255.0;
            out.data_mut()[2 * plane + i] = b as f64 / 255.0;
        }
    }
    out
}

/// Deterministic stream of batches over one epoch.
pub struct BatchStream<'a> {
    manifest: &'a DatasetManifest,
    palette: &'a LabelPalette,
    cfg: BatchConfig,
    order: Vec<usize>,
    cursor: usize,
}

pub fn batch_iter<'a>(
    manifest: &'a DatasetManifest,
    palette: &'a LabelPalette,
    cfg: &BatchConfig,
) -> Result<BatchStream<'a>> {
    cfg.validate()?;
    Ok(BatchStream {
        manifest,
        palette,
        cfg: cfg.clone(),
        order: shuffled_indices(manifest.pairs.len(), cfg.seed),
        cursor: 0,
    })
}

impl BatchStream<'_> {
    fn load_batch(&self, indices: &[usize]) -> Result<Batch> {
        let (h, w) = self.cfg.resize_to;
        let c = self.palette.num_classes();
        let n = indices.len();
        let mut images = Tensor::zeros(&[n, 3, h, w]);
        let mut onehot = Tensor::zeros(&[n, c, h, w]);
        let mut labels = Vec::with_capacity(n * h * w);
        for (bi, &idx) in indices.iter().enumerate() {
            let (img_path, mask_path) = &self.manifest.pairs[idx];
            let (image, sample_labels) = load_sample(
                img_path,
                mask_path,
                self.palette,
                self.cfg.resize_to,
                self.cfg.unknown_colors,
            )?;
            let img_len = 3 * h * w;
            images.data_mut()[bi * img_len..(bi + 1) * img_len]
                .copy_from_slice(image.data());
            let oh = labels_to_onehot(&sample_labels, h, w, c)?;
            let oh_len = c * h * w;
            onehot.data_mut()[bi * oh_len..(bi + 1) * oh_len].copy_from_slice(oh.data());
            labels.extend_from_slice(&sample_labels);
        }
        Ok(Batch {
            images,
            onehot,
            labels,
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let indices: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.load_batch(&indices))
    }
}
