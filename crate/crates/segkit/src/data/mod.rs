//! Data preparation: palettes, mask encoding, manifests, image IO, and
//! deterministic batching.

pub mod batch;
pub mod image_io;
pub mod manifest;
pub mod palette;

pub use batch::{batch_iter, shuffled_indices, Batch, BatchConfig, BatchStream};
pub use image_io::{load_image, save_image, RgbImage};
pub use manifest::{load_manifest, validate_splits, DatasetManifest, Split, SplitReport};
pub use palette::{
    hex_to_rgb, labels_to_onehot, labels_to_rgb, rgb_mask_to_labels, LabelPalette, PaletteEntry,
    UnknownColorPolicy,
};
