//! Image decode/encode. PNG is handled by the `image` crate; binary PPM
//! (P6) is read and written directly and doubles as the trivially
//! writable test-fixture format.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} rgb image wants {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: (u8, u8, u8)) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: (u8, u8, u8)) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb.0;
        self.data[i + 1] = rgb.1;
        self.data[i + 2] = rgb.2;
    }
}

pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<RgbImage> {
    let bad = |reason: &str| Error::ImageDecode {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("not a P6 ppm"));
    }
    // header: magic, width, height, maxval, single whitespace, then raster
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        fields.push(
            text.parse::<usize>()
                .map_err(|_| bad("bad header number"))?,
        );
    }
    pos += 1; // single whitespace after maxval
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    RgbImage::new(width, height, bytes[pos..pos + need].to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Decode by content sniffing: P6 or PNG.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes, &display);
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::ImageDecode {
            path: display.clone(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    let display = path.display().to_string();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "ppm" {
        return std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(&display, e));
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .expect("image buffer size checked at construction");
    buf.save(path).map_err(|e| Error::ImageDecode {
        path: display,
        reason: e.to_string(),
    })
}

/// Bilinear for photographs.
pub fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    resize_with(img, width, height, image::imageops::FilterType::Triangle)
}

/// Nearest for label masks: the output contains only input colors.
pub fn resize_nearest(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    resize_with(img, width, height, image::imageops::FilterType::Nearest)
}

fn resize_with(
    img: &RgbImage,
    width: usize,
    height: usize,
    filter: image::imageops::FilterType,
) -> RgbImage {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .expect("image buffer size checked at construction");
    let resized = image::imageops::resize(&buf, width as u32, height as u32, filter);
    RgbImage {
        width,
        height,
        data: resized.into_raw(),
    }
}
