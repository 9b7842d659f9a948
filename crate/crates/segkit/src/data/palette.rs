//! RGB palette handling: hex to RGB, colored masks to integer label maps
//! and back, and one-hot expansion.
//!
//! The built-in 22-entry palette deliberately carries a duplicate triple:
//! ids 0 and 1 both map to (0, 0, 0). Color lookup resolves duplicates to
//! the LOWEST class id, so class 1 is unreachable from RGB masks; this
//! mirrors the upstream labeling script and is preserved as documented
//! behavior.

use std::collections::HashMap;
use std::path::Path;

use super::image_io::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    pub class_id: u32,
    pub name: String,
    pub rgb: (u8, u8, u8),
}

#[derive(Debug, Clone)]
pub struct LabelPalette {
    pub name: String,
    entries: Vec<PaletteEntry>,
    lookup: HashMap<(u8, u8, u8), u32>,
}

impl LabelPalette {
    pub fn new(name: &str, entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::BadManifest("empty palette".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.class_id != i as u32 {
                return Err(Error::BadManifest(format!(
                    "palette ids must be contiguous from 0; entry {i} has id {}",
                    e.class_id
                )));
            }
        }
        let mut lookup = HashMap::new();
        for e in &entries {
            // lowest class id wins on duplicate triples
            lookup.entry(e.rgb).or_insert(e.class_id);
        }
        Ok(LabelPalette {
            name: name.to_string(),
            entries,
            lookup,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn class_id_of(&self, rgb: (u8, u8, u8)) -> Option<u32> {
        self.lookup.get(&rgb).copied()
    }

    pub fn rgb_of(&self, class_id: u32) -> Result<(u8, u8, u8)> {
        self.entries
            .get(class_id as usize)
            .map(|e| e.rgb)
            .ok_or(Error::LabelOutOfRange {
                label: class_id,
                classes: self.entries.len(),
            })
    }

    /// Triples shared by more than one class, with the ids that share them.
    pub fn duplicate_triples(&self) -> Vec<((u8, u8, u8), Vec<u32>)> {
        let mut groups: HashMap<(u8, u8, u8), Vec<u32>> = HashMap::new();
        for e in &self.entries {
            groups.entry(e.rgb).or_default().push(e.class_id);
        }
        let mut dups: Vec<_> = groups.into_iter().filter(|(_, ids)| ids.len() > 1).collect();
        dups.sort_by_key(|(rgb, _)| *rgb);
        dups
    }

    /// The 22-entry driving palette that ships as the default.
    pub fn default_22() -> Self {
        let table: [(&str, (u8, u8, u8)); 22] = [
            ("unlabeled", (0, 0, 0)),
            ("static_l", (0, 0, 0)),
            ("road", (128, 64, 128)),
            ("sidewalk", (244, 35, 232)),
            ("building", (70, 70, 70)),
            ("fence", (190, 153, 153)),
            ("wall", (102, 102, 156)),
            ("polegroup", (153, 153, 153)),
            ("traffic_light", (250, 170, 30)),
            ("traffic_sign", (220, 220, 0)),
            ("terrain", (152, 251, 152)),
            ("vegetation", (107, 142, 35)),
            ("sky", (70, 130, 180)),
            ("person", (220, 20, 60)),
            ("rider", (255, 0, 0)),
            ("bicycle", (119, 11, 32)),
            ("bus", (0, 60, 100)),
            ("car", (0, 0, 142)),
            ("caravan", (0, 0, 90)),
            ("motorcycle", (0, 0, 230)),
            ("train", (0, 80, 100)),
            ("truck", (0, 0, 70)),
        ];
        Self::from_table("default22", &table)
    }

    /// The 19-class evaluation palette.
    pub fn eval_19() -> Self {
        let table: [(&str, (u8, u8, u8)); 19] = [
            ("road", (128, 64, 128)),
            ("sidewalk", (244, 35, 232)),
            ("building", (70, 70, 70)),
            ("wall", (102, 102, 156)),
            ("fence", (190, 153, 153)),
            ("pole", (153, 153, 153)),
            ("traffic_light", (250, 170, 30)),
            ("traffic_sign", (220, 220, 0)),
            ("vegetation", (107, 142, 35)),
            ("terrain", (152, 251, 152)),
            ("sky", (70, 130, 180)),
            ("person", (220, 20, 60)),
            ("rider", (255, 0, 0)),
            ("car", (0, 0, 142)),
            ("truck", (0, 0, 70)),
            ("bus", (0, 60, 100)),
            ("train", (0, 80, 100)),
            ("motorcycle", (0, 0, 230)),
            ("bicycle", (119, 11, 32)),
        ];
        Self::from_table("eval19", &table)
    }

    fn from_table(name: &str, table: &[(&str, (u8, u8, u8))]) -> Self {
        let entries = table
            .iter()
            .enumerate()
            .map(|(i, (n, rgb))| PaletteEntry {
                class_id: i as u32,
                name: n.to_string(),
                rgb: *rgb,
            })
            .collect();
        Self::new(name, entries).expect("built-in palette is well-formed")
    }

    /// Resolve a palette reference: a built-in name or a file path.
    pub fn resolve(reference: &str) -> Result<Self> {
        match reference {
            "default22" | "" => Ok(Self::default_22()),
            "eval19" => Ok(Self::eval_19()),
            path => Self::from_file(Path::new(path)),
        }
    }

    /// Text format: one `id name r g b` per line, # comments allowed.
    pub fn from_file(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::BadManifest(format!(
                    "{display}:{}: want `id name r g b`, got {line:?}",
                    lineno + 1
                )));
            }
            let parse = |s: &str| -> Result<u32> {
                s.parse()
                    .map_err(|_| Error::BadManifest(format!("{display}: bad number {s:?}")))
            };
            let id = parse(parts[0])?;
            let (r, g, b) = (parse(parts[2])?, parse(parts[3])?, parse(parts[4])?);
            if r > 255 || g > 255 || b > 255 {
                return Err(Error::BadManifest(format!(
                    "{display}: channel out of range in {line:?}"
                )));
            }
            entries.push(PaletteEntry {
                class_id: id,
                name: parts[1].to_string(),
                rgb: (r as u8, g as u8, b as u8),
            });
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("palette");
        Self::new(stem, entries)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                e.class_id, e.name, e.rgb.0, e.rgb.1, e.rgb.2
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Hexadecimal color to RGB: each channel is 16 * high + low.
pub fn hex_to_rgb(hex: &str) -> Result<(u8, u8, u8)> {
    let digits = hex.strip_prefix('#').unwrap_or(hex);
    if digits.len() != 6 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::BadHex(hex.to_string()));
    }
    let channel = |s: &str| u8::from_str_radix(s, 16).expect("validated hex digits");
    Ok((
        channel(&digits[0..2]),
        channel(&digits[2..4]),
        channel(&digits[4..6]),
    ))
}

/// What to do with mask pixels whose color is not in the palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownColorPolicy {
    /// Error out, listing the offending colors and counts.
    Strict,
    /// Assign class 0 and report the colors to the caller.
    #[default]
    MapToClassZero,
}

impl UnknownColorPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(UnknownColorPolicy::Strict),
            "map_to_class_0" | "map0" => Ok(UnknownColorPolicy::MapToClassZero),
            other => Err(Error::BadConfig(format!(
                "unknown unknown_color_policy {other:?}"
            ))),
        }
    }
}

/// Unmatched colors and their pixel counts, sorted by triple.
pub type UnknownColors = Vec<((u8, u8, u8), usize)>;

fn describe_unknown(unknown: &UnknownColors) -> String {
    let total: usize = unknown.iter().map(|(_, n)| n).sum();
    let list: Vec<String> = unknown
        .iter()
        .take(8)
        .map(|((r, g, b), n)| format!("({r},{g},{b}) x{n}"))
        .collect();
    format!("{total} pixels in {} colors: {}", unknown.len(), list.join(", "))
}

/// Replace each palette color with its class id. Duplicate triples take
/// the lowest id; unknown colors follow `policy`.
pub fn rgb_mask_to_labels(
    mask: &RgbImage,
    palette: &LabelPalette,
    policy: UnknownColorPolicy,
) -> Result<(Vec<u32>, UnknownColors)> {
    let mut labels = Vec::with_capacity(mask.width * mask.height);
    let mut unknown: HashMap<(u8, u8, u8), usize> = HashMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let rgb = mask.pixel(y, x);
            match palette.class_id_of(rgb) {
                Some(id) => labels.push(id),
                None => {
                    *unknown.entry(rgb).or_insert(0) += 1;
                    labels.push(0);
                }
            }
        }
    }
    let mut unknown: UnknownColors = unknown.into_iter().collect();
    unknown.sort_by_key(|(rgb, _)| *rgb);
    if policy == UnknownColorPolicy::Strict && !unknown.is_empty() {
        return Err(Error::UnknownColor(describe_unknown(&unknown)));
    }
    Ok((labels, unknown))
}

/// Inverse mapping for visual output.
pub fn labels_to_rgb(
    labels: &[u32],
    height: usize,
    width: usize,
    palette: &LabelPalette,
) -> Result<RgbImage> {
    if labels.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {height}x{width} image",
            labels.len()
        )));
    }
    let mut data = Vec::with_capacity(labels.len() * 3);
    for &id in labels {
        let (r, g, b) = palette.rgb_of(id)?;
        data.extend_from_slice(&[r, g, b]);
    }
    RgbImage::new(width, height, data)
}

/// C x H x W with exactly one 1 per pixel across channels.
pub fn labels_to_onehot(labels: &[u32], height: usize, width: usize, classes: usize) -> Result<Tensor> {
    if labels.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {height}x{width} map",
            labels.len()
        )));
    }
    let mut out = Tensor::zeros(&[classes, height, width]);
    let plane = height * width;
    for (i, &id) in labels.iter().enumerate() {
        if id as usize >= classes {
            return Err(Error::LabelOutOfRange {
                label: id,
                classes,
            });
        }
        out.data_mut()[id as usize * plane + i] = 1.0;
    }
    Ok(out)
}
