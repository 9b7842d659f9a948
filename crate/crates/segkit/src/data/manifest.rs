//! Dataset manifests: a text file of image/mask path pairs with header
//! lines for dataset name, split, and palette reference. CamVid manifests
//! are validated against the canonical 367/101/233 split counts.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::BadManifest(format!("unknown split {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Expected pair counts for the CamVid dataset.
pub const CAMVID_COUNTS: [(Split, usize); 3] = [
    (Split::Train, 367),
    (Split::Val, 101),
    (Split::Test, 233),
];

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub dataset: String,
    pub split: Split,
    pub palette_ref: String,
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

/// Parse a manifest and verify every referenced file exists.
///
/// Format: header lines `#dataset=`, `#split=`, `#palette=`, then one
/// `image_path<TAB>mask_path` per line. Relative paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingFile(display.clone()))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut dataset = String::new();
    let mut split = None;
    let mut palette_ref = String::new();
    let mut pairs = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.strip_prefix("dataset=") {
                dataset = v.trim().to_string();
            } else if let Some(v) = rest.strip_prefix("split=") {
                split = Some(Split::parse(v.trim())?);
            } else if let Some(v) = rest.strip_prefix("palette=") {
                palette_ref = v.trim().to_string();
            }
            continue;
        }
        let Some((img, mask)) = line.split_once('\t') else {
            return Err(Error::BadManifest(format!(
                "{display}:{}: want image<TAB>mask, got {line:?}",
                lineno + 1
            )));
        };
        let resolve = |p: &str| {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        pairs.push((resolve(img.trim()), resolve(mask.trim())));
    }

    let split = split.ok_or_else(|| {
        Error::BadManifest(format!("{display}: missing #split= header"))
    })?;
    if pairs.is_empty() {
        return Err(Error::BadManifest(format!("{display}: no pairs")));
    }
    for (img, mask) in &pairs {
        for p in [img, mask] {
            if !p.exists() {
                return Err(Error::MissingFile(p.display().to_string()));
            }
        }
    }
    Ok(DatasetManifest {
        dataset,
        split,
        palette_ref,
        pairs,
    })
}

#[derive(Debug, Clone)]
pub struct SplitCheck {
    pub split: Split,
    pub count: usize,
    pub expected: Option<usize>,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub checks: Vec<SplitCheck>,
    pub ok: bool,
}

/// Enforce canonical CamVid counts on manifests that declare
/// dataset=camvid; other datasets pass with counts reported only.
pub fn validate_splits(manifests: &[&DatasetManifest]) -> SplitReport {
    let mut checks = Vec::new();
    let mut all_ok = true;
    for m in manifests {
        let expected = if m.dataset.eq_ignore_ascii_case("camvid") {
            CAMVID_COUNTS
                .iter()
                .find(|(s, _)| *s == m.split)
                .map(|(_, n)| *n)
        } else {
            None
        };
        let ok = expected.map_or(true, |n| n == m.pairs.len());
        all_ok &= ok;
        checks.push(SplitCheck {
            split: m.split,
            count: m.pairs.len(),
            expected,
            ok,
        });
    }
    SplitReport {
        checks,
        ok: all_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn write_fixture(dir: &Path, split: &str, n: usize, dataset: &str) -> PathBuf {
        let img = crate::data::image_io::RgbImage::filled(2, 2, (128, 64, 128));
        let bytes = crate::data::image_io::encode_ppm(&img);
        let mut body = format!("#dataset={dataset}\n#split={split}\n#palette=default22\n");
        for i in 0..n {
            let ip = dir.join(format!("{split}_{i}.ppm"));
            let mp = dir.join(format!("{split}_{i}_mask.ppm"));
            std::fs::write(&ip, &bytes).unwrap();
            std::fs::write(&mp, &bytes).unwrap();
            writeln!(body, "{}\t{}", ip.display(), mp.display()).unwrap();
        }
        let path = dir.join(format!("{split}.manifest"));
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_and_resolves_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), "train", 3, "tiny");
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.dataset, "tiny");
        assert_eq!(m.split, Split::Train);
        assert_eq!(m.palette_ref, "default22");
        assert_eq!(m.pairs.len(), 3);
    }

    #[test]
    fn missing_file_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.manifest");
        std::fs::write(
            &path,
            "#split=train\n/nonexistent/img.ppm\t/nonexistent/mask.ppm\n",
        )
        .unwrap();
        match load_manifest(&path) {
            Err(Error::MissingFile(p)) => assert!(p.contains("nonexistent")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_bad_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.manifest");
        std::fs::write(&path, "#split=train\nno_tab_here\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::BadManifest(_))));
    }

    #[test]
    fn camvid_counts_enforced() {
        let dir = tempfile::tempdir().unwrap();
        // a non-camvid dataset with small counts passes
        let t = load_manifest(&write_fixture(dir.path(), "train", 4, "tiny")).unwrap();
        let v = load_manifest(&write_fixture(dir.path(), "val", 2, "tiny")).unwrap();
        let report = validate_splits(&[&t, &v]);
        assert!(report.ok);
        assert!(report.checks.iter().all(|c| c.expected.is_none()));

        // camvid with off-by-one train count fails that check
        let bad = load_manifest(&write_fixture(dir.path(), "test", 4, "camvid")).unwrap();
        let report = validate_splits(&[&bad]);
        assert!(!report.ok);
        assert_eq!(report.checks[0].expected, Some(233));
    }
}
