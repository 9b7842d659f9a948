//! Run configuration: the flat `key = value` text format plus typed
//! assembly into a [`TrainConfig`]. Command-line flags override file
//! values by writing into the same key space before assembly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, ModelConfig, ALL_ARCHITECTURES};
use crate::backbone::{BackboneFamily, BackboneSpec, ALL_FAMILIES};
use crate::data::palette::UnknownColorPolicy;
use crate::data::LabelPalette;
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::metrics::AbsentClassPolicy;

/// Run hyperparameters. Defaults: Adam at learning rate 0.0001,
/// batch size 8, at least 50 epochs, softmax activation with
/// categorical cross-entropy, evaluation thresholds 0.5.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub eval_threshold: f64,
    pub resize_to: (usize, usize),
    pub absent_class_policy: AbsentClassPolicy,
    pub unknown_colors: UnknownColorPolicy,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            loss: LossSpec::default(),
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            freeze_encoder: false,
            eval_threshold: 0.5,
            resize_to: (64, 64),
            absent_class_policy: AbsentClassPolicy::Exclude,
            unknown_colors: UnknownColorPolicy::MapToClassZero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate(self.model.num_classes)?;
        if self.learning_rate <= 0.0 {
            return Err(Error::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eval_threshold) || self.eval_threshold == 0.0 {
            return Err(Error::BadThreshold(self.eval_threshold));
        }
        Ok(())
    }
}

/// Key/value view of a run-config file; later `set` calls override.
#[derive(Debug, Clone, Default)]
pub struct RunFile {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl RunFile {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::BadConfig(format!(
                    "line {}: want key = value, got {line:?}",
                    lineno + 1
                )));
            };
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunFile {
            values,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingFile(path.display().to_string()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::BadConfig(format!("bad value for {key}: {v:?}"))
            }),
        }
    }

    fn parse_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::BadConfig(format!("bad value for {key}: {v:?}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn parse_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("true" | "1" | "yes") => Ok(Some(true)),
            Some("false" | "0" | "no") => Ok(Some(false)),
            Some(v) => Err(Error::BadConfig(format!("bad value for {key}: {v:?}"))),
        }
    }

    fn resolve_path(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn palette(&self) -> Result<LabelPalette> {
        match self.values.get("palette") {
            None => Ok(LabelPalette::default_22()),
            Some(r) if r == "default22" || r == "eval19" => LabelPalette::resolve(r),
            Some(r) => LabelPalette::from_file(&self.resolve_path(r)),
        }
    }

    pub fn manifest_path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| self.resolve_path(v))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.values
            .get("out_dir")
            .map(|v| self.resolve_path(v))
            .unwrap_or_else(|| PathBuf::from("segkit-out"))
    }

    /// The benchmark matrix: `arch:family` pairs, comma-separated, or
    /// `all` for the full grid.
    pub fn matrix(&self) -> Result<Vec<(Architecture, BackboneFamily)>> {
        let Some(v) = self.values.get("matrix") else {
            return Ok(Vec::new());
        };
        if v.trim() == "all" {
            let mut out = Vec::new();
            for arch in ALL_ARCHITECTURES {
                for family in ALL_FAMILIES {
                    out.push((arch, family));
                }
            }
            return Ok(out);
        }
        v.split(',')
            .map(|pair| {
                let (a, f) = pair.trim().split_once(':').ok_or_else(|| {
                    Error::BadConfig(format!("matrix entries are arch:family, got {pair:?}"))
                })?;
                Ok((Architecture::parse(a.trim())?, BackboneFamily::parse(f.trim())?))
            })
            .collect()
    }

    /// Assemble the full config; unspecified keys take defaults and
    /// the class count follows the palette unless overridden.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let palette = self.palette()?;
        let family = match self.values.get("family") {
            Some(f) => BackboneFamily::parse(f)?,
            None => BackboneFamily::Resnet,
        };
        let mut backbone = BackboneSpec::new(family);
        if let Some(w) = self.parse_num::<usize>("base_width")? {
            backbone.base_width = w;
        }
        if let Some(d) = self.parse_list("depth_per_stage")? {
            backbone.depth_per_stage = d;
        }
        if let Some(phi) = self.parse_num::<f64>("compound_phi")? {
            backbone.compound_phi = phi;
        }

        let arch = match self.values.get("arch") {
            Some(a) => Architecture::parse(a)?,
            None => Architecture::Unet,
        };
        let classes = self
            .parse_num::<usize>("num_classes")?
            .unwrap_or_else(|| palette.num_classes());
        let mut model = ModelConfig::new(arch, backbone, classes);
        if let Some(w) = self.parse_num::<usize>("decoder_width")? {
            model.decoder_width = w;
        }
        if let Some(os) = self.parse_num::<u32>("output_stride")? {
            model.output_stride = os;
        }
        if let Some(bins) = self.parse_list("pyramid_bins")? {
            model.pyramid_bins = bins;
        }
        if let Some(rates) = self.parse_list("atrous_rates")? {
            model.atrous_rates = rates;
        }

        let mut cfg = TrainConfig::new(model);
        if let Some(kind) = self.values.get("loss") {
            cfg.loss.kind = LossKind::parse(kind)?;
        }
        if let Some(w) = self.values.get("class_weights") {
            let weights: Result<Vec<f64>> = w
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::BadConfig(format!("bad class_weights {w:?}")))
                })
                .collect();
            cfg.loss.class_weights = Some(weights?);
        }
        if let Some(s) = self.parse_num::<f64>("smoothing")? {
            cfg.loss.smoothing = s;
        }
        if let Some(lr) = self.parse_num::<f64>("lr")? {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.parse_num::<usize>("batch_size")? {
            cfg.batch_size = b;
        }
        if let Some(e) = self.parse_num::<usize>("epochs")? {
            cfg.epochs = e;
        }
        if let Some(s) = self.parse_num::<u64>("seed")? {
            cfg.seed = s;
        }
        if let Some(f) = self.parse_bool("freeze_encoder")? {
            cfg.freeze_encoder = f;
        }
        if let Some(t) = self.parse_num::<f64>("eval_threshold")? {
            cfg.eval_threshold = t;
        }
        if let Some(r) = self.parse_list("resize_to")? {
            if r.len() != 2 {
                return Err(Error::BadConfig(format!(
                    "resize_to wants h,w, got {r:?}"
                )));
            }
            cfg.resize_to = (r[0], r[1]);
        }
        if let Some(p) = self.values.get("absent_class_policy") {
            cfg.absent_class_policy = AbsentClassPolicy::parse(p)?;
        }
        if let Some(p) = self.values.get("unknown_color_policy") {
            cfg.unknown_colors = UnknownColorPolicy::parse(p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_run_table() {
        let rf = RunFile::parse("", Path::new(".")).unwrap();
        let cfg = rf.train_config().unwrap();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.eval_threshold, 0.5);
        assert_eq!(cfg.loss.kind, LossKind::CategoricalCe);
        assert_eq!(cfg.model.num_classes, 22); // default palette classes
    }

    #[test]
    fn file_values_then_overrides() {
        let text = "arch = fpn\nfamily = efficientnet\nepochs = 5\nlr = 0.001\n";
        let mut rf = RunFile::parse(text, Path::new(".")).unwrap();
        let cfg = rf.train_config().unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.model.architecture, Architecture::Fpn);
        // a later set() wins, like a command-line flag
        rf.set("epochs", "1".to_string());
        assert_eq!(rf.train_config().unwrap().epochs, 1);
        assert_eq!(rf.train_config().unwrap().learning_rate, 0.001);
    }

    #[test]
    fn lists_parse_comma_separated() {
        let text = "arch = pspnet\npyramid_bins = 1,2,4\ndepth_per_stage = 1,1,2,2\n";
        let rf = RunFile::parse(text, Path::new(".")).unwrap();
        let cfg = rf.train_config().unwrap();
        assert_eq!(cfg.model.pyramid_bins, vec![1, 2, 4]);
        assert_eq!(cfg.model.backbone.depth_per_stage, vec![1, 1, 2, 2]);
    }

    #[test]
    fn matrix_parses_pairs() {
        let text = "matrix = unet:vgg, fpn:resnet\n";
        let rf = RunFile::parse(text, Path::new(".")).unwrap();
        let m = rf.matrix().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0], (Architecture::Unet, BackboneFamily::Vgg));
        assert_eq!(m[1], (Architecture::Fpn, BackboneFamily::Resnet));
        let all = RunFile::parse("matrix = all\n", Path::new("."))
            .unwrap()
            .matrix()
            .unwrap();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(RunFile::parse("just words\n", Path::new(".")).is_err());
        let rf = RunFile::parse("epochs = zebra\n", Path::new(".")).unwrap();
        assert!(rf.train_config().is_err());
    }
}
