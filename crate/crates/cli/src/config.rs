//! Run configuration: a flat `key = value` text file plus `--set` overrides.
//!
//! Unknown keys are rejected so typos fail loudly. `#` starts a comment
//! line; values never contain inline comments. All artifact-producing
//! commands resolve paths against `out_dir` and write nowhere else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use donn::autodiff::{AdamParams, TrainConfig};
use donn::dataio::{filter_labels, parse_idx, LabeledImageSet};
use donn::field::GridSpec;
use donn::network::{DetectorLayout, NetworkModel};
use donn::propagation::PropagationMethod;
use donn::slm::{encode_image, DeviceLUT, EncodedImage, GumbelLayer};

use crate::error::CliError;

/// Documented configuration keys, shown by `--help` on the commands that
/// take `--config`.
pub const CONFIG_HELP: &str = "Configuration keys (flat `key = value` lines, `#` comments, --set overrides):
  data              synthetic | idx                      (default synthetic)
  labels            comma-separated digit subset         (default 0,1,7)
  train_images      IDX image file, data = idx only
  train_labels      IDX label file, data = idx only
  test_images       IDX image file, data = idx only
  test_labels       IDX label file, data = idx only
  train_per_label   synthetic samples per label, train   (default 167)
  test_per_label    synthetic samples per label, test    (default 100)
  image_side        synthetic canvas side, >= 8          (default 28)
  data_seed         synthetic stream seed                (default 100 + seed)
  train_count       truncate the train set               (default: keep all)
  grid_n            square grid side                     (default 64)
  pitch             pixel pitch in metres                (default 36e-6)
  wavelength        in metres                            (default 532e-9)
  pad               opaque padding ring width            (default 32)
  lut               phase256 | flip | <curve.csv>        (default phase256)
  k                 grey levels after subsampling        (default 16)
  layers            trainable layer count                (default 2)
  tau               Gumbel-Softmax temperature           (default 1.0)
  z                 layer spacing in metres              (default 0.2794)
  method            spectral | conv                      (default spectral)
  detector_height   detector region rows                 (default 10)
  detector_width    detector region columns              (default 10)
  epochs            training epochs                      (default 50)
  lr                Adam learning rate                   (default 0.5)
  batch             mini-batch size                      (default 100)
  seed              master RNG seed                      (default 1)
  sample_noise      true | false                         (default true)
  shuffle           true | false                         (default true)
  stop_at           early-stop test accuracy in (0, 1]   (default: off)
  clip_norm         max gradient L2 norm                 (default: off)
  attack_samples    adversarial PGM pairs to export      (default 0)
  mask_features     protect featured pixels when attacking (default true)
  out_dir           artifact directory                   (default out)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LutChoice {
    /// 256-level coupled amplitude/phase curve, subsampled to `k`.
    Phase256,
    /// Two-level phase-flip device; requires `k = 2`.
    Flip,
    /// Measured curve from a CSV file (grey_level, amplitude, phase rows).
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: DataSource,
    pub labels: Vec<u8>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_per_label: usize,
    pub test_per_label: usize,
    pub image_side: usize,
    pub data_seed: Option<u64>,
    pub train_count: Option<usize>,
    pub grid_n: usize,
    pub pitch: f64,
    pub wavelength: f64,
    pub pad: usize,
    pub lut: LutChoice,
    pub k: usize,
    pub layers: usize,
    pub tau: f64,
    pub z: f64,
    pub method: PropagationMethod,
    pub detector_height: usize,
    pub detector_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub sample_noise: bool,
    pub shuffle: bool,
    pub stop_at: Option<f64>,
    pub clip_norm: Option<f64>,
    pub attack_samples: usize,
    pub mask_features: bool,
    pub out_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Key/value lines -> map; later lines win, as do `--set` overrides.
fn parse_pairs(text: &str, overrides: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set {item:?}: expected KEY=VALUE")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| config_err(format!("key {key}: cannot parse {v:?}"))),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(format!("key {key}: cannot parse {v:?}"))),
        }
    }

    fn parse_bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(config_err(format!("key {key}: expected true or false, got {v:?}"))),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(PathBuf::from)
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut keys = Keys(parse_pairs(text, overrides)?);

        let data = match keys.take("data").as_deref() {
            None | Some("synthetic") => DataSource::Synthetic,
            Some("idx") => DataSource::Idx,
            Some(v) => return Err(config_err(format!("key data: expected synthetic or idx, got {v:?}"))),
        };
        let labels = parse_labels(&keys.take("labels").unwrap_or_else(|| "0,1,7".into()))?;
        let lut = match keys.take("lut").as_deref() {
            None | Some("phase256") => LutChoice::Phase256,
            Some("flip") => LutChoice::Flip,
            Some(p) if p.ends_with(".csv") => LutChoice::Csv(PathBuf::from(p)),
            Some(v) => {
                return Err(config_err(format!(
                    "key lut: expected phase256, flip, or a .csv path, got {v:?}"
                )))
            }
        };
        let method = match keys.take("method").as_deref() {
            None | Some("spectral") => PropagationMethod::SpectralFresnel,
            Some("conv") => PropagationMethod::ConvFresnel,
            Some(v) => return Err(config_err(format!("key method: expected spectral or conv, got {v:?}"))),
        };

        let config = Self {
            data,
            labels,
            train_images: keys.path("train_images"),
            train_labels: keys.path("train_labels"),
            test_images: keys.path("test_images"),
            test_labels: keys.path("test_labels"),
            train_per_label: keys.parse("train_per_label", 167)?,
            test_per_label: keys.parse("test_per_label", 100)?,
            image_side: keys.parse("image_side", 28)?,
            data_seed: keys.parse_opt("data_seed")?,
            train_count: keys.parse_opt("train_count")?,
            grid_n: keys.parse("grid_n", 64)?,
            pitch: keys.parse("pitch", 36e-6)?,
            wavelength: keys.parse("wavelength", 532e-9)?,
            pad: keys.parse("pad", 32)?,
            lut,
            k: keys.parse("k", 16)?,
            layers: keys.parse("layers", 2)?,
            tau: keys.parse("tau", 1.0)?,
            z: keys.parse("z", 0.2794)?,
            method,
            detector_height: keys.parse("detector_height", 10)?,
            detector_width: keys.parse("detector_width", 10)?,
            epochs: keys.parse("epochs", 50)?,
            lr: keys.parse("lr", 0.5)?,
            batch: keys.parse("batch", 100)?,
            seed: keys.parse("seed", 1)?,
            sample_noise: keys.parse_bool("sample_noise", true)?,
            shuffle: keys.parse_bool("shuffle", true)?,
            stop_at: keys.parse_opt("stop_at")?,
            clip_norm: keys.parse_opt("clip_norm")?,
            attack_samples: keys.parse("attack_samples", 0)?,
            mask_features: keys.parse_bool("mask_features", true)?,
            out_dir: keys.path("out_dir").unwrap_or_else(|| PathBuf::from("out")),
        };

        if !keys.0.is_empty() {
            let unknown: Vec<&str> = keys.0.keys().map(String::as_str).collect();
            return Err(config_err(format!(
                "unknown config keys: {}; run `donn train --help` for the key list",
                unknown.join(", ")
            )));
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("pitch", self.pitch),
            ("wavelength", self.wavelength),
            ("z", self.z),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err(format!("key {name}: must be a positive number, got {v}")));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(config_err(format!("key lr: must be >= 0, got {}", self.lr)));
        }
        if self.grid_n == 0 {
            return Err(config_err("key grid_n: must be >= 1"));
        }
        if self.k < 2 {
            return Err(config_err(format!("key k: need at least 2 grey levels, got {}", self.k)));
        }
        if self.lut == LutChoice::Flip && self.k != 2 {
            return Err(config_err(format!(
                "key k: the flip LUT has exactly 2 levels, got k = {}",
                self.k
            )));
        }
        if self.layers == 0 {
            return Err(config_err("key layers: must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(config_err("key epochs: must be >= 1"));
        }
        if self.batch == 0 {
            return Err(config_err("key batch: must be >= 1"));
        }
        if self.detector_height == 0 || self.detector_width == 0 {
            return Err(config_err("detector regions need positive height and width"));
        }
        if let Some(s) = self.stop_at {
            if !(s > 0.0 && s <= 1.0) {
                return Err(config_err(format!("key stop_at: must be in (0, 1], got {s}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(config_err(format!("key clip_norm: must be positive, got {c}")));
            }
        }
        if self.data == DataSource::Synthetic {
            if self.image_side < 8 {
                return Err(config_err(format!(
                    "key image_side: synthetic digits need side >= 8, got {}",
                    self.image_side
                )));
            }
            if self.train_per_label == 0 || self.test_per_label == 0 {
                return Err(config_err("synthetic per-label counts must be >= 1"));
            }
        }
        Ok(())
    }

    /// Referenced files must exist before any work starts. Training needs
    /// the LUT (models under test carry their own); each split needs its
    /// dataset pair when reading IDX files.
    pub fn require_files(&self, need_train: bool, need_test: bool) -> Result<(), CliError> {
        if need_train {
            if let LutChoice::Csv(path) = &self.lut {
                if !path.exists() {
                    return Err(config_err(format!(
                        "LUT file not found: {} (key lut)",
                        path.display()
                    )));
                }
            }
        }
        if self.data == DataSource::Synthetic {
            return Ok(());
        }
        let mut wanted: Vec<(&str, &Option<PathBuf>)> = Vec::new();
        if need_train {
            wanted.push(("train_images", &self.train_images));
            wanted.push(("train_labels", &self.train_labels));
        }
        if need_test {
            wanted.push(("test_images", &self.test_images));
            wanted.push(("test_labels", &self.test_labels));
        }
        for (key, path) in wanted {
            let path = path
                .as_ref()
                .ok_or_else(|| config_err(format!("data = idx requires the {key} key")))?;
            if !path.exists() {
                return Err(config_err(format!(
                    "dataset file not found: {} (key {key})",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        Ok(GridSpec::square(self.grid_n, self.pitch, self.wavelength, self.pad)?)
    }

    pub fn build_lut(&self) -> Result<DeviceLUT, CliError> {
        let lut = match &self.lut {
            LutChoice::Phase256 => DeviceLUT::phase_mode(256).subsample(self.k)?,
            LutChoice::Flip => DeviceLUT::phase_flip(),
            LutChoice::Csv(path) => {
                let lut = DeviceLUT::from_csv_path(path)?;
                if self.k < lut.levels() {
                    lut.subsample(self.k)?
                } else if self.k == lut.levels() {
                    lut
                } else {
                    return Err(config_err(format!(
                        "key k: {} exceeds the {} levels in {}",
                        self.k,
                        lut.levels(),
                        path.display()
                    )));
                }
            }
        };
        Ok(lut)
    }

    /// Untrained model with seeded layer initialization.
    pub fn build_model(&self) -> Result<NetworkModel, CliError> {
        let grid = self.grid()?;
        let lut = self.build_lut()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let layers = (0..self.layers)
            .map(|_| GumbelLayer::init(grid, lut.clone(), self.tau, &mut rng))
            .collect::<donn::error::Result<Vec<_>>>()?;
        let detectors = DetectorLayout::evenly_spaced_with_size(
            &grid,
            &self.labels,
            self.detector_height,
            self.detector_width,
        )?;
        Ok(NetworkModel::new(
            grid,
            layers,
            self.z,
            self.method,
            detectors,
            self.labels.clone(),
        )?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamParams { lr: self.lr, ..Default::default() },
            seed: self.seed,
            sample_noise: self.sample_noise,
            shuffle: self.shuffle,
            stop_at_test_accuracy: self.stop_at,
            clip_norm: self.clip_norm,
            progress: false,
        }
    }

    fn effective_data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(100 + self.seed)
    }

    fn raw_set(&self, train: bool) -> Result<LabeledImageSet, CliError> {
        match self.data {
            DataSource::Synthetic => {
                let per_label = if train { self.train_per_label } else { self.test_per_label };
                let seed = if train {
                    self.effective_data_seed()
                } else {
                    self.effective_data_seed() + 800
                };
                Ok(donn::dataio::synthetic_set(&self.labels, per_label, self.image_side, seed)?)
            }
            DataSource::Idx => {
                let (images, labels, what) = if train {
                    (&self.train_images, &self.train_labels, "train")
                } else {
                    (&self.test_images, &self.test_labels, "test")
                };
                let (ip, lp) = match (images, labels) {
                    (Some(i), Some(l)) => (i, l),
                    _ => {
                        return Err(config_err(format!(
                            "data = idx requires {what}_images and {what}_labels"
                        )))
                    }
                };
                let image_bytes = std::fs::read(ip).map_err(|e| {
                    config_err(format!("cannot read {}: {e}", ip.display()))
                })?;
                let label_bytes = std::fs::read(lp).map_err(|e| {
                    config_err(format!("cannot read {}: {e}", lp.display()))
                })?;
                let set = parse_idx(&image_bytes, &label_bytes, &ip.display().to_string())?;
                Ok(filter_labels(&set, &self.labels)?)
            }
        }
    }

    /// Load, truncate, resample to the grid, and encode one split.
    pub fn load_split(
        &self,
        grid: GridSpec,
        train: bool,
    ) -> Result<(Vec<EncodedImage>, Vec<u8>), CliError> {
        let mut set = self.raw_set(train)?;
        if train {
            if let Some(n) = self.train_count {
                set = set.truncated(n);
            }
        }
        if set.side() != grid.ny {
            set = set.resampled(grid.ny)?;
        }
        let images = set
            .images()
            .iter()
            .map(|im| encode_image(im, grid))
            .collect::<donn::error::Result<Vec<_>>>()?;
        Ok((images, set.labels().to_vec()))
    }
}

fn parse_labels(text: &str) -> Result<Vec<u8>, CliError> {
    let mut labels = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let d: u8 = part
            .parse()
            .map_err(|_| config_err(format!("key labels: bad digit {part:?}")))?;
        if d > 9 {
            return Err(config_err(format!("key labels: {d} outside 0-9")));
        }
        if labels.contains(&d) {
            return Err(config_err(format!("key labels: duplicate {d}")));
        }
        labels.push(d);
    }
    if labels.is_empty() {
        return Err(config_err("key labels: need at least one digit"));
    }
    Ok(labels)
}
