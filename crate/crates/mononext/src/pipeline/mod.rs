//! Training, prediction, visualization and the configuration that binds the
//! modules together.
//!
//! Configuration lives in a flat `key = value` text file (`#` starts a
//! comment); CLI flags override file values. `MONONEXT_DATA_ROOT` is the
//! fallback for the dataset root when neither is given.

pub mod cli;
mod data;
mod predict;
mod synth;
mod train;
mod viz;

pub use data::{frame_boxes, image_to_tensor, prepare_sample, Sample};
pub use predict::{predict_frames, write_predictions};
pub use synth::generate_synthetic_dataset;
pub use train::{ground_truth_map, train, train_fixed_batch, StepLog, TrainLog, TrainOutput};
pub use viz::visualize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::loss::LossWeights;
use crate::network::{BackboneKind, NetworkConfig};
use crate::scalar::{real, Real};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    /// Every available frame; handy for overfit runs and smoke tests.
    All,
}

impl std::str::FromStr for SplitChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitChoice::Train),
            "val" => Ok(SplitChoice::Val),
            "all" => Ok(SplitChoice::All),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub data_root: PathBuf,
    pub splits_dir: PathBuf,
    pub split: SplitChoice,
    /// Class names mapped to ids by position; objects outside the list are
    /// not encoded ("Van counts as Car" is spelled `classes = Car,Van` minus
    /// the distinction, or give Van its own id).
    pub classes: Vec<String>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Cosine learning-rate decay toggle; constant LR when off.
    pub cosine_lr: bool,
    /// Global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
    /// Horizontal flip and contrast augmentation, each applied with
    /// probability 0.5 (contrast factor uniform in [1.0, 1.5]).
    pub augment: bool,
    /// Save a checkpoint every k epochs (0 = only the final one).
    pub checkpoint_every: usize,
    /// Evaluate on the val split every k epochs and keep the checkpoint
    /// with the best recognition (0 = never).
    pub eval_every: usize,
    /// Decode threshold used for validation/prediction.
    pub threshold: f64,
    pub nms_iou: Option<f64>,
    pub grid: GridSpec<T>,
    pub network: NetworkConfig,
    pub loss: LossWeights<T>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            data_root: PathBuf::new(),
            splits_dir: PathBuf::from("data/splits"),
            split: SplitChoice::Train,
            classes: vec!["Car".to_string()],
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            cosine_lr: false,
            grad_clip: None,
            augment: true,
            checkpoint_every: 50,
            eval_every: 0,
            threshold: 0.5,
            nms_iou: Some(0.3),
            grid: GridSpec::default(),
            network: NetworkConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse {value:?}")))
}

fn parse_pair<T: Real>(key: &str, value: &str) -> Result<[T; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("key {key}: expected two values")));
    }
    Ok([parse_num(key, parts[0])?, parse_num(key, parts[1])?])
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key {key}: expected a boolean"))),
    }
}

impl<T: Real> TrainConfig<T> {
    /// Apply one `key = value` assignment.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_root" => self.data_root = PathBuf::from(value),
            "splits_dir" => self.splits_dir = PathBuf::from(value),
            "split" => self.split = value.parse()?,
            "classes" => {
                self.classes = value.split(',').map(|c| c.trim().to_string()).collect();
                self.grid.num_classes = self.classes.len();
                self.network.num_classes = self.classes.len();
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "cosine_lr" => self.cosine_lr = parse_bool(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "off" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "augment" => self.augment = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "nms_iou" => {
                self.nms_iou = match value {
                    "off" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "network" => {
                self.network = match value {
                    "default" => NetworkConfig::default(),
                    "tiny_backbone" => NetworkConfig::with_tiny_backbone(),
                    "tiny" => NetworkConfig::tiny(),
                    other => {
                        return Err(Error::Config(format!("unknown network preset {other:?}")))
                    }
                };
                self.network.num_classes = self.classes.len();
            }
            "backbone" => {
                self.network.backbone = match value {
                    "mobilenet_v2_like" => BackboneKind::MobilenetV2Like,
                    "tiny_backbone" => BackboneKind::TinyBackbone,
                    other => return Err(Error::Config(format!("unknown backbone {other:?}"))),
                }
            }
            "input_size" => {
                let n: usize = parse_num(key, value)?;
                self.network.input_size = (n, n, 3);
            }
            "depthwise_k7" => self.network.depthwise_k7 = parse_bool(key, value)?,
            "ty_prior" => self.network.ty_prior = parse_num(key, value)?,
            "block_schedule" => {
                // e.g. "512:3,256:4,256:3,128:3"
                let mut schedule = Vec::new();
                for part in value.split(',') {
                    let (f, k) = part
                        .trim()
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("key {key}: want filters:kernel")))?;
                    schedule.push((parse_num(key, f)?, parse_num(key, k)?));
                }
                self.network.block_schedule = schedule;
            }
            "head_block" => {
                let (f, k) = value
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("key {key}: want filters:kernel")))?;
                self.network.head_block = (parse_num(key, f)?, parse_num(key, k)?);
            }
            "grid_size" => self.grid.s = parse_num(key, value)?,
            "x_range" => self.grid.x_range = parse_pair(key, value)?,
            "y_range" => self.grid.y_range = parse_pair(key, value)?,
            "z_range" => self.grid.z_range = parse_pair(key, value)?,
            "dim_max" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("key {key}: expected three values")));
                }
                self.grid.dim_max = [
                    parse_num(key, parts[0])?,
                    parse_num(key, parts[1])?,
                    parse_num(key, parts[2])?,
                ];
            }
            "lambda_obj" => self.loss.obj = parse_num(key, value)?,
            "lambda_noobj" => self.loss.noobj = parse_num(key, value)?,
            "lambda_class" => self.loss.class = parse_num(key, value)?,
            "lambda_iou" => self.loss.iou = parse_num(key, value)?,
            "lambda_yaw" => self.loss.yaw = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat config file: one `key = value` per line, `#` comments.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Fill `data_root` from `MONONEXT_DATA_ROOT` when unset.
    pub fn resolve_data_root(&mut self) {
        if self.data_root.as_os_str().is_empty() {
            if let Ok(root) = std::env::var("MONONEXT_DATA_ROOT") {
                self.data_root = PathBuf::from(root);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be ≥ 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("classes must not be empty".into()));
        }
        if self.grid.num_classes != self.classes.len()
            || self.network.num_classes != self.classes.len()
        {
            return Err(Error::Config(
                "grid/network num_classes must match the class list".into(),
            ));
        }
        self.grid.validate()?;
        self.network.validate(self.grid.s)?;
        let _: T = real(self.learning_rate);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(
            &path,
            "# comment\nepochs = 7\nlearning_rate = 3e-4\nnetwork = tiny   # preset\nclasses = Car,Van\nnms_iou = off\nx_range = -50, 50\n",
        )
        .unwrap();
        let cfg = TrainConfig::<f32>::from_file(&path).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.learning_rate, 3e-4);
        assert_eq!(cfg.classes, vec!["Car".to_string(), "Van".to_string()]);
        assert_eq!(cfg.network.num_classes, 2);
        assert_eq!(cfg.nms_iou, None);
        assert_eq!(cfg.grid.x_range, [-50.0, 50.0]);

        // Flag-style override wins over the file value.
        let mut cfg = cfg;
        cfg.apply_kv("epochs", "2").unwrap();
        assert_eq!(cfg.epochs, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = TrainConfig::<f32>::default();
        assert!(cfg.apply_kv("leaning_rate", "0.1").is_err());
    }

    #[test]
    fn validation_catches_mismatches() {
        let mut cfg = TrainConfig::<f32>::default();
        cfg.network = NetworkConfig::tiny();
        assert!(cfg.validate().is_ok());
        cfg.grid.num_classes = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_fallback_for_data_root() {
        let mut cfg = TrainConfig::<f32>::default();
        std::env::set_var("MONONEXT_DATA_ROOT", "/tmp/kitti-env");
        cfg.resolve_data_root();
        std::env::remove_var("MONONEXT_DATA_ROOT");
        assert_eq!(cfg.data_root, PathBuf::from("/tmp/kitti-env"));
    }
}
