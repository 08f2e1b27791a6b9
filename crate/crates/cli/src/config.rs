//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ncssl::augment::{AugmentKind, AugmentationSpec};
use ncssl::baselines::{AeConfig, SvddConfig};
use ncssl::data::SYNTH_MIN_WIDTH;
use ncssl::encoders::{EncoderConfig, EncoderKind};
use ncssl::ssl::{SslConfig, SslKind, VicregWeights, WmseParams};
use ncssl::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// Learning rates searched by convention; others are accepted with a warning.
pub const LR_CONVENTION: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Byol,
    Simsiam,
    BarlowTwins,
    Vicreg,
    Wmse,
    Autoencoder,
    DeepSvdd,
}

impl ModelKind {
    pub const SSL: [ModelKind; 5] = [
        ModelKind::Byol,
        ModelKind::Simsiam,
        ModelKind::BarlowTwins,
        ModelKind::Vicreg,
        ModelKind::Wmse,
    ];

    pub fn ssl(self) -> Option<SslKind> {
        match self {
            ModelKind::Byol => Some(SslKind::Byol),
            ModelKind::Simsiam => Some(SslKind::Simsiam),
            ModelKind::BarlowTwins => Some(SslKind::BarlowTwins),
            ModelKind::Vicreg => Some(SslKind::Vicreg),
            ModelKind::Wmse => Some(SslKind::Wmse),
            ModelKind::Autoencoder | ModelKind::DeepSvdd => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self.ssl() {
            Some(k) => k.name(),
            None if self == ModelKind::Autoencoder => "autoencoder",
            None => "deep_svdd",
        }
    }
}

/// Where the data comes from. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetRef {
    /// One or more CSV files with the same header, concatenated.
    Csv {
        paths: Vec<PathBuf>,
        schema: PathBuf,
        #[serde(default)]
        subsample: Option<f64>,
    },
    /// A dataset cache written by `ncssl preprocess`.
    Cache {
        path: PathBuf,
        #[serde(default)]
        subsample: Option<f64>,
    },
    Synthetic {
        n_normal: usize,
        n_attack: usize,
        features: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetRef {
    fn files(&self) -> Vec<&PathBuf> {
        match self {
            DatasetRef::Csv { paths, schema, .. } => paths.iter().chain(std::iter::once(schema)).collect(),
            DatasetRef::Cache { path, .. } => vec![path],
            DatasetRef::Synthetic { .. } => Vec::new(),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match self {
            DatasetRef::Csv { paths, schema, .. } => {
                paths.iter_mut().for_each(fix);
                fix(schema);
            }
            DatasetRef::Cache { path, .. } => fix(path),
            DatasetRef::Synthetic { .. } => {}
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    /// Applies to every model kind, including the baselines.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Fraction of the normal samples used for training.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    128
}
fn default_train_fraction() -> f64 {
    0.5
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            train_fraction: default_train_fraction(),
            precision: Precision::F32,
        }
    }
}

/// Loss and head hyperparameters of the SSL models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub embed_dim: usize,
    pub lambda_bt: f64,
    pub vicreg: VicregWeights,
    pub wmse: WmseParams,
    pub tau: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        let c = SslConfig::new(SslKind::Vicreg);
        Self {
            embed_dim: c.embed_dim,
            lambda_bt: c.lambda_bt,
            vicreg: c.vicreg,
            wmse: c.wmse,
            tau: c.tau,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetRef,
    pub model: ModelKind,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderConfig,
    #[serde(default = "default_augmentation")]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub training: TrainParams,
    #[serde(default)]
    pub loss: LossParams,
    #[serde(default)]
    pub autoencoder: AeConfig,
    #[serde(default)]
    pub svdd: SvddConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Run `i` uses seed `seed + i`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_encoder() -> EncoderConfig {
    EncoderConfig::new(EncoderKind::Mlp)
}
fn default_augmentation() -> AugmentationSpec {
    AugmentationSpec::new(AugmentKind::SwapNoise)
}
fn default_runs() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// A config with defaults everywhere except the dataset and model.
    pub fn new(dataset: DatasetRef, model: ModelKind) -> Self {
        Self {
            version: CONFIG_VERSION,
            name: default_name(),
            dataset,
            model,
            encoder: default_encoder(),
            augmentation: default_augmentation(),
            training: TrainParams::default(),
            loss: LossParams::default(),
            autoencoder: AeConfig::default(),
            svdd: SvddConfig::default(),
            runs: default_runs(),
            seed: 0,
            output_dir: default_output(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check_version()?;
        Ok(cfg)
    }

    /// Parses a file and resolves its dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn rebase(&mut self, dir: &Path) {
        self.dataset.rebase(dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn check_version(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_version()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(t.train_fraction > 0.0 && t.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1]",
                t.train_fraction
            )));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", t.lr)));
        }
        if !LR_CONVENTION.iter().any(|&c| (t.lr / c - 1.0).abs() < 1e-9) {
            log::warn!("learning rate {} is outside the usual grid {:?}", t.lr, LR_CONVENTION);
        }
        for f in self.dataset.files() {
            if !f.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        match &self.dataset {
            DatasetRef::Csv { paths, subsample, .. } => {
                if paths.is_empty() {
                    return Err(Error::Config("csv dataset lists no paths".into()));
                }
                check_fraction(*subsample)?;
            }
            DatasetRef::Cache { subsample, .. } => check_fraction(*subsample)?,
            DatasetRef::Synthetic {
                features, separation, ..
            } => {
                if *features < SYNTH_MIN_WIDTH || !(*separation >= 0.0) {
                    return Err(Error::Config(format!(
                        "synthetic data needs features >= {SYNTH_MIN_WIDTH} and separation >= 0"
                    )));
                }
            }
        }
        match self.ssl_config() {
            Some(ssl) => {
                ssl.validate()?;
                self.encoder.validate()?;
                self.augmentation.validate()?;
            }
            None => {
                if self.autoencoder.hidden.is_empty() || self.svdd.hidden.is_empty() {
                    return Err(Error::Config("baseline hidden widths must not be empty".into()));
                }
            }
        }
        Ok(())
    }

    pub fn ssl_config(&self) -> Option<SslConfig> {
        let kind = self.model.ssl()?;
        Some(SslConfig {
            kind,
            embed_dim: self.loss.embed_dim,
            lambda_bt: self.loss.lambda_bt,
            vicreg: self.loss.vicreg,
            wmse: self.loss.wmse,
            tau: self.loss.tau,
            lr: self.training.lr,
        })
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            lr: self.training.lr,
            ..self.autoencoder.clone()
        }
    }

    pub fn svdd_config(&self) -> SvddConfig {
        SvddConfig {
            lr: self.training.lr,
            ..self.svdd.clone()
        }
    }

    /// SHA-256 of the canonical (key-sorted) JSON form, ignoring
    /// `output_dir`. Field order in the source file does not matter.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        let mut text = String::new();
        canonical_json(&value, &mut text);
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directory of this experiment below `output_dir`.
    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-{}", self.name, &self.hash()[..12]))
    }
}

fn check_fraction(f: Option<f64>) -> Result<()> {
    match f {
        Some(v) if !(v > 0.0 && v <= 1.0) => Err(Error::Config(format!("subsample {v} outside (0, 1]"))),
        _ => Ok(()),
    }
}

fn canonical_json(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                canonical_json(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical_json(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}
