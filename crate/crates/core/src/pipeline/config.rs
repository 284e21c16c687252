use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::CorpusConfig;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::losses::DcNorm;
use crate::neural::{ArchConfig, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lambda: f64,
    pub alpha: f64,
    pub batch_utts: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Epochs before early stopping may trigger; the embedding stage always
    /// runs exactly this many.
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub early_stop_rel: f64,
    pub seed: u64,
    pub dc_norm: DcNorm,
    pub kmeans_max_iter: usize,
    /// Cap on worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Dc,
            lambda: 0.05,
            alpha: 0.1,
            batch_utts: 16,
            lr_init: 0.0005,
            lr_decay: 0.7,
            min_epochs: 30,
            max_epochs: 40,
            early_stop_rel: 0.01,
            seed: 1,
            dc_norm: DcNorm::Bins,
            kmeans_max_iter: 100,
            jobs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha {} must be ≥ 0", self.alpha)));
        }
        if self.batch_utts == 0 {
            return Err(Error::InvalidConfig("batch_utts must be positive".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr_init {} must be positive", self.lr_init)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("lr_decay {} not in (0, 1]", self.lr_decay)));
        }
        if self.min_epochs == 0 || self.max_epochs < self.min_epochs {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min_epochs ({}) <= max_epochs ({})",
                self.min_epochs, self.max_epochs
            )));
        }
        if self.early_stop_rel < 0.0 {
            return Err(Error::InvalidConfig("early_stop_rel must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    /// Joint checkpoint the discriminative fine-tune starts from.
    pub dl_init_lambda: f64,
    /// Also score K-means on the embedding-stage checkpoint.
    pub dc_kmeans: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            lambdas: vec![0.01, 0.05, 0.1],
            dl_init_lambda: 0.05,
            dc_kmeans: true,
        }
    }
}

/// Everything a run depends on; serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub corpus: CorpusConfig,
    pub stft: StftConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small networks and a short schedule that fit a single CPU core:
    /// a higher initial learning rate and fewer epochs than the full recipe.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            corpus: CorpusConfig::default(),
            stft: StftConfig::default(),
            arch: ArchConfig::desk(),
            train: TrainConfig {
                lr_init: 0.002,
                min_epochs: 12,
                max_epochs: 20,
                ..TrainConfig::default()
            },
            experiment: ExperimentConfig::default(),
        }
    }

    /// Full-size networks with the unmodified training recipe. Expect days
    /// of CPU time.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            arch: ArchConfig::paper(),
            train: TrainConfig::default(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.stft.validate(self.corpus.sample_rate)?;
        self.arch.validate()?;
        let bins = self.stft.num_bins(self.corpus.sample_rate);
        if bins != self.arch.bins {
            return Err(Error::InvalidConfig(format!(
                "STFT yields {bins} bins but the networks expect {}",
                self.arch.bins
            )));
        }
        self.train.validate()?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one seed".into()));
        }
        if !self.experiment.lambdas.contains(&self.experiment.dl_init_lambda) {
            return Err(Error::InvalidConfig(format!(
                "dl_init_lambda {} is not among the swept lambdas",
                self.experiment.dl_init_lambda
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let preset = toml::from_str::<toml::Table>(text)
            .map_err(|e| Error::ConfigParse(e.to_string()))?
            .get("preset")
            .and_then(|v| v.as_str().map(str::to_owned));
        let base = match preset.as_deref() {
            Some("paper") => Self::paper(),
            _ => Self::desk(),
        };
        let mut value = toml::Value::try_from(&base).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        merge(&mut value, user);
        value.try_into().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies a `section.key=value` override. The value must parse as the
    /// type already held at that key.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::ConfigParse(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::ConfigParse(format!("unknown config key {key:?}")))?;
        }
        let bad = |want: &str| Error::ConfigParse(format!("{key} expects {want}, got {raw:?}"));
        *slot = match slot {
            toml::Value::Integer(_) => toml::Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
            toml::Value::Float(_) => toml::Value::Float(raw.parse().map_err(|_| bad("a number"))?),
            toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
            toml::Value::String(_) => toml::Value::String(raw.trim_matches('"').to_string()),
            toml::Value::Array(_) => {
                let wrapped: toml::Table =
                    toml::from_str(&format!("v = {raw}")).map_err(|_| bad("an array"))?;
                wrapped["v"].clone()
            }
            _ => return Err(Error::ConfigParse(format!("{key} is a section, not a value"))),
        };
        *self = root.try_into().map_err(|e: toml::de::Error| Error::ConfigParse(format!("{key}: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
