use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DEFAULT_THRESHOLD;
use crate::error::{Error, Result};
use crate::losses::EmbeddingDistance;
use crate::model::{BackbonePreset, NetConfig, NetworkKind};
use crate::streams::{RgbNorm, StreamSettings};

/// Hyperparameters of one training run. Loadable from a TOML key-value file;
/// missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkKind,
    pub backbone: BackbonePreset,
    pub context_backbone: BackbonePreset,
    /// Side of the square network input.
    pub input_size: usize,
    pub k_train: usize,
    pub k_test: usize,
    pub rgb_snippet_len: usize,
    pub flow_snippet_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub partial_bn: bool,
    pub use_emb: bool,
    pub emb_distance: EmbeddingDistance,
    pub threshold: f64,
    /// Validate every this many epochs (and after the last); 0 disables validation.
    pub validate_every: usize,
    pub rgb_norm: RgbNorm,
    /// Optional safetensors file with externally trained weights, matched by name.
    pub init_weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkKind::RgbBc,
            backbone: BackbonePreset::default(),
            context_backbone: BackbonePreset::default(),
            input_size: 32,
            k_train: 3,
            k_test: 25,
            rgb_snippet_len: 1,
            flow_snippet_len: 5,
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            lr_drop_epochs: vec![20],
            lr_drop_factor: 10.0,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            partial_bn: true,
            use_emb: true,
            emb_distance: EmbeddingDistance::Euclidean,
            threshold: DEFAULT_THRESHOLD,
            validate_every: 1,
            rgb_norm: RgbNorm::default(),
            init_weights: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Short SHA-256 digest of the serialized config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_size", self.input_size),
            ("k_train", self.k_train),
            ("k_test", self.k_test),
            ("flow_snippet_len", self.flow_snippet_len),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.rgb_snippet_len != 1 {
            return Err(Error::invalid("rgb_snippet_len must be 1"));
        }
        if self.input_size < 8 {
            return Err(Error::invalid("input_size must be at least 8"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return Err(Error::invalid("lr and lr_drop_factor must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Step schedule: `lr / factor^(number of drop epochs <= epoch)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.lr_drop_factor.powi(drops as i32)
    }

    pub fn snippet_len(&self, stream: crate::streams::StreamKind) -> usize {
        match stream {
            crate::streams::StreamKind::FlowB => self.flow_snippet_len,
            _ => self.rgb_snippet_len,
        }
    }

    pub fn net_config(&self, embedding_dim: usize) -> NetConfig {
        NetConfig {
            kind: self.network,
            backbone: self.backbone.clone(),
            context_backbone: self.context_backbone.clone(),
            embedding_dim,
            flow_snippet_len: self.flow_snippet_len,
        }
    }

    pub fn stream_settings(&self) -> StreamSettings {
        StreamSettings {
            out_size: self.input_size,
            norm: self.rgb_norm,
        }
    }
}
