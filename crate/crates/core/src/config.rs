//! Model and training hyperparameters, and the flat JSON config file.
//!
//! A config file is a single JSON object whose keys are the field names of
//! [`ModelConfig`] and [`TrainConfig`]. Omitted keys take their defaults;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::framing::FramingSpec;

/// Divisor inside the attention softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(d / h)`
    PerHead,
    /// `sqrt(d)`
    ModelWidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub overlap: usize,
    pub encoder_channels: usize,
    pub tstm_channels: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ddb_layers: usize,
    pub ddb_dilations: Vec<usize>,
    pub prelu_init: f64,
    pub norm_eps: f64,
    pub sample_rate: u32,
    pub attention_scale: AttentionScale,
    pub bidirectional_gru: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_size: 512,
            overlap: 256,
            encoder_channels: 64,
            tstm_channels: 32,
            n_blocks: 4,
            n_heads: 4,
            ddb_layers: 4,
            ddb_dilations: vec![1, 2, 4, 8],
            prelu_init: 0.25,
            norm_eps: 1e-5,
            sample_rate: 16_000,
            attention_scale: AttentionScale::PerHead,
            bidirectional_gru: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and examples: 16 encoder channels,
    /// 8 transformer channels, 2 blocks, 64-sample frames, 2 heads.
    pub fn tiny() -> Self {
        ModelConfig {
            frame_size: 64,
            overlap: 32,
            encoder_channels: 16,
            tstm_channels: 8,
            n_blocks: 2,
            n_heads: 2,
            ..Default::default()
        }
    }

    pub fn framing(&self) -> FramingSpec {
        FramingSpec {
            frame_size: self.frame_size,
            overlap: self.overlap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.framing().validate()?;
        if !self.frame_size.is_multiple_of(2) {
            return Err(Error::config("frame_size", "must be even"));
        }
        for (name, v) in [
            ("encoder_channels", self.encoder_channels),
            ("tstm_channels", self.tstm_channels),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("ddb_layers", self.ddb_layers),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.encoder_channels != 2 * self.tstm_channels {
            return Err(Error::config(
                "encoder_channels",
                format!("must be twice tstm_channels ({})", self.tstm_channels),
            ));
        }
        if !self.tstm_channels.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "n_heads",
                format!("must divide tstm_channels ({})", self.tstm_channels),
            ));
        }
        if self.ddb_dilations.len() != self.ddb_layers || self.ddb_dilations.contains(&0) {
            return Err(Error::config(
                "ddb_dilations",
                format!("need {} positive dilations", self.ddb_layers),
            ));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("norm_eps", "must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the spectral loss in the combined loss.
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub num_warmups: usize,
    /// Width constant of the warmup formula only.
    pub d_model: usize,
    pub lr_decay: f64,
    pub decay_every_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps (overrides `epochs`).
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub fft_size: usize,
    pub fft_hop: usize,
    pub seed: u64,
    /// Synthetic corpus used when no data directory is given.
    pub synth_clips: usize,
    pub synth_samples: usize,
    pub synth_snr_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.2,
            k1: 0.2,
            k2: 4e-4,
            num_warmups: 4000,
            d_model: 64,
            lr_decay: 0.98,
            decay_every_epochs: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            epochs: 100,
            max_steps: None,
            batch_size: 1,
            segment_seconds: 4.0,
            fft_size: 512,
            fft_hop: 256,
            seed: 0,
            synth_clips: 4,
            synth_samples: 16_000,
            synth_snr_db: 0.0,
        }
    }
}

impl TrainConfig {
    /// Overfit setting for [`ModelConfig::tiny`]: 300 steps on four
    /// 1024-sample clips at 0 dB, warmup 100, STFT sized to the 64-sample frame.
    pub fn tiny() -> Self {
        TrainConfig {
            num_warmups: 100,
            max_steps: Some(300),
            fft_size: 64,
            fft_hop: 32,
            synth_clips: 4,
            synth_samples: 1024,
            synth_snr_db: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        for (name, v) in [
            ("num_warmups", self.num_warmups),
            ("d_model", self.d_model),
            ("decay_every_epochs", self.decay_every_epochs),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config("fft_size", "must be a power of two"));
        }
        if self.fft_hop == 0 || self.fft_hop > self.fft_size {
            return Err(Error::config("fft_hop", "must satisfy 0 < hop <= fft_size"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta1", "betas must lie in [0, 1)"));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::config("segment_seconds", "must be positive"));
        }
        Ok(())
    }
}

/// Both halves of a flat config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn field_names<S: Serialize>(v: &S) -> Vec<String> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(obj) = value else {
            return Err(Error::config("<root>", "config must be a JSON object"));
        };
        let model_keys = field_names(&ModelConfig::default());
        let train_keys = field_names(&TrainConfig::default());
        let (mut model, mut train) = (Map::new(), Map::new());
        for (k, v) in obj {
            if model_keys.contains(&k) {
                model.insert(k, v);
            } else if train_keys.contains(&k) {
                train.insert(k, v);
            } else {
                return Err(Error::config(k, "unknown key"));
            }
        }
        let model: ModelConfig =
            serde_json::from_value(Value::Object(model)).map_err(|e| Error::config("model", e.to_string()))?;
        let train: TrainConfig =
            serde_json::from_value(Value::Object(train)).map_err(|e| Error::config("train", e.to_string()))?;
        model.validate()?;
        train.validate()?;
        Ok(RunConfig { model, train })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut m = match serde_json::to_value(&self.model) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if let Ok(Value::Object(t)) = serde_json::to_value(&self.train) {
            m.extend(t);
        }
        serde_json::to_string_pretty(&Value::Object(m)).unwrap_or_default()
    }
}
