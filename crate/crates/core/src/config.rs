//! Run configuration: a TOML file whose sections mirror the subcommands.
//! Every field is optional; missing fields take the built-in defaults and
//! command-line flags are applied on top by the caller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captioner::{TrainConfig, Trainable};
use crate::cbs::{CaptionOptions, TagScope, DEFAULT_BEAM_SIZE, DEFAULT_MAX_GROUPS, DEFAULT_MAX_LEN};
use crate::converter::BiasPolicy;
use crate::error::{Error, Result};
use crate::microworld::WorldConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub gradcheck: GradcheckSection,
    pub world: WorldConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub converter_bias: bool,
    /// `offset` or `exact-mask`.
    pub bias_policy: String,
    pub delta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            feature_dim: m.feature_dim,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            converter_bias: m.converter_bias,
            bias_policy: "offset".into(),
            delta: 2.0,
        }
    }
}

impl ModelSection {
    pub fn policy(&self) -> Result<BiasPolicy> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::config("delta must be finite and non-negative"));
        }
        BiasPolicy::parse(&self.bias_policy, self.delta)
    }

    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            converter_bias: self.converter_bias,
            bias_policy: self.policy()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub converter_decay: f64,
    pub converter_only: bool,
    /// Words seen fewer times map to `<unk>`.
    pub min_count: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            converter_decay: t.converter_decay,
            converter_only: false,
            min_count: 1,
            seed: t.seed,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            clip_norm: self.clip_norm,
            converter_decay: self.converter_decay,
            trainable: if self.converter_only { Trainable::ConverterOnly } else { Trainable::All },
        };
        cfg.validate()?;
        if self.min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_size: usize,
    pub max_len: usize,
    pub article_fix: bool,
    pub constraints: bool,
    /// `novel` or `all`: which tags become constraints.
    pub scope: String,
    pub max_groups: usize,
    /// Worker threads for captioning; 0 = all available cores.
    pub threads: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
            article_fix: true,
            constraints: true,
            scope: "novel".into(),
            max_groups: DEFAULT_MAX_GROUPS,
            threads: 0,
        }
    }
}

impl DecodeSection {
    pub fn to_options(&self) -> Result<CaptionOptions> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::config("beam_size and max_len must be at least 1"));
        }
        if self.max_groups == 0 {
            return Err(Error::config("max_groups must be at least 1"));
        }
        let scope = match self.scope.as_str() {
            "novel" => TagScope::Novel,
            "all" => TagScope::All,
            other => return Err(Error::config(format!("unknown constraint scope '{other}' (expected novel or all)"))),
        };
        Ok(CaptionOptions {
            beam_size: self.beam_size,
            max_len: self.max_len,
            article_fix: self.article_fix,
            use_constraints: self.constraints,
            scope,
            max_groups: self.max_groups,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub seeds: u64,
    pub first_seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            seeds: 20,
            first_seed: 0,
            tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            Error::config(format!("{origin}: {msg}"))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Checks every section; called once flags have been applied.
    pub fn validate(&self) -> Result<()> {
        self.model.to_model_config()?;
        self.train.to_train_config()?;
        self.decode.to_options()?;
        if self.gradcheck.seeds == 0 || !(self.gradcheck.tolerance > 0.0 && self.gradcheck.tolerance.is_finite()) {
            return Err(Error::config("gradcheck needs at least one seed and a positive tolerance"));
        }
        self.world.validate()?;
        Ok(())
    }
}
