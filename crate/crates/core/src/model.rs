use serde::{Deserialize, Serialize};

use crate::captioner::CaptionerParams;
use crate::converter::{assemble_tables, BiasPolicy, Converter, EmbeddingTables, WordParams};
use crate::error::{Error, Result};
use crate::features::{CategoryRecord, CategoryStatus};
use crate::numerics::{Matrix, SeededRng, Vector};
use crate::vocab::{CategoryName, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    /// Also the output-embedding width: logits are `M h + b_out`.
    pub hidden_dim: usize,
    pub converter_bias: bool,
    pub bias_policy: BiasPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 32,
            embed_dim: 64,
            hidden_dim: 64,
            converter_bias: true,
            bias_policy: BiasPolicy::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if let BiasPolicy::Offset { delta } = self.bias_policy {
            if !(delta.is_finite() && delta >= 0.0) {
                return Err(Error::config(format!("bias offset {delta} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub captioner: CaptionerParams,
    pub words: WordParams,
    pub converter: Converter,
}

macro_rules! param_blocks {
    ($self:ident, $as:ident) => {
        vec![
            ("cell.w_input_z", $self.captioner.cell.w_input_z.$as()),
            ("cell.w_input_r", $self.captioner.cell.w_input_r.$as()),
            ("cell.w_input_c", $self.captioner.cell.w_input_c.$as()),
            ("cell.w_image_z", $self.captioner.cell.w_image_z.$as()),
            ("cell.w_image_r", $self.captioner.cell.w_image_r.$as()),
            ("cell.w_image_c", $self.captioner.cell.w_image_c.$as()),
            ("cell.u_z", $self.captioner.cell.u_z.$as()),
            ("cell.u_r", $self.captioner.cell.u_r.$as()),
            ("cell.u_c", $self.captioner.cell.u_c.$as()),
            ("cell.b_z", $self.captioner.cell.b_z.$as()),
            ("cell.b_r", $self.captioner.cell.b_r.$as()),
            ("cell.b_c", $self.captioner.cell.b_c.$as()),
            ("init.weight", $self.captioner.init.weight.$as()),
            ("init.bias", $self.captioner.init.bias.$as()),
            ("words.u_text", $self.words.u_text.$as()),
            ("words.m_text", $self.words.m_text.$as()),
            ("words.b_text", $self.words.b_text.$as()),
            ("words.b_singular", $self.words.b_singular.$as()),
            ("words.b_plural", $self.words.b_plural.$as()),
            ("converter.input_singular.weight", $self.converter.input_singular.weight.$as()),
            ("converter.input_singular.bias", $self.converter.input_singular.bias.$as()),
            ("converter.input_plural.weight", $self.converter.input_plural.weight.$as()),
            ("converter.input_plural.bias", $self.converter.input_plural.bias.$as()),
            ("converter.output_singular.weight", $self.converter.output_singular.weight.$as()),
            ("converter.output_singular.bias", $self.converter.output_singular.bias.$as()),
            ("converter.output_plural.weight", $self.converter.output_plural.weight.$as()),
            ("converter.output_plural.bias", $self.converter.output_plural.bias.$as()),
        ]
    };
}

impl ModelParams {
    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        param_blocks!(self, as_slice)
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        param_blocks!(self, as_mut_slice)
    }

    /// `(name, rows, cols)` per block, in [`ModelParams::blocks`] order.
    pub fn block_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let shapes: Vec<(&'static str, (usize, usize))> = param_blocks!(self, shape);
        shapes.into_iter().map(|(n, (r, c))| (n, r, c)).collect()
    }

    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, b) in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn is_converter_block(name: &str) -> bool {
        name.starts_with("converter.")
    }
}

/// A captioner together with its vocabulary and category records.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Category `i` owns the category tokens with index `i`; known categories
    /// come first.
    pub categories: Vec<CategoryRecord>,
    pub params: ModelParams,
}

impl CaptionModel {
    /// Fresh untrained model over `vocab`, whose categories must be exactly
    /// `categories` (all known).
    pub fn init(config: ModelConfig, vocab: Vocabulary, categories: Vec<CategoryRecord>, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.category_count() != categories.len() {
            return Err(Error::data("vocabulary and category list disagree"));
        }
        for c in &categories {
            if c.prototype.len() != config.feature_dim {
                return Err(Error::shape(format!(
                    "category '{}' has prototype dimension {}, config says {}",
                    c.name,
                    c.prototype.len(),
                    config.feature_dim
                )));
            }
        }
        let categories: Vec<CategoryRecord> = categories
            .into_iter()
            .map(|mut c| {
                c.status = CategoryStatus::Known;
                c
            })
            .collect();
        let rng = SeededRng::new(seed);
        let captioner = CaptionerParams::init(
            config.embed_dim,
            config.feature_dim,
            config.hidden_dim,
            &mut rng.substream(1),
        );
        let converter = Converter::init(
            config.feature_dim,
            config.embed_dim,
            config.hidden_dim,
            config.converter_bias,
            &mut rng.substream(2),
        );
        let mut r = rng.substream(3);
        let t = vocab.text_end();
        let k = categories.len();
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> { (0..n).map(|_| r.uniform_range(-bound, bound)).collect() };
        let words = WordParams {
            u_text: Matrix::from_vec(t, config.embed_dim, uniform(t * config.embed_dim, 1.0 / (config.embed_dim as f64).sqrt()))?,
            m_text: Matrix::from_vec(t, config.hidden_dim, uniform(t * config.hidden_dim, 1.0 / (config.hidden_dim as f64).sqrt()))?,
            b_text: Vector::from_vec(uniform(t, 0.1)),
            b_singular: Vector::from_vec(uniform(k, 0.1)),
            b_plural: Vector::from_vec(uniform(k, 0.1)),
        };
        Ok(CaptionModel {
            config,
            vocab,
            categories,
            params: ModelParams {
                captioner,
                words,
                converter,
            },
        })
    }

    pub fn tables(&self) -> Result<EmbeddingTables> {
        self.tables_with(self.config.bias_policy)
    }

    pub fn tables_with(&self, policy: BiasPolicy) -> Result<EmbeddingTables> {
        assemble_tables(
            &self.vocab,
            &self.params.converter,
            &self.categories,
            &self.params.words,
            policy,
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn known_categories(&self) -> usize {
        self.params.words.known_categories()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn category_names(&self) -> Vec<CategoryName> {
        self.categories.iter().map(CategoryRecord::names).collect()
    }

    pub fn is_novel_category(&self, category: usize) -> bool {
        category >= self.known_categories()
    }

    /// Structural consistency between vocabulary, categories and parameters.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.vocab.category_count() != self.categories.len() {
            return Err(Error::data("vocabulary and category list disagree"));
        }
        let known = self.known_categories();
        if self.params.words.b_plural.len() != known || known > self.categories.len() {
            return Err(Error::data("category bias blocks do not match the category list"));
        }
        for (i, c) in self.categories.iter().enumerate() {
            let want = if i < known { CategoryStatus::Known } else { CategoryStatus::Novel };
            if c.status != want {
                return Err(Error::data(format!("category '{}' has status {:?}", c.name, c.status)));
            }
        }
        if !self.params.is_finite() {
            return Err(Error::non_finite("model parameters"));
        }
        self.tables()?;
        Ok(())
    }
}
