//! Visual-to-word converter and embedding-table assembly.
//!
//! Four independent affine maps turn a category prototype into its singular
//! and plural input embeddings (rows of `U`) and output embeddings (rows of
//! `M`). Text-word rows of `U`, `M` and `b_out` are free parameters; category
//! rows are always recomputed from the converter, so the tables are a pure
//! function of (converter, prototypes, word parameters, bias policy).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CategoryRecord, CategoryStatus};
use crate::model::CaptionModel;
use crate::numerics::{matvec_into, Matrix, SeededRng, Vector};
use crate::vocab::{Number, TokenKind, Vocabulary};

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    /// Weights and biases uniform in `[-bound, bound]`; bias stays zero when
    /// `with_bias` is false.
    pub fn uniform(out_dim: usize, in_dim: usize, bound: f64, with_bias: bool, rng: &mut SeededRng) -> Self {
        let mut a = Affine::zeros(out_dim, in_dim);
        for w in a.weight.as_mut_slice() {
            *w = rng.uniform_range(-bound, bound);
        }
        if with_bias {
            for b in a.bias.iter_mut() {
                *b = rng.uniform_range(-bound, bound);
            }
        }
        a
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "affine map expects input of length {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut out = self.bias.clone().into_vec();
        crate::numerics::matvec_add_into(&self.weight, x, &mut out);
        Ok(Vector::from_vec(out))
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        matvec_into(&self.weight, x, out);
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o += b;
        }
    }
}

/// The four maps `f_u^s, f_u^p, f_m^s, f_m^p`; they share no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Converter {
    pub input_singular: Affine,
    pub input_plural: Affine,
    pub output_singular: Affine,
    pub output_plural: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryEmbedding {
    pub input_singular: Vector,
    pub input_plural: Vector,
    pub output_singular: Vector,
    pub output_plural: Vector,
}

impl Converter {
    /// Uniform initialization in `[-1/sqrt(d_v), 1/sqrt(d_v)]`.
    pub fn init(feature_dim: usize, embed_dim: usize, hidden_dim: usize, with_bias: bool, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        Converter {
            input_singular: Affine::uniform(embed_dim, feature_dim, bound, with_bias, rng),
            input_plural: Affine::uniform(embed_dim, feature_dim, bound, with_bias, rng),
            output_singular: Affine::uniform(hidden_dim, feature_dim, bound, with_bias, rng),
            output_plural: Affine::uniform(hidden_dim, feature_dim, bound, with_bias, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.input_singular.in_dim()
    }

    pub fn embed_category(&self, prototype: &[f64]) -> Result<CategoryEmbedding> {
        Ok(CategoryEmbedding {
            input_singular: self.input_singular.apply(prototype)?,
            input_plural: self.input_plural.apply(prototype)?,
            output_singular: self.output_singular.apply(prototype)?,
            output_plural: self.output_plural.apply(prototype)?,
        })
    }

    pub fn maps(&self) -> [&Affine; 4] {
        [
            &self.input_singular,
            &self.input_plural,
            &self.output_singular,
            &self.output_plural,
        ]
    }
}

/// Free parameters of the word tables: text rows plus trainable output
/// biases of the categories seen in training (`b_singular[c]`, `b_plural[c]`
/// for category index `c`).
#[derive(Clone, Debug, PartialEq)]
pub struct WordParams {
    pub u_text: Matrix,
    pub m_text: Matrix,
    pub b_text: Vector,
    pub b_singular: Vector,
    pub b_plural: Vector,
}

impl WordParams {
    pub fn known_categories(&self) -> usize {
        self.b_singular.len()
    }
}

/// Output bias given to categories added after training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum BiasPolicy {
    /// −∞: novel tokens have probability zero unless a constraint forces them.
    ExactMask,
    /// `min(b_text) − delta`.
    Offset { delta: f64 },
}

impl Default for BiasPolicy {
    fn default() -> Self {
        BiasPolicy::Offset { delta: 2.0 }
    }
}

impl BiasPolicy {
    pub fn novel_bias(&self, b_text: &[f64]) -> f64 {
        match *self {
            BiasPolicy::ExactMask => f64::NEG_INFINITY,
            BiasPolicy::Offset { delta } => {
                b_text.iter().copied().fold(f64::INFINITY, f64::min) - delta
            }
        }
    }

    pub fn parse(name: &str, delta: f64) -> Result<Self> {
        match name {
            "exact-mask" => Ok(BiasPolicy::ExactMask),
            "offset" => Ok(BiasPolicy::Offset { delta }),
            other => Err(Error::config(format!(
                "unknown bias policy '{other}' (expected exact-mask or offset)"
            ))),
        }
    }
}

/// `U` (V × d1), `M` (V × d2) and `b_out` (V), rows in vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub u: Matrix,
    pub m: Matrix,
    pub b_out: Vector,
    pub text_end: usize,
}

impl EmbeddingTables {
    pub fn vocab_size(&self) -> usize {
        self.b_out.len()
    }
}

pub fn assemble_tables(
    vocab: &Vocabulary,
    converter: &Converter,
    categories: &[CategoryRecord],
    words: &WordParams,
    policy: BiasPolicy,
) -> Result<EmbeddingTables> {
    let text_end = vocab.text_end();
    if words.u_text.rows() != text_end || words.m_text.rows() != text_end || words.b_text.len() != text_end {
        return Err(Error::shape(format!(
            "text parameters have {}/{}/{} rows for a text block of {text_end}",
            words.u_text.rows(),
            words.m_text.rows(),
            words.b_text.len()
        )));
    }
    if vocab.category_count() != categories.len() {
        return Err(Error::data(format!(
            "vocabulary has {} categories but {} records were supplied",
            vocab.category_count(),
            categories.len()
        )));
    }
    let d1 = words.u_text.cols();
    let d2 = words.m_text.cols();
    let embeddings = categories
        .iter()
        .map(|c| {
            if c.prototype.is_empty() {
                return Err(Error::data(format!("category '{}' has no prototype", c.name)));
            }
            converter.embed_category(&c.prototype)
        })
        .collect::<Result<Vec<_>>>()?;
    let novel_bias = policy.novel_bias(&words.b_text);

    let v = vocab.len();
    let mut u = Matrix::zeros(v, d1);
    let mut m = Matrix::zeros(v, d2);
    let mut b = Vector::zeros(v);
    for (i, entry) in vocab.entries().iter().enumerate() {
        match entry.kind {
            TokenKind::Special(_) | TokenKind::Text => {
                u.row_mut(i).copy_from_slice(words.u_text.row(i));
                m.row_mut(i).copy_from_slice(words.m_text.row(i));
                b[i] = words.b_text[i];
            }
            TokenKind::Category { category, number } => {
                let e = &embeddings[category];
                let (ur, mr, trained) = match number {
                    Number::Singular => (&e.input_singular, &e.output_singular, &words.b_singular),
                    Number::Plural => (&e.input_plural, &e.output_plural, &words.b_plural),
                };
                u.row_mut(i).copy_from_slice(ur);
                m.row_mut(i).copy_from_slice(mr);
                b[i] = trained.get(category).copied().unwrap_or(novel_bias);
            }
        }
    }
    Ok(EmbeddingTables { u, m, b_out: b, text_end })
}

/// Adds novel categories to a trained model without touching any trainable
/// parameter. The returned model's vocabulary gains one singular and one
/// plural token per category, appended after every existing token.
pub fn expand_vocabulary(model: &CaptionModel, new_categories: &[CategoryRecord]) -> Result<CaptionModel> {
    if new_categories.is_empty() {
        return Ok(model.clone());
    }
    let mut names: HashSet<&str> = model.categories.iter().map(|c| c.name.as_str()).collect();
    for c in new_categories {
        if !names.insert(c.name.as_str()) {
            return Err(Error::data(format!("category '{}' is already in the vocabulary", c.name)));
        }
        if c.prototype.len() != model.config.feature_dim {
            return Err(Error::shape(format!(
                "category '{}' has prototype dimension {}, model expects {}",
                c.name,
                c.prototype.len(),
                model.config.feature_dim
            )));
        }
        if c.sample_count == 0 {
            return Err(Error::data(format!("category '{}' has no samples", c.name)));
        }
        if !c.prototype.is_finite() {
            return Err(Error::non_finite(format!("prototype of '{}'", c.name)));
        }
    }
    let names: Vec<_> = new_categories.iter().map(CategoryRecord::names).collect();
    let vocab = model.vocab.with_categories(&names)?;
    let mut expanded = model.clone();
    expanded.vocab = vocab;
    expanded.categories.extend(new_categories.iter().cloned().map(|mut c| {
        c.status = CategoryStatus::Novel;
        c
    }));
    Ok(expanded)
}
