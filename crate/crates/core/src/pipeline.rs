//! Glue between files, training, expansion and decoding.

use crate::captioner::{train, TrainConfig, TrainingExample};
use crate::cbs::{caption_image, Caption, CaptionOptions, Decoder};
use crate::converter::{expand_vocabulary, BiasPolicy, EmbeddingTables};
use crate::error::{Error, Result};
use crate::features::{compute_prototype, CategoryRecord, CategoryStatus, FeatureEntry, ImageRecord};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::SeededRng;
use crate::vocab::{TokenId, TokenKind, Vocabulary, EOS};

/// Longest training sequence, in predicted tokens (`<eos>` included).
pub const MAX_TRAIN_TOKENS: usize = 20;

/// Turns every caption of every record into a training sequence. Captions
/// longer than `max_tokens` predicted tokens are cut (keeping `<eos>`);
/// the number of cut captions is returned and logged.
pub fn prepare_examples(
    vocab: &Vocabulary,
    records: &[ImageRecord],
    max_tokens: usize,
) -> Result<(Vec<TrainingExample>, usize)> {
    if max_tokens < 1 {
        return Err(Error::config("max_tokens must be at least 1"));
    }
    let mut out = Vec::new();
    let mut truncated = 0;
    for r in records {
        for c in &r.captions {
            let mut tokens = vocab
                .tokenize(c)
                .map_err(|e| Error::data(format!("image '{}': {e}", r.image_id)))?;
            if tokens.len() - 1 > max_tokens {
                tokens.truncate(max_tokens);
                tokens.push(EOS);
                truncated += 1;
            }
            out.push(TrainingExample {
                feature: r.feature.clone(),
                tokens,
            });
        }
    }
    if truncated > 0 {
        log::warn!("{truncated} caption(s) longer than {max_tokens} tokens were truncated");
    }
    Ok((out, truncated))
}

/// Builds the vocabulary from training captions, initialises a model and
/// trains it.
pub fn train_from_records(
    records: &[ImageRecord],
    categories: Vec<CategoryRecord>,
    config: ModelConfig,
    train_cfg: &TrainConfig,
    min_count: usize,
) -> Result<(CaptionModel, Vec<f64>)> {
    let names: Vec<_> = categories.iter().map(CategoryRecord::names).collect();
    let captions: Vec<&str> = records.iter().flat_map(|r| r.captions.iter().map(String::as_str)).collect();
    let vocab = Vocabulary::build(&captions, &names, min_count)?;
    let model = CaptionModel::init(config, vocab, categories, train_cfg.seed)?;
    let (examples, _) = prepare_examples(&model.vocab, records, MAX_TRAIN_TOKENS)?;
    train(&model, &examples, train_cfg)
}

/// Category records from feature-file entries (prototype = sample mean).
pub fn categories_from_entries(entries: &[FeatureEntry], status: CategoryStatus) -> Result<Vec<CategoryRecord>> {
    entries
        .iter()
        .map(|e| {
            Ok(CategoryRecord {
                name: e.name.clone(),
                singular: e.singular.clone(),
                plural: e.plural.clone(),
                prototype: compute_prototype(&e.samples, false)?,
                sample_count: e.samples.len(),
                status,
            })
        })
        .collect()
}

pub fn expand_with_entries(model: &CaptionModel, entries: &[FeatureEntry]) -> Result<CaptionModel> {
    expand_vocabulary(model, &categories_from_entries(entries, CategoryStatus::Novel)?)
}

/// Captions every record, sorted by image id. Images are decoded on up to
/// `threads` worker threads; the result does not depend on the count.
pub fn caption_records(
    decoder: &Decoder<'_>,
    records: &[ImageRecord],
    opts: &CaptionOptions,
    threads: usize,
) -> Result<Vec<(String, Caption)>> {
    let mut order: Vec<&ImageRecord> = records.iter().collect();
    order.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let threads = threads.clamp(1, order.len().max(1));
    let chunk = order.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<(String, Caption)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = order
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|r| Ok((r.image_id.clone(), caption_image(decoder, r, opts)?)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::data("caption worker panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(order.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// `image_id \t caption \t logprob \t satisfied groups` lines. Satisfied
/// groups are listed as `{i,j}/n` (indices out of n groups), or `-` without
/// constraints.
pub fn format_captions(captions: &[(String, Caption)]) -> String {
    let mut out = String::new();
    for (id, c) in captions {
        let groups = if c.constraints.is_empty() {
            "-".to_string()
        } else {
            let list: Vec<String> = c.satisfied.iter().map(usize::to_string).collect();
            format!("{{{}}}/{}", list.join(","), c.constraints.len())
        };
        out.push_str(&format!("{id}\t{}\t{:.6}\t{groups}\n", c.text, c.logprob));
    }
    out
}

/// Parses the first two columns of a caption file.
pub fn parse_caption_lines(text: &str, path: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            match (cols.next(), cols.next()) {
                (Some(id), Some(cap)) if !id.is_empty() => Ok((id.to_string(), cap.to_string())),
                _ => Err(Error::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    message: "expected 'image_id<TAB>caption'".into(),
                }),
            }
        })
        .collect()
}

/// Tables whose novel-category U/M rows are replaced by Gaussian draws with
/// the per-table mean and standard deviation of the trained rows (text and
/// known categories). Biases follow `policy` as usual.
pub fn random_novel_rows(model: &CaptionModel, policy: BiasPolicy, seed: u64) -> Result<EmbeddingTables> {
    let mut tables = model.tables_with(policy)?;
    let novel_rows: Vec<usize> = model
        .vocab
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, TokenKind::Category { category, .. } if model.is_novel_category(category)))
        .map(|(i, _)| i)
        .collect();
    let trained: Vec<usize> = (3..model.vocab_size()).filter(|i| !novel_rows.contains(i)).collect();
    let rng = SeededRng::new(seed);
    for (k, table) in [&mut tables.u, &mut tables.m].into_iter().enumerate() {
        let vals: Vec<f64> = trained.iter().flat_map(|&i| table.row(i).to_vec()).collect();
        if vals.is_empty() {
            return Err(Error::data("no trained rows to match"));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        let mut r = rng.substream(k as u64);
        for &i in &novel_rows {
            for v in table.row_mut(i) {
                *v = mean + sd * r.normal();
            }
        }
    }
    Ok(tables)
}

/// Share of captions that contain any novel-category token.
pub fn novel_emission_rate(model: &CaptionModel, captions: &[(String, Caption)]) -> f64 {
    if captions.is_empty() {
        return 0.0;
    }
    let is_novel = |t: &TokenId| {
        matches!(model.vocab.entry(*t).map(|e| e.kind),
            Some(TokenKind::Category { category, .. }) if model.is_novel_category(category))
    };
    let hits = captions.iter().filter(|(_, c)| c.tokens.iter().any(is_novel)).count();
    hits as f64 / captions.len() as f64
}
