//! CIDEr-D: clipped tf-idf n-gram cosine similarity with a gaussian length
//! penalty, averaged over n = 1..4 and over references, scaled by 10.
//!
//! Text is scored as words (category phrases are split), lowercased with
//! punctuation dropped. No stemming.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::features::ImageRecord;
use crate::vocab::normalize;

pub const MAX_N: usize = 4;
pub const LENGTH_SIGMA: f64 = 6.0;
pub const SCALE: f64 = 10.0;

type NGram = Vec<String>;

/// Document frequencies over a reference corpus, one document per image.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramStats {
    df: [BTreeMap<NGram, usize>; MAX_N],
    corpus_size: usize,
}

fn ngram_counts(words: &[String]) -> [BTreeMap<NGram, usize>; MAX_N] {
    let mut out: [BTreeMap<NGram, usize>; MAX_N] = Default::default();
    for (k, counts) in out.iter_mut().enumerate() {
        let n = k + 1;
        for w in words.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// `references[i]` holds the reference captions of image `i`.
pub fn build_ngram_stats<S: AsRef<str>>(references: &[Vec<S>]) -> Result<NGramStats> {
    if references.is_empty() {
        return Err(Error::data("cannot build n-gram statistics from an empty corpus"));
    }
    let mut df: [BTreeMap<NGram, usize>; MAX_N] = Default::default();
    for refs in references {
        let mut seen: [BTreeSet<NGram>; MAX_N] = Default::default();
        for r in refs {
            for (k, counts) in ngram_counts(&normalize(r.as_ref())).into_iter().enumerate() {
                seen[k].extend(counts.into_keys());
            }
        }
        for (k, grams) in seen.into_iter().enumerate() {
            for g in grams {
                *df[k].entry(g).or_insert(0) += 1;
            }
        }
    }
    Ok(NGramStats {
        df,
        corpus_size: references.len(),
    })
}

impl NGramStats {
    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    /// Number of images whose references contain the space-separated n-gram.
    pub fn document_frequency(&self, ngram: &str) -> usize {
        let g: NGram = ngram.split_whitespace().map(str::to_owned).collect();
        match g.len() {
            1..=MAX_N => self.df[g.len() - 1].get(&g).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// `ln(N / max(df, 1))`.
    pub fn idf(&self, k: usize, ngram: &[String]) -> f64 {
        let df = self.df[k].get(ngram).copied().unwrap_or(0).max(1);
        (self.corpus_size as f64).ln() - (df as f64).ln()
    }

    fn vectors(&self, words: &[String]) -> ([BTreeMap<NGram, f64>; MAX_N], [f64; MAX_N]) {
        let mut vecs: [BTreeMap<NGram, f64>; MAX_N] = Default::default();
        let mut norms = [0.0; MAX_N];
        for (k, counts) in ngram_counts(words).into_iter().enumerate() {
            for (g, tf) in counts {
                let w = tf as f64 * self.idf(k, &g);
                norms[k] += w * w;
                vecs[k].insert(g, w);
            }
            norms[k] = norms[k].sqrt();
        }
        (vecs, norms)
    }
}

/// CIDEr-D of `candidate` against `references`. Degenerate inputs (no
/// references, empty text, no overlap) score 0.
pub fn cider_d<S: AsRef<str>>(candidate: &str, references: &[S], stats: &NGramStats) -> f64 {
    let cand = normalize(candidate);
    if cand.is_empty() || references.is_empty() {
        return 0.0;
    }
    let (cv, cn) = stats.vectors(&cand);
    let mut total = 0.0;
    for r in references {
        let words = normalize(r.as_ref());
        let (rv, rn) = stats.vectors(&words);
        let delta = cand.len() as f64 - words.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * LENGTH_SIGMA * LENGTH_SIGMA)).exp();
        let mut sum = 0.0;
        for k in 0..MAX_N {
            let mut val = 0.0;
            for (g, &h) in &cv[k] {
                if let Some(&r) = rv[k].get(g) {
                    val += h.min(r) * r;
                }
            }
            if cn[k] != 0.0 && rn[k] != 0.0 {
                val /= cn[k] * rn[k];
            }
            sum += val * penalty;
        }
        total += sum / MAX_N as f64;
    }
    SCALE * total / references.len() as f64
}

/// Which images a subset contains.
#[derive(Clone, Debug, PartialEq)]
pub enum SubsetRule {
    All,
    /// Images tagged with at least one of these categories.
    AnyTag(Vec<String>),
    /// Images tagged with none of these categories.
    NoTag(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub name: String,
    pub rule: SubsetRule,
}

impl Subset {
    pub fn contains(&self, record: &ImageRecord) -> bool {
        let tagged = |names: &[String]| record.tags.iter().any(|t| names.contains(&t.category));
        match &self.rule {
            SubsetRule::All => true,
            SubsetRule::AnyTag(names) => tagged(names),
            SubsetRule::NoTag(names) => !tagged(names),
        }
    }
}

/// `all`, `novel` (any novel tag) and `known` (no novel tag).
pub fn standard_subsets(novel_categories: &[String]) -> Vec<Subset> {
    vec![
        Subset {
            name: "all".into(),
            rule: SubsetRule::All,
        },
        Subset {
            name: "novel".into(),
            rule: SubsetRule::AnyTag(novel_categories.to_vec()),
        },
        Subset {
            name: "known".into(),
            rule: SubsetRule::NoTag(novel_categories.to_vec()),
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetScore {
    pub name: String,
    pub count: usize,
    /// `None` for an empty subset.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    /// `(image_id, score)` in output order.
    pub per_image: Vec<(String, f64)>,
    pub subsets: Vec<SubsetScore>,
}

impl ScoreReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetScore> {
        self.subsets.iter().find(|s| s.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.subset(name).and_then(|s| s.mean)
    }

    /// `name,count,mean_cider` lines.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("name,count,mean_cider\n");
        for s in &self.subsets {
            let mean = s.mean.map(|m| format!("{m:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", s.name, s.count, mean));
        }
        out
    }

    pub fn detail_csv(&self) -> String {
        let mut out = String::from("image_id,cider\n");
        for (id, score) in &self.per_image {
            out.push_str(&format!("{id},{score:.6}\n"));
        }
        out
    }
}

/// Scores every output against its image's references. Document
/// frequencies come from the references of the evaluated images.
pub fn evaluate(outputs: &[(String, String)], dataset: &[ImageRecord], subsets: &[Subset]) -> Result<ScoreReport> {
    let by_id: BTreeMap<&str, &ImageRecord> = dataset.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let missing: Vec<&str> = outputs
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| by_id.get(id).is_none_or(|r| r.captions.is_empty()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("no references for image(s): {}", missing.join(", "))));
    }
    let records: Vec<&ImageRecord> = outputs.iter().map(|(id, _)| by_id[id.as_str()]).collect();
    let corpus: Vec<Vec<&str>> = records
        .iter()
        .map(|r| r.captions.iter().map(String::as_str).collect())
        .collect();
    let stats = build_ngram_stats(&corpus)?;
    let per_image: Vec<(String, f64)> = outputs
        .iter()
        .zip(&records)
        .map(|((id, caption), r)| (id.clone(), cider_d(caption, &r.captions, &stats)))
        .collect();
    let subsets = subsets
        .iter()
        .map(|s| {
            let scores: Vec<f64> = per_image
                .iter()
                .zip(&records)
                .filter(|(_, r)| s.contains(r))
                .map(|((_, v), _)| *v)
                .collect();
            SubsetScore {
                name: s.name.clone(),
                count: scores.len(),
                mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
            }
        })
        .collect();
    Ok(ScoreReport { per_image, subsets })
}
