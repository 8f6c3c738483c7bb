//! Category prototypes and the feature/dataset file formats.
//!
//! Both files are JSON lines. A feature file carries one category per line
//! (`name`, `singular`, `plural`, `samples`); a dataset file carries one
//! image per line (`image_id`, `feature`, `tags`, `captions`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::vocab::CategoryName;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryStatus {
    Known,
    Novel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryRecord {
    pub name: String,
    pub singular: String,
    pub plural: String,
    pub prototype: Vector,
    pub sample_count: usize,
    pub status: CategoryStatus,
}

impl CategoryRecord {
    pub fn names(&self) -> CategoryName {
        CategoryName {
            name: self.name.clone(),
            singular: self.singular.clone(),
            plural: self.plural.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub category: String,
    pub plural: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub feature: Vector,
    #[serde(default)]
    pub tags: Vec<Tag>,
    #[serde(default)]
    pub captions: Vec<String>,
}

/// One line of a feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub singular: String,
    pub plural: String,
    pub samples: Vec<Vector>,
}

/// Per-coordinate mean of `samples`.
///
/// Each coordinate is summed over its values in sorted order, then refined
/// with a second pass over the residuals; the result does not depend on the
/// order of `samples`.
pub fn compute_prototype(samples: &[Vector], l2_normalize: bool) -> Result<Vector> {
    let first = samples
        .first()
        .ok_or_else(|| Error::data("cannot compute a prototype from zero samples"))?;
    let dim = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::shape(format!(
            "prototype samples have dimensions {dim} and {}",
            bad.len()
        )));
    }
    let n = samples.len() as f64;
    let mut column = Vec::with_capacity(samples.len());
    let mut mean = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(samples.iter().map(|s| s[j]));
        column.sort_by(f64::total_cmp);
        let first_pass = column.iter().sum::<f64>() / n;
        let residual = column.iter().map(|v| v - first_pass).sum::<f64>() / n;
        mean.push(first_pass + residual);
    }
    let mut mean = Vector::from_vec(mean);
    if !mean.is_finite() {
        return Err(Error::non_finite("prototype"));
    }
    if l2_normalize {
        let norm = mean.l2_norm();
        if norm > 0.0 {
            mean = mean.scale(1.0 / norm);
        }
    }
    Ok(mean)
}

fn parse_lines<T, F>(path: &Path, mut each: F) -> Result<Vec<T>>
where
    F: FnMut(&str) -> std::result::Result<T, String>,
{
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = each(line).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Reads a feature file and turns each line into a category record whose
/// prototype is the mean of its samples. All samples in the file must share
/// one dimension (and match `dim` when given). Nothing is returned unless
/// every line parses.
pub fn ingest_feature_file(
    path: &Path,
    dim: Option<usize>,
    l2_normalize: bool,
    status: CategoryStatus,
) -> Result<Vec<CategoryRecord>> {
    let mut expected = dim;
    let records = parse_lines(path, |line| {
        let entry: FeatureEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if entry.samples.is_empty() {
            return Err(format!("category '{}' has no samples", entry.name));
        }
        for s in &entry.samples {
            match expected {
                Some(d) if d != s.len() => {
                    return Err(format!("sample of dimension {} where {d} was expected", s.len()))
                }
                _ => expected = Some(s.len()),
            }
        }
        let prototype = compute_prototype(&entry.samples, l2_normalize).map_err(|e| e.to_string())?;
        Ok(CategoryRecord {
            name: entry.name,
            singular: entry.singular,
            plural: entry.plural,
            prototype,
            sample_count: entry.samples.len(),
            status,
        })
    })?;
    Ok(records)
}

pub fn read_feature_entries(path: &Path) -> Result<Vec<FeatureEntry>> {
    parse_lines(path, |line| serde_json::from_str(line).map_err(|e| e.to_string()))
}

pub fn write_feature_file(path: &Path, entries: &[FeatureEntry]) -> Result<()> {
    write_lines(path, entries)
}

pub fn ingest_dataset_file(path: &Path, dim: Option<usize>) -> Result<Vec<ImageRecord>> {
    let mut expected = dim;
    parse_lines(path, |line| {
        let rec: ImageRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match expected {
            Some(d) if d != rec.feature.len() => Err(format!(
                "image '{}' has feature dimension {} where {d} was expected",
                rec.image_id,
                rec.feature.len()
            )),
            _ => {
                expected = Some(rec.feature.len());
                if !rec.feature.is_finite() {
                    return Err(format!("image '{}' has a non-finite feature", rec.image_id));
                }
                Ok(rec)
            }
        }
    })
}

pub fn write_dataset_file(path: &Path, records: &[ImageRecord]) -> Result<()> {
    write_lines(path, records)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| Error::data(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
