//! Versioned, digest-protected text checkpoint.
//!
//! ```text
//! novcap-checkpoint v1
//! sha256 <hex digest of every line below>
//! config {...}
//! word <surface>                      one per text word, in id order
//! segment <n>                         categories per vocabulary segment
//! category {"name":..,"singular":..,"plural":..,"status":..,"samples":..}
//! prototype <i> <v> <v> ...
//! block <name> <rows> <cols>
//! <v> <v> ...                         one line per row
//! table <vocab size> <embed> <hidden>
//! u <id> <v> ...                      derived rows, for diffing
//! m <id> <v> ...
//! b <id> <v>
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reloading is
//! bit-exact. Derived table rows are recomputed on load and must match.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::converter::expand_vocabulary;
use crate::error::{Error, Result};
use crate::features::{CategoryRecord, CategoryStatus};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::Vector;
use crate::vocab::{CategoryName, Vocabulary};

pub const MAGIC: &str = "novcap-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CategoryLine {
    name: String,
    singular: String,
    plural: String,
    status: CategoryStatus,
    samples: usize,
}

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v:e}"));
    }
}

fn body(model: &CaptionModel) -> Result<String> {
    let mut out = String::new();
    let config = serde_json::to_string(&model.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.push_str(&format!("config {config}\n"));
    for w in model.vocab.text_words() {
        out.push_str(&format!("word {w}\n"));
    }
    for n in model.vocab.segment_sizes() {
        out.push_str(&format!("segment {n}\n"));
    }
    for (i, c) in model.categories.iter().enumerate() {
        let line = CategoryLine {
            name: c.name.clone(),
            singular: c.singular.clone(),
            plural: c.plural.clone(),
            status: c.status,
            samples: c.sample_count,
        };
        let json = serde_json::to_string(&line).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push_str(&format!("category {json}\nprototype {i} "));
        push_floats(&mut out, &c.prototype);
        out.push('\n');
    }
    let blocks = model.params.blocks();
    for ((name, rows, cols), (_, data)) in model.params.block_shapes().into_iter().zip(blocks) {
        out.push_str(&format!("block {name} {rows} {cols}\n"));
        for r in 0..rows {
            push_floats(&mut out, &data[r * cols..(r + 1) * cols]);
            out.push('\n');
        }
    }
    let tables = model.tables()?;
    let v = tables.vocab_size();
    out.push_str(&format!("table {v} {} {}\n", tables.u.cols(), tables.m.cols()));
    for i in 0..v {
        out.push_str(&format!("u {i} "));
        push_floats(&mut out, tables.u.row(i));
        out.push_str(&format!("\nm {i} "));
        push_floats(&mut out, tables.m.row(i));
        out.push_str(&format!("\nb {i} {:e}\n", tables.b_out[i]));
    }
    out.push_str("end\n");
    Ok(out)
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_string(model: &CaptionModel) -> Result<String> {
    model.validate()?;
    let body = body(model)?;
    Ok(format!("{MAGIC} v{VERSION}\nsha256 {}\n{body}", digest(&body)))
}

pub fn save(model: &CaptionModel, path: &Path) -> Result<()> {
    fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CaptionModel> {
    let text = fs::read_to_string(path)?;
    from_str(&text).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    peeked: Option<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn peek(&mut self) -> Option<&'a str> {
        if self.peeked.is_none() {
            self.peeked = self.inner.next();
        }
        self.peeked.map(|(_, l)| l)
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.peek();
        self.peeked
            .take()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn expect(&mut self, tag: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next()?;
        match line.strip_prefix(tag).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok((n, rest)),
            None => Err(bad(n, format!("expected '{tag}' line"))),
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn floats(n: usize, text: &str, want: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| bad(n, format!("bad number '{s}'"))))
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(bad(n, format!("expected {want} values, found {}", vals.len())));
    }
    Ok(vals)
}

fn usize_field(n: usize, s: Option<&str>) -> Result<usize> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(n, "expected a non-negative integer"))
}

pub fn from_str(text: &str) -> Result<CaptionModel> {
    let mut parts = text.splitn(3, '\n');
    let header = parts.next().unwrap_or_default();
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(" v"))
        .ok_or_else(|| Error::Checkpoint("not a novcap checkpoint".into()))?;
    if version != VERSION.to_string() {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads v{VERSION})"
        )));
    }
    let stored = parts
        .next()
        .and_then(|l| l.strip_prefix("sha256 "))
        .ok_or_else(|| bad(2, "missing digest"))?;
    let body = parts.next().unwrap_or_default();
    if digest(body) != stored {
        return Err(Error::Checkpoint("digest mismatch: file is corrupt or was edited".into()));
    }
    let mut lines = Lines {
        inner: body.lines().enumerate(),
        peeked: None,
    };
    // Body line numbers are offset by the two header lines.
    let at = |n: usize| n + 2;

    let (n, cfg) = lines.expect("config")?;
    let config: ModelConfig = serde_json::from_str(cfg).map_err(|e| bad(at(n), e))?;
    config.validate()?;
    let mut words = Vec::new();
    while lines.peek().is_some_and(|l| l.starts_with("word ")) {
        words.push(lines.expect("word")?.1.to_string());
    }
    let mut segments = Vec::new();
    while lines.peek().is_some_and(|l| l.starts_with("segment ")) {
        let (n, rest) = lines.expect("segment")?;
        segments.push(usize_field(at(n), Some(rest))?);
    }
    let mut categories = Vec::new();
    while lines.peek().is_some_and(|l| l.starts_with("category ")) {
        let (n, json) = lines.expect("category")?;
        let c: CategoryLine = serde_json::from_str(json).map_err(|e| bad(at(n), e))?;
        let (n, rest) = lines.expect("prototype")?;
        let (idx, vals) = rest.split_once(' ').unwrap_or((rest, ""));
        if usize_field(at(n), Some(idx))? != categories.len() {
            return Err(bad(at(n), "prototype index out of order"));
        }
        categories.push(CategoryRecord {
            name: c.name,
            singular: c.singular,
            plural: c.plural,
            prototype: Vector::from_vec(floats(at(n), vals, config.feature_dim)?),
            sample_count: c.samples,
            status: c.status,
        });
    }
    if segments.iter().sum::<usize>() != categories.len() {
        return Err(Error::Checkpoint("segment sizes do not add up to the category count".into()));
    }

    // Rebuild the structure: a fresh model over the first segment, then one
    // expansion per later segment. Every parameter is then overwritten.
    let names: Vec<CategoryName> = categories.iter().map(CategoryRecord::names).collect();
    let first = segments.first().copied().unwrap_or(0);
    let vocab = Vocabulary::from_parts(&words, &[names[..first].to_vec()])?;
    let mut model = CaptionModel::init(config, vocab, categories[..first].to_vec(), 0)?;
    let mut start = first;
    for &size in segments.iter().skip(1) {
        model = expand_vocabulary(&model, &categories[start..start + size])?;
        start += size;
    }
    model.categories = categories;

    let shapes = model.params.block_shapes();
    let mut blocks = model.params.blocks_mut();
    for ((name, rows, cols), (_, dst)) in shapes.into_iter().zip(blocks.iter_mut()) {
        let (n, rest) = lines.expect("block")?;
        let mut f = rest.split(' ');
        let got = f.next().unwrap_or_default();
        if got != name {
            return Err(bad(at(n), format!("expected block '{name}', found '{got}'")));
        }
        let (r, c) = (usize_field(at(n), f.next())?, usize_field(at(n), f.next())?);
        if (r, c) != (rows, cols) {
            return Err(bad(at(n), format!("block '{name}' is {r}x{c}, expected {rows}x{cols}")));
        }
        for i in 0..rows {
            let (n, row) = lines.next()?;
            dst[i * cols..(i + 1) * cols].copy_from_slice(&floats(at(n), row, cols)?);
        }
    }
    drop(blocks);
    model.validate()?;

    let tables = model.tables()?;
    let (n, rest) = lines.expect("table")?;
    let v = usize_field(at(n), rest.split(' ').next())?;
    if v != tables.vocab_size() {
        return Err(bad(at(n), "table size does not match the vocabulary"));
    }
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    for i in 0..v {
        for (tag, want) in [
            ("u", tables.u.row(i)),
            ("m", tables.m.row(i)),
            ("b", std::slice::from_ref(&tables.b_out[i])),
        ] {
            let (n, rest) = lines.expect(tag)?;
            let (idx, vals) = rest.split_once(' ').unwrap_or((rest, ""));
            if usize_field(at(n), Some(idx))? != i || !same(&floats(at(n), vals, want.len())?, want) {
                return Err(bad(at(n), format!("stored {tag} row {i} disagrees with the parameters")));
            }
        }
    }
    let (n, end) = lines.next()?;
    if end != "end" || lines.peek().is_some() {
        return Err(bad(at(n), "trailing content after tables"));
    }
    Ok(model)
}

/// The `u`/`m`/`b` lines of a checkpoint for token ids below `rows`, as raw
/// bytes (used to show that expansion leaves existing rows untouched).
pub fn table_row_lines(text: &str, rows: usize) -> Vec<&str> {
    text.lines()
        .filter(|l| {
            let mut f = l.splitn(3, ' ');
            matches!(f.next(), Some("u" | "m" | "b"))
                && f.next().and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i < rows)
        })
        .collect()
}
