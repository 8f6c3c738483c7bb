//! Synthetic captioning world: category prototypes in feature space, noisy
//! instances, template captions with number agreement, a held-out split
//! and novel-category sample pools for annotation-count sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{write_dataset_file, write_feature_file, FeatureEntry, ImageRecord, Tag};
use crate::numerics::{SeededRng, Vector};
use crate::vocab::{normalize, CategoryName};

/// (singular, plural, super-category)
const CATALOGUE: &[(&str, &str, usize)] = &[
    ("dog", "dogs", 0),
    ("cat", "cats", 0),
    ("horse", "horses", 0),
    ("bird", "birds", 0),
    ("teddy bear", "teddy bears", 3),
    ("chair", "chairs", 3),
    ("car", "cars", 1),
    ("hot dog", "hot dogs", 2),
    ("zebra", "zebras", 0),
    ("bus", "buses", 1),
    ("pizza", "pizzas", 2),
    ("couch", "couches", 3),
    ("cow", "cows", 0),
    ("truck", "trucks", 1),
    ("cake", "cakes", 2),
    ("bed", "beds", 3),
];
const SUPER_CATEGORIES: usize = 4;

pub const COLORS: &[&str] = &["red", "brown", "white", "black", "orange"];
pub const PLACES: &[&str] = &["grass", "street", "table", "beach", "floor"];

pub const DEFAULT_TEMPLATES: &[&str] = &[
    "{det1} {noun1} on the {place}",
    "{det1} {color} {noun1} on the {place}",
    "{det1} {noun1} near the {place}",
    "{det1} {noun1} and {det2} {noun2} on the {place}",
    "{det1} {color} {noun1} and {det2} {noun2} on the {place}",
    "{det1} {noun1} next to {det2} {noun2}",
];

const SLOTS: &[&str] = &["det1", "noun1", "det2", "noun2", "color", "place"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub feature_dim: usize,
    pub num_categories: usize,
    pub num_known: usize,
    /// Instance noise ε: instance = prototype + ε·N(0, I).
    pub noise: f64,
    /// Weight of the shared super-category direction in each prototype.
    pub super_weight: f64,
    /// Scale of the color and place directions added to image features.
    pub context_scale: f64,
    /// Scale of the layout direction added to image features. The layout
    /// is the multiset of per-category instance counts, e.g. {1, 2}.
    pub layout_scale: f64,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    /// Probability that a validation/test image contains a novel category.
    pub novel_fraction: f64,
    pub known_samples: usize,
    pub novel_pool: usize,
    pub k_sweep: Vec<usize>,
    pub templates: Vec<String>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            feature_dim: 32,
            num_categories: 12,
            num_known: 8,
            noise: 0.1,
            super_weight: 0.8,
            context_scale: 0.5,
            layout_scale: 0.5,
            train_images: 2000,
            val_images: 200,
            test_images: 400,
            novel_fraction: 0.5,
            known_samples: 100,
            novel_pool: 1000,
            k_sweep: vec![1, 5, 10, 50],
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub pattern: String,
    /// Number of object slots used: 1 or 2.
    pub arity: usize,
}

impl Template {
    pub fn parse(pattern: &str) -> Result<Self> {
        let mut arity = 0;
        let mut rest = pattern;
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::config(format!("unclosed slot in template '{pattern}'")))?;
            let slot = &rest[open + 1..open + close];
            if !SLOTS.contains(&slot) {
                return Err(Error::config(format!("template '{pattern}' references unknown slot '{{{slot}}}'")));
            }
            if slot.ends_with('2') {
                arity = 2;
            } else if slot.ends_with('1') {
                arity = arity.max(1);
            }
            rest = &rest[open + close + 1..];
        }
        if rest.contains('}') {
            return Err(Error::config(format!("stray '}}' in template '{pattern}'")));
        }
        for n in 1..=arity {
            for part in ["det", "noun"] {
                if !pattern.contains(&format!("{{{part}{n}}}")) {
                    return Err(Error::config(format!("template '{pattern}' lacks {{{part}{n}}}")));
                }
            }
        }
        if arity == 0 {
            return Err(Error::config(format!("template '{pattern}' mentions no object")));
        }
        Ok(Template {
            pattern: pattern.to_string(),
            arity,
        })
    }

    fn render(&self, objects: &[(&WorldCategory, usize)], color: &str, place: &str) -> String {
        let mut out = self.pattern.replace("{color}", color).replace("{place}", place);
        for (i, (cat, count)) in objects.iter().enumerate() {
            let (det, noun) = if *count >= 2 {
                ("two", cat.plural.as_str())
            } else {
                ("a", cat.singular.as_str())
            };
            out = out
                .replace(&format!("{{det{}}}", i + 1), det)
                .replace(&format!("{{noun{}}}", i + 1), noun);
        }
        out
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<Vec<Template>> {
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if self.num_categories > CATALOGUE.len() {
            return Err(Error::config(format!("at most {} categories are available", CATALOGUE.len())));
        }
        if self.num_known == 0 || self.num_known >= self.num_categories {
            return Err(Error::config("need 0 < num_known < num_categories"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.super_weight) || !(0.0..=1.0).contains(&self.novel_fraction) {
            return Err(Error::config("super_weight and novel_fraction must lie in [0, 1]"));
        }
        if ![self.context_scale, self.layout_scale].iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(Error::config("context_scale and layout_scale must be finite and non-negative"));
        }
        if self.train_images == 0 || self.test_images == 0 || self.known_samples == 0 {
            return Err(Error::config("train/test image counts and known_samples must be positive"));
        }
        if self.k_sweep.iter().any(|&k| k == 0 || k > self.novel_pool) {
            return Err(Error::config("every k in k_sweep must lie in 1..=novel_pool"));
        }
        let templates = self
            .templates
            .iter()
            .map(|t| Template::parse(t))
            .collect::<Result<Vec<_>>>()?;
        for arity in [1, 2] {
            if !templates.iter().any(|t| t.arity == arity) {
                return Err(Error::config(format!("no template with {arity} object(s)")));
            }
        }
        Ok(templates)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldCategory {
    pub name: String,
    pub singular: String,
    pub plural: String,
    pub super_category: usize,
    pub prototype: Vector,
    pub novel: bool,
}

impl WorldCategory {
    pub fn names(&self) -> CategoryName {
        CategoryName {
            name: self.name.clone(),
            singular: self.singular.clone(),
            plural: self.plural.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWorld {
    pub config: WorldConfig,
    pub categories: Vec<WorldCategory>,
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    /// Instance features per known category, for its prototype.
    pub known_samples: Vec<Vec<Vector>>,
    /// Held-back instance features per novel category (never part of any
    /// image).
    pub novel_pool: Vec<Vec<Vector>>,
}

impl GeneratedWorld {
    pub fn known(&self) -> impl Iterator<Item = &WorldCategory> {
        self.categories.iter().filter(|c| !c.novel)
    }

    pub fn novel(&self) -> impl Iterator<Item = &WorldCategory> {
        self.categories.iter().filter(|c| c.novel)
    }

    pub fn novel_names(&self) -> Vec<String> {
        self.novel().map(|c| c.name.clone()).collect()
    }

    pub fn known_feature_entries(&self) -> Vec<FeatureEntry> {
        self.known()
            .zip(&self.known_samples)
            .map(|(c, s)| entry(c, s.clone()))
            .collect()
    }

    /// All pooled samples of every novel category.
    pub fn novel_pool_entries(&self) -> Vec<FeatureEntry> {
        self.novel()
            .zip(&self.novel_pool)
            .map(|(c, s)| entry(c, s.clone()))
            .collect()
    }
}

fn entry(c: &WorldCategory, samples: Vec<Vector>) -> FeatureEntry {
    FeatureEntry {
        name: c.name.clone(),
        singular: c.singular.clone(),
        plural: c.plural.clone(),
        samples,
    }
}

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Vector {
    loop {
        let v = Vector::from_vec((0..dim).map(|_| rng.normal()).collect());
        let n = v.l2_norm();
        if n > 1e-12 {
            return v.scale(1.0 / n);
        }
    }
}

fn instance(prototype: &Vector, noise: f64, rng: &mut SeededRng) -> Vector {
    Vector::from_vec(prototype.iter().map(|p| p + noise * rng.normal()).collect())
}

struct Context {
    colors: Vec<Vector>,
    places: Vec<Vector>,
    layouts: Vec<Vector>,
}

/// Sorted per-category instance counts of every possible scene.
const LAYOUTS: &[&[usize]] = &[&[1], &[2], &[1, 1], &[1, 2]];

fn make_image(
    id: String,
    cfg: &WorldConfig,
    cats: &[WorldCategory],
    objects: &[(usize, usize)],
    templates: &[Template],
    ctx: &Context,
    rng: &mut SeededRng,
) -> ImageRecord {
    let color = rng.below(COLORS.len());
    let place = rng.below(PLACES.len());
    let total: usize = objects.iter().map(|o| o.1).sum();
    let mut mean = Vector::zeros(cfg.feature_dim);
    for &(c, count) in objects {
        for _ in 0..count {
            mean = mean.add(&instance(&cats[c].prototype, cfg.noise, rng)).expect("same dimension");
        }
    }
    let feature = mean
        .scale(1.0 / total as f64)
        .add(&ctx.colors[color].scale(cfg.context_scale))
        .and_then(|f| f.add(&ctx.places[place].scale(cfg.context_scale)))
        .and_then(|f| f.add(&ctx.layouts[layout_index(objects)].scale(cfg.layout_scale)))
        .expect("same dimension");
    let refs: Vec<(&WorldCategory, usize)> = objects.iter().map(|&(c, n)| (&cats[c], n)).collect();
    let captions = templates
        .iter()
        .filter(|t| t.arity == objects.len())
        .map(|t| {
            let mut words: Vec<String> = t.render(&refs, COLORS[color], PLACES[place]).split(' ').map(str::to_owned).collect();
            crate::vocab::fix_articles(&mut words);
            words.join(" ")
        })
        .collect();
    let tags = objects
        .iter()
        .map(|&(c, n)| Tag {
            category: cats[c].name.clone(),
            plural: n >= 2,
        })
        .collect();
    ImageRecord {
        image_id: id,
        feature,
        tags,
        captions,
    }
}

fn layout_index(objects: &[(usize, usize)]) -> usize {
    let mut counts: Vec<usize> = objects.iter().map(|o| o.1).collect();
    counts.sort_unstable();
    LAYOUTS.iter().position(|l| *l == counts.as_slice()).expect("scene shapes are bounded")
}

/// One or two distinct categories with one or two instances each. With
/// `novel`, exactly one of them is drawn from `novel_ids`.
fn scene(known_ids: &[usize], novel_ids: &[usize], novel: bool, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let pair = rng.bernoulli(0.4);
    let first = if novel { *rng.choose(novel_ids) } else { *rng.choose(known_ids) };
    let mut objects = vec![(first, 1 + rng.below(2))];
    if pair {
        let mut second = *rng.choose(known_ids);
        while second == first {
            second = *rng.choose(known_ids);
        }
        // at most three instances per image
        let n = if objects[0].1 == 2 { 1 } else { 1 + rng.below(2) };
        objects.push((second, n));
        if novel && rng.bernoulli(0.5) {
            objects.swap(0, 1);
        }
    }
    objects
}

pub fn generate(cfg: &WorldConfig) -> Result<GeneratedWorld> {
    let templates = cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    let d = cfg.feature_dim;

    let mut r = root.substream(1);
    let supers: Vec<Vector> = (0..SUPER_CATEGORIES).map(|_| unit_vector(d, &mut r)).collect();
    let w = cfg.super_weight;
    let categories: Vec<WorldCategory> = CATALOGUE[..cfg.num_categories]
        .iter()
        .enumerate()
        .map(|(i, &(s, p, sup))| {
            let own = unit_vector(d, &mut r);
            let mixed = supers[sup].scale(w).add(&own.scale((1.0 - w * w).sqrt())).expect("dim");
            let n = mixed.l2_norm();
            WorldCategory {
                name: s.to_string(),
                singular: s.to_string(),
                plural: p.to_string(),
                super_category: sup,
                prototype: if n > 1e-12 { mixed.scale(1.0 / n) } else { own },
                novel: i >= cfg.num_known,
            }
        })
        .collect();

    let mut r = root.substream(2);
    let ctx = Context {
        colors: COLORS.iter().map(|_| unit_vector(d, &mut r)).collect(),
        places: PLACES.iter().map(|_| unit_vector(d, &mut r)).collect(),
        layouts: LAYOUTS.iter().map(|_| unit_vector(d, &mut r)).collect(),
    };

    let known_ids: Vec<usize> = (0..cfg.num_known).collect();
    let novel_ids: Vec<usize> = (cfg.num_known..cfg.num_categories).collect();
    let split = |name: &str, count: usize, stream: u64, novel_p: f64| -> Vec<ImageRecord> {
        let mut rng = root.substream(stream);
        (0..count)
            .map(|i| {
                let novel = novel_p > 0.0 && rng.bernoulli(novel_p);
                let objects = scene(&known_ids, &novel_ids, novel, &mut rng);
                make_image(format!("{name}{i:05}"), cfg, &categories, &objects, &templates, &ctx, &mut rng)
            })
            .collect()
    };
    let train = split("train", cfg.train_images, 3, 0.0);
    let val = split("val", cfg.val_images, 4, cfg.novel_fraction);
    let test = split("test", cfg.test_images, 5, cfg.novel_fraction);

    let mut r = root.substream(6);
    let known_samples = categories[..cfg.num_known]
        .iter()
        .map(|c| (0..cfg.known_samples).map(|_| instance(&c.prototype, cfg.noise, &mut r)).collect())
        .collect();
    let mut r = root.substream(7);
    let novel_pool = categories[cfg.num_known..]
        .iter()
        .map(|c| (0..cfg.novel_pool).map(|_| instance(&c.prototype, cfg.noise, &mut r)).collect())
        .collect();

    Ok(GeneratedWorld {
        config: cfg.clone(),
        categories,
        train,
        val,
        test,
        known_samples,
        novel_pool,
    })
}

/// `k` pooled samples per novel category, drawn without replacement;
/// `pattern` selects the resample.
pub fn emit_sample_files(world: &GeneratedWorld, k: usize, pattern: u64) -> Result<Vec<FeatureEntry>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let rng = SeededRng::new(world.config.seed).substream(1000 + pattern);
    world
        .novel()
        .zip(&world.novel_pool)
        .enumerate()
        .map(|(i, (c, pool))| {
            if k > pool.len() {
                return Err(Error::config(format!(
                    "k = {k} exceeds the {} held-back samples of '{}'",
                    pool.len(),
                    c.name
                )));
            }
            let mut r = rng.substream(i as u64);
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            // Partial Fisher–Yates: the first k positions are a uniform sample.
            for j in 0..k {
                let pick = j + r.below(idx.len() - j);
                idx.swap(j, pick);
            }
            Ok(entry(c, idx[..k].iter().map(|&j| pool[j].clone()).collect()))
        })
        .collect()
}

/// Lines of `records` (1-based) whose captions or tags mention any of the
/// given category surfaces, as whole words.
pub fn held_out_violations(records: &[ImageRecord], novel: &[CategoryName]) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let surfaces: Vec<Vec<String>> = novel
        .iter()
        .flat_map(|c| [normalize(&c.singular), normalize(&c.plural)])
        .filter(|s| !s.is_empty())
        .collect();
    let names: Vec<&str> = novel.iter().map(|c| c.name.as_str()).collect();
    for (i, r) in records.iter().enumerate() {
        if let Some(t) = r.tags.iter().find(|t| names.contains(&t.category.as_str())) {
            out.push((i + 1, format!("image '{}' is tagged '{}'", r.image_id, t.category)));
            continue;
        }
        for cap in &r.captions {
            let words = normalize(cap);
            if let Some(s) = surfaces.iter().find(|s| words.windows(s.len()).any(|w| w == s.as_slice())) {
                out.push((i + 1, format!("image '{}' caption mentions '{}'", r.image_id, s.join(" "))));
                break;
            }
        }
    }
    out
}

/// Files written by [`write_world`].
#[derive(Clone, Debug)]
pub struct WorldFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub known_features: PathBuf,
    pub novel_features: PathBuf,
    pub novel_categories: PathBuf,
    pub k_samples: Vec<(usize, PathBuf)>,
}

/// Writes the splits, the known-category feature file, the full novel pool,
/// the novel category list and one `novel_k{k}.jsonl` per sweep value.
pub fn write_world(world: &GeneratedWorld, dir: &Path) -> Result<WorldFiles> {
    fs::create_dir_all(dir)?;
    let files = WorldFiles {
        train: dir.join("train.jsonl"),
        val: dir.join("val.jsonl"),
        test: dir.join("test.jsonl"),
        known_features: dir.join("known_features.jsonl"),
        novel_features: dir.join("novel_features.jsonl"),
        novel_categories: dir.join("novel_categories.jsonl"),
        k_samples: world
            .config
            .k_sweep
            .iter()
            .map(|&k| (k, dir.join(format!("novel_k{k}.jsonl"))))
            .collect(),
    };
    write_dataset_file(&files.train, &world.train)?;
    write_dataset_file(&files.val, &world.val)?;
    write_dataset_file(&files.test, &world.test)?;
    write_feature_file(&files.known_features, &world.known_feature_entries())?;
    write_feature_file(&files.novel_features, &world.novel_pool_entries())?;
    let novel: Vec<CategoryName> = world.novel().map(WorldCategory::names).collect();
    crate::vocab::write_category_list(&files.novel_categories, &novel)?;
    for (k, path) in &files.k_samples {
        write_feature_file(path, &emit_sample_files(world, *k, 0)?)?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            train_images: 200,
            val_images: 20,
            test_images: 100,
            novel_pool: 200,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn noiseless_instances_equal_prototypes() {
        let cfg = WorldConfig { noise: 0.0, ..small() };
        let w = generate(&cfg).unwrap();
        for (c, pool) in w.novel().zip(&w.novel_pool) {
            assert!(pool.iter().all(|s| s == &c.prototype));
        }
        for (c, s) in w.known().zip(&w.known_samples) {
            assert!(s.iter().all(|s| s == &c.prototype));
        }
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig { num_known: 12, ..small() }.validate().is_err());
        assert!(WorldConfig { num_known: 0, ..small() }.validate().is_err());
        assert!(WorldConfig { noise: -0.1, ..small() }.validate().is_err());
        assert!(WorldConfig { num_categories: 17, ..small() }.validate().is_err());
        assert!(WorldConfig { k_sweep: vec![0], ..small() }.validate().is_err());
        let bad = WorldConfig {
            templates: vec!["{det1} {noun1} on {obj3}".into()],
            ..small()
        };
        assert!(generate(&bad).is_err());
        assert!(Template::parse("{det1} {noun1} and {det2}").is_err());
        assert!(Template::parse("on the {place}").is_err());
        assert_eq!(Template::parse("{det1} {noun1} and {det2} {noun2}").unwrap().arity, 2);
    }

    #[test]
    fn prototypes_are_unit_vectors() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.categories.len(), 12);
        assert_eq!(w.novel().count(), 4);
        for c in &w.categories {
            assert!((c.prototype.l2_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn held_out_purity_and_splits() {
        let w = generate(&small()).unwrap();
        let novel: Vec<CategoryName> = w.novel().map(WorldCategory::names).collect();
        assert!(held_out_violations(&w.train, &novel).is_empty());
        let hits = held_out_violations(&w.test, &novel).len();
        assert!(hits > 0 && hits < w.test.len());
        for r in w.train.iter().chain(&w.test) {
            assert_eq!(r.captions.len(), 3);
            let total: usize = r.tags.len();
            assert!((1..=2).contains(&total));
        }
    }

    #[test]
    fn number_agreement() {
        let w = generate(&small()).unwrap();
        for r in w.train.iter().chain(&w.test) {
            for tag in &r.tags {
                let c = w.categories.iter().find(|c| c.name == tag.category).unwrap();
                for cap in &r.captions {
                    let words = normalize(cap);
                    let has = |s: &str| {
                        let s = normalize(s);
                        words.windows(s.len()).any(|x| x == s.as_slice())
                    };
                    if tag.plural {
                        assert!(has(&c.plural) && !has(&c.singular), "{cap}");
                    } else {
                        assert!(has(&c.singular) && !has(&c.plural), "{cap}");
                    }
                }
            }
        }
        let w2 = generate(&small()).unwrap();
        assert!(w2.test.iter().any(|r| r.tags.iter().any(|t| t.plural)));
    }

    #[test]
    fn equal_seeds_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_world(&generate(&small()).unwrap(), &dir.path().join("a")).unwrap();
        let b = write_world(&generate(&small()).unwrap(), &dir.path().join("b")).unwrap();
        for (x, y) in [(&a.train, &b.train), (&a.test, &b.test), (&a.novel_features, &b.novel_features)] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        for ((_, x), (_, y)) in a.k_samples.iter().zip(&b.k_samples) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let c = generate(&WorldConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(c.train, generate(&small()).unwrap().train);
    }

    #[test]
    fn sample_files() {
        let w = generate(&small()).unwrap();
        let one = emit_sample_files(&w, 1, 0).unwrap();
        assert_eq!(one.len(), 4);
        assert!(one.iter().all(|e| e.samples.len() == 1));
        assert!(emit_sample_files(&w, 201, 0).is_err());
        assert!(emit_sample_files(&w, 0, 0).is_err());
        let a = emit_sample_files(&w, 50, 0).unwrap();
        let b = emit_sample_files(&w, 50, 1).unwrap();
        assert_ne!(a, b);
        // Without replacement: no repeated vector.
        for e in &a {
            for i in 0..e.samples.len() {
                for j in i + 1..e.samples.len() {
                    assert_ne!(e.samples[i], e.samples[j]);
                }
            }
        }
    }

    #[test]
    fn large_k_mean_approaches_prototype() {
        let cfg = WorldConfig { novel_pool: 1000, ..small() };
        let w = generate(&cfg).unwrap();
        let k = 500;
        let entries = emit_sample_files(&w, k, 3).unwrap();
        let bound = 5.0 * 3.0 * cfg.noise / (k as f64).sqrt();
        for (e, c) in entries.iter().zip(w.novel()) {
            let mean = crate::features::compute_prototype(&e.samples, false).unwrap();
            for (m, p) in mean.iter().zip(c.prototype.iter()) {
                assert!((m - p).abs() < bound, "{m} vs {p}");
            }
        }
    }
}
