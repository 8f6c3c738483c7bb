//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --test acceptance` (release-level
//! optimisation comes from the workspace test profile).

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use novcap::captioner::{forward_step, TrainConfig};
use novcap::cbs::{
    build_constraints, constrained_beam_search, resolve_tags, Caption, CaptionOptions, ConstraintSet, Decoder, TagScope,
};
use novcap::checkpoint;
use novcap::converter::BiasPolicy;
use novcap::features::{CategoryRecord, CategoryStatus, ImageRecord};
use novcap::gradcheck::{gradient_audit, tiny_model};
use novcap::metrics::{build_ngram_stats, cider_d, evaluate, standard_subsets, Subset};
use novcap::microworld::{emit_sample_files, generate, GeneratedWorld, WorldConfig};
use novcap::model::{CaptionModel, ModelConfig};
use novcap::numerics::{log_softmax, SeededRng, Vector};
use novcap::pipeline::{
    caption_records, categories_from_entries, default_threads, expand_with_entries, format_captions, novel_emission_rate,
    random_novel_rows, train_from_records,
};
use novcap::vocab::{TokenId, Vocabulary, BOS, EOS, UNK};

const SEEDS: u64 = 5;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: usize, name: &'static str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name:<26} {} {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, name, pass, detail });
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn main() -> ExitCode {
    let mut out = Vec::new();
    let threads = default_threads();

    gradient(&mut out);
    cbs_oracle(&mut out);
    cider_fixture(&mut out);

    let t6 = Instant::now();
    let runs: Vec<SeedRun> = (0..SEEDS).map(|s| SeedRun::train(s, threads)).collect();
    let eval6 = table_direction(&runs);
    let elapsed6 = t6.elapsed();

    expansion_invariance(&mut out, &runs, threads);
    known_rows(&mut out, &runs);
    soundness(&mut out, &runs);
    report_table(&mut out, &eval6, elapsed6);
    k_sweep(&mut out, &runs[0], threads);
    plural(&mut out, &runs);
    determinism(&mut out, &runs[0], threads);

    out.sort_by_key(|o| o.id);
    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", out.len());
    for o in out.iter().filter(|o| !o.pass) {
        println!("  failed: {} ({}) {}", o.id, o.name, o.detail);
    }
    if passed == out.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn gradient(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let (m, f, _) = tiny_model(0);
    let dims_ok = f.len() == 4 && m.config.hidden_dim == 6 && m.vocab_size() == 9;
    let blocks = gradient_audit(0, 20, 1e-4, None).expect("gradient audit");
    let elapsed = t.elapsed();
    let worst = blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max);
    let pass = dims_ok && worst < 1e-4 && blocks.iter().all(|b| b.passed) && elapsed < Duration::from_secs(10);
    report(
        out,
        1,
        "gradient audit",
        pass,
        format!("max rel err {worst:.2e} over {} blocks x 20 seeds in {}", blocks.len(), secs(elapsed)),
    );
}

// ---------------------------------------------------------------- 4

/// Random tiny model: specials, `words`, one category; N(0, 1) parameters.
fn random_tiny(seed: u64, words: &[&str]) -> CaptionModel {
    let cats = vec![CategoryRecord {
        name: "ox".into(),
        singular: "ox".into(),
        plural: "oxen".into(),
        prototype: Vector::from_vec(vec![0.4, -0.3]),
        sample_count: 1,
        status: CategoryStatus::Known,
    }];
    let names: Vec<_> = cats.iter().map(CategoryRecord::names).collect();
    let vocab = Vocabulary::build(&[words.join(" ")], &names, 1).unwrap();
    let cfg = ModelConfig {
        feature_dim: 2,
        embed_dim: 3,
        hidden_dim: 4,
        converter_bias: true,
        bias_policy: BiasPolicy::default(),
    };
    let mut model = CaptionModel::init(cfg, vocab, cats, seed).unwrap();
    let mut rng = SeededRng::new(seed.wrapping_mul(0x9e37_79b9));
    for (_, b) in model.params.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.normal();
        }
    }
    model
}

/// Best complete sequence containing every group, by enumerating all
/// sequences of at most `max_len` tokens. Scores come from repeated single
/// forward steps and a full-vocabulary log-softmax.
fn enumerate_best(model: &CaptionModel, feature: &[f64], groups: &[Vec<TokenId>], max_len: usize) -> Option<(Vec<TokenId>, f64)> {
    struct Walk<'a> {
        model: &'a CaptionModel,
        tables: novcap::converter::EmbeddingTables,
        feature: &'a [f64],
        groups: &'a [Vec<TokenId>],
        max_len: usize,
        best: Option<(Vec<TokenId>, f64)>,
    }
    impl Walk<'_> {
        fn go(&mut self, prefix: &mut Vec<TokenId>, state: Vector, score: f64) {
            let last = prefix.last().copied().unwrap_or(BOS);
            let (logits, h) = forward_step(&self.model.params.captioner, &self.tables, state.as_slice(), last, self.feature).unwrap();
            let lp = log_softmax(&logits).unwrap();
            for t in 0..lp.len() {
                let tok = TokenId(t as u32);
                if tok == BOS || tok == UNK {
                    continue;
                }
                let s = score + lp[t];
                prefix.push(tok);
                if tok == EOS {
                    let complete = self.groups.iter().all(|g| prefix.iter().any(|x| g.contains(x)));
                    let better = match &self.best {
                        None => true,
                        Some((bt, bs)) => s > *bs || (s == *bs && prefix.as_slice() < bt.as_slice()),
                    };
                    if complete && better {
                        self.best = Some((prefix.clone(), s));
                    }
                } else if prefix.len() < self.max_len {
                    self.go(prefix, h.clone(), s);
                }
                prefix.pop();
            }
        }
    }
    let mut w = Walk {
        model,
        tables: model.tables().unwrap(),
        feature,
        groups,
        max_len,
        best: None,
    };
    let h0 = model.params.captioner.image_context(feature).unwrap().h0;
    w.go(&mut Vec::new(), h0, 0.0);
    w.best
}

fn cbs_oracle(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let all_words = ["a", "on", "the"];
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    let mut first_bad = None;
    let mut max_groups = 0;
    for i in 0..100u64 {
        let mut rng = SeededRng::new(7_000 + i);
        let n_words = 1 + rng.below(3);
        let model = random_tiny(i, &all_words[..n_words]);
        let v = model.vocab_size();
        assert!(v <= 8);
        let n_groups = rng.below(3);
        max_groups = max_groups.max(n_groups);
        let max_len = rng.below(5 - (n_groups + 1).max(2) + 1) + (n_groups + 1).max(2);
        // disjoint groups of one or two generable tokens
        let mut pool: Vec<TokenId> = (3..v as u32).map(TokenId).collect();
        rng.shuffle(&mut pool);
        let mut groups = Vec::new();
        for _ in 0..n_groups {
            let size = (1 + rng.below(2)).min(pool.len() - (n_groups - groups.len() - 1));
            groups.push(pool.drain(..size).collect::<Vec<_>>());
        }
        let feature = [rng.normal(), rng.normal()];
        let decoder = Decoder::new(&model, model.config.bias_policy).unwrap();
        let set = ConstraintSet::new(groups.clone(), 3).unwrap();
        let beam = (v - 2).pow(max_len as u32);
        let res = constrained_beam_search(&decoder, &feature, &set, beam, max_len).unwrap();
        let (seq, score) = enumerate_best(&model, &feature, &groups, max_len).expect("reachable accepting sequence");
        let err = (res.best().logprob - score).abs();
        worst = worst.max(err);
        if res.accepting && res.best().tokens == seq && err <= 1e-10 {
            agree += 1;
        } else if first_bad.is_none() {
            first_bad = Some(i);
        }
    }
    let elapsed = t.elapsed();
    let pass = agree == 100 && elapsed < Duration::from_secs(60);
    let mut detail = format!("{agree}/100 models agree, max |dlogprob| {worst:.1e}, up to {max_groups} groups, {}", secs(elapsed));
    if let Some(i) = first_bad {
        detail.push_str(&format!(", first mismatch model {i}"));
    }
    report(out, 4, "CBS vs enumeration", pass, detail);
}

// ---------------------------------------------------------------- 9

fn cider_fixture(out: &mut Vec<Outcome>) {
    // Values computed by hand from the CIDEr-D definition (raw tf, idf
    // ln(N/df), clipped similarity, gaussian length penalty sigma 6, x10).
    let corpus = vec![
        vec!["a dog on the grass", "a brown dog runs"],
        vec!["a cat on the sofa"],
        vec!["two dogs on the grass"],
    ];
    let stats = build_ngram_stats(&corpus).unwrap();
    let cases = [
        ("a dog on a sofa", 0usize, 2.634_073_197_198_108_4),
        ("a dog on the grass", 0, 5.701_162_790_595_482_5),
        ("two dogs on the grass", 2, 10.0),
    ];
    let mut worst: f64 = 0.0;
    for (cand, img, expected) in cases {
        worst = worst.max((cider_d(cand, &corpus[img], &stats) - expected).abs());
    }

    let reference = "two dogs on the grass";
    let identical = cider_d(reference, &corpus[2], &stats);
    let lexicon = ["a", "dog", "dogs", "cat", "on", "the", "grass", "sofa", "two", "brown", "runs", "red"];
    let mut rng = SeededRng::new(99);
    let mut beaten = 0;
    let mut tried = 0;
    while tried < 1000 {
        let mut words: Vec<&str> = reference.split(' ').collect();
        for _ in 0..1 + rng.below(3) {
            match rng.below(4) {
                0 => {
                    let i = rng.below(words.len());
                    words[i] = rng.choose(&lexicon);
                }
                1 if words.len() > 1 => {
                    words.remove(rng.below(words.len()));
                }
                2 => {
                    let i = rng.below(words.len() + 1);
                    words.insert(i, rng.choose(&lexicon));
                }
                _ if words.len() > 1 => {
                    let i = rng.below(words.len() - 1);
                    words.swap(i, i + 1);
                }
                _ => {}
            }
        }
        let cand = words.join(" ");
        if cand == reference {
            continue;
        }
        tried += 1;
        if cider_d(&cand, &corpus[2], &stats) > identical {
            beaten += 1;
        }
    }
    let pass = worst <= 1e-9 && beaten == 0;
    report(
        out,
        9,
        "CIDEr fixture",
        pass,
        format!("max fixture error {worst:.1e}; identical {identical:.6} beaten by {beaten}/1000 perturbations"),
    );
}

// ---------------------------------------------------------------- shared runs

struct SeedRun {
    seed: u64,
    world: GeneratedWorld,
    subsets: Vec<Subset>,
    model: CaptionModel,
    expanded: CaptionModel,
    train_time: Duration,
    unexpanded_caps: Vec<(String, Caption)>,
    expanded_caps: Vec<(String, Caption)>,
}

fn texts(caps: &[(String, Caption)]) -> Vec<(String, String)> {
    caps.iter().map(|(id, c)| (id.clone(), c.text.clone())).collect()
}

fn unconstrained() -> CaptionOptions {
    CaptionOptions {
        use_constraints: false,
        ..CaptionOptions::default()
    }
}

fn train_seed(seed: u64) -> (GeneratedWorld, CaptionModel) {
    let world = generate(&WorldConfig { seed, ..WorldConfig::default() }).unwrap();
    let known = categories_from_entries(&world.known_feature_entries(), CategoryStatus::Known).unwrap();
    let tc = TrainConfig { seed, ..TrainConfig::default() };
    let (model, _) = train_from_records(&world.train, known, ModelConfig::default(), &tc, 1).unwrap();
    (world, model)
}

impl SeedRun {
    fn train(seed: u64, threads: usize) -> SeedRun {
        let t = Instant::now();
        let (world, model) = train_seed(seed);
        let train_time = t.elapsed();
        let expanded = expand_with_entries(&model, &emit_sample_files(&world, 50, 0).unwrap()).unwrap();
        let subsets = standard_subsets(&world.novel_names());
        let policy = BiasPolicy::default();
        let unexpanded_caps = caption_records(&Decoder::new(&model, policy).unwrap(), &world.test, &unconstrained(), threads).unwrap();
        let expanded_caps =
            caption_records(&Decoder::new(&expanded, policy).unwrap(), &world.test, &CaptionOptions::default(), threads).unwrap();
        println!("  seed {seed}: trained in {}", secs(train_time));
        SeedRun {
            seed,
            world,
            subsets,
            model,
            expanded,
            train_time,
            unexpanded_caps,
            expanded_caps,
        }
    }

    fn score(&self, caps: &[(String, Caption)], subset: &str) -> f64 {
        evaluate(&texts(caps), &self.world.test, &self.subsets).unwrap().mean(subset).unwrap()
    }
}

// ---------------------------------------------------------------- 2

fn expansion_invariance(out: &mut Vec<Outcome>, runs: &[SeedRun], threads: usize) {
    let mut identical = 0;
    let mut images = 0;
    let mut emission: f64 = 0.0;
    for r in runs {
        let before = caption_records(&Decoder::new(&r.model, BiasPolicy::ExactMask).unwrap(), &r.world.test, &unconstrained(), threads).unwrap();
        let after = caption_records(&Decoder::new(&r.expanded, BiasPolicy::ExactMask).unwrap(), &r.world.test, &unconstrained(), threads).unwrap();
        images += before.len();
        identical += before.iter().zip(&after).filter(|(a, b)| a.0 == b.0 && a.1.tokens == b.1.tokens).count();
        let offset = caption_records(
            &Decoder::new(&r.expanded, BiasPolicy::Offset { delta: 2.0 }).unwrap(),
            &r.world.test,
            &unconstrained(),
            threads,
        )
        .unwrap();
        emission = emission.max(novel_emission_rate(&r.expanded, &offset));
    }
    let pass = identical == images && images >= 400 && emission == 0.0;
    report(
        out,
        2,
        "expansion invariance",
        pass,
        format!("exact-mask: {identical}/{images} identical over {} seeds; offset(2) max novel emission rate {emission}", runs.len()),
    );
}

// ---------------------------------------------------------------- 3

fn known_rows(out: &mut Vec<Outcome>, runs: &[SeedRun]) {
    let mut ok = 0;
    let mut rows = 0;
    for r in runs {
        let a = checkpoint::to_string(&r.model).unwrap();
        let b = checkpoint::to_string(&r.expanded).unwrap();
        let v = r.model.vocab_size();
        let (ra, rb) = (checkpoint::table_row_lines(&a, v), checkpoint::table_row_lines(&b, v));
        rows += ra.len();
        if ra.len() == 3 * v && ra == rb && checkpoint::from_str(&b).unwrap() == r.expanded {
            ok += 1;
        }
    }
    report(
        out,
        3,
        "known-row immutability",
        ok == runs.len(),
        format!("{ok}/{} checkpoints keep all {rows} pre-existing U/M/b rows byte-equal", runs.len()),
    );
}

// ---------------------------------------------------------------- 5

fn soundness(out: &mut Vec<Outcome>, runs: &[SeedRun]) {
    let beams = [1, 2, 3, 5];
    let mut decodes = 0;
    let mut accepting = 0;
    let mut unsound = 0;
    let mut groups_seen = BTreeMap::new();
    'outer: for r in runs {
        let decoder = Decoder::new(&r.expanded, BiasPolicy::default()).unwrap();
        for rec in &r.world.test {
            if decodes == 1000 {
                break 'outer;
            }
            let tags = resolve_tags(&r.expanded, rec, TagScope::All).unwrap();
            let set = build_constraints(&tags, &r.expanded.vocab, 3).unwrap();
            *groups_seen.entry(set.len()).or_insert(0) += 1;
            let res = constrained_beam_search(&decoder, rec.feature.as_slice(), &set, beams[decodes % beams.len()], 20).unwrap();
            decodes += 1;
            if res.accepting {
                accepting += 1;
                let toks = &res.best().tokens;
                if !set.groups().iter().all(|g| toks.iter().any(|t| g.contains(t))) {
                    unsound += 1;
                }
            }
        }
    }
    report(
        out,
        5,
        "constraint soundness",
        decodes == 1000 && unsound == 0 && accepting > 0,
        format!("{decodes} decodes, {accepting} accepting, {unsound} missing a group; groups per image {groups_seen:?}"),
    );
}

// ---------------------------------------------------------------- 6

struct TableRow {
    seed: u64,
    novel_unexpanded: f64,
    novel_expanded: f64,
    novel_random: f64,
    known_unexpanded: f64,
    known_expanded: f64,
}

fn table_direction(runs: &[SeedRun]) -> Vec<TableRow> {
    runs.iter()
        .map(|r| {
            let policy = BiasPolicy::default();
            let tables = random_novel_rows(&r.expanded, policy, 1_000 + r.seed).unwrap();
            let control = Decoder::with_tables(&r.expanded, tables).unwrap();
            let random = caption_records(&control, &r.world.test, &CaptionOptions::default(), default_threads()).unwrap();
            TableRow {
                seed: r.seed,
                novel_unexpanded: r.score(&r.unexpanded_caps, "novel"),
                novel_expanded: r.score(&r.expanded_caps, "novel"),
                novel_random: r.score(&random, "novel"),
                known_unexpanded: r.score(&r.unexpanded_caps, "known"),
                known_expanded: r.score(&r.expanded_caps, "known"),
            }
        })
        .collect()
}

fn report_table(out: &mut Vec<Outcome>, rows: &[TableRow], elapsed: Duration) {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&TableRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let unexp = mean(&|r| r.novel_unexpanded);
    let exp = mean(&|r| r.novel_expanded);
    let random = mean(&|r| r.novel_random);
    let known_change = mean(&|r| (r.known_expanded - r.known_unexpanded).abs());
    for r in rows {
        println!(
            "  seed {}: novel unexpanded {:.4} expanded+cbs {:.4} random rows {:.4}; known {:.4} -> {:.4}",
            r.seed, r.novel_unexpanded, r.novel_expanded, r.novel_random, r.known_unexpanded, r.known_expanded
        );
    }
    let pass = exp - unexp >= 0.05 && exp - random >= 0.05 && known_change <= 0.01 && elapsed < Duration::from_secs(600);
    report(
        out,
        6,
        "table direction",
        pass,
        format!(
            "novel: unexpanded {unexp:.4} < expanded {exp:.4} (random rows {random:.4}); known |change| {known_change:.4}; {} incl. training",
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 7

fn k_sweep(out: &mut Vec<Outcome>, run: &SeedRun, threads: usize) {
    let t = Instant::now();
    let novel_subset = &run.subsets[1];
    let novel_images: Vec<ImageRecord> = run.world.test.iter().filter(|r| novel_subset.contains(r)).cloned().collect();
    let score = |model: &CaptionModel| {
        let d = Decoder::new(model, BiasPolicy::default()).unwrap();
        let caps = caption_records(&d, &novel_images, &CaptionOptions::default(), threads).unwrap();
        evaluate(&texts(&caps), &run.world.test, &run.subsets).unwrap().mean("all").unwrap()
    };
    let all = score(&expand_with_entries(&run.model, &run.world.novel_pool_entries()).unwrap());
    let mut means = Vec::new();
    for k in [1usize, 5, 10, 50] {
        let total: f64 = (0..50)
            .map(|p| score(&expand_with_entries(&run.model, &emit_sample_files(&run.world, k, p).unwrap()).unwrap()))
            .sum();
        means.push((k, total / 50.0));
    }
    let monotone = means.windows(2).all(|w| w[1].1 >= w[0].1 - 0.02);
    let close = (means[3].1 - all).abs() <= 0.03;
    let list: Vec<String> = means.iter().map(|(k, m)| format!("k={k}:{m:.4}")).collect();
    report(
        out,
        7,
        "k-sweep",
        monotone && close,
        format!(
            "{} (50 patterns, {} novel images), all-samples {all:.4}, |k50 - all| {:.4}, {}",
            list.join(" "),
            novel_images.len(),
            (means[3].1 - all).abs(),
            secs(t.elapsed())
        ),
    );
}

// ---------------------------------------------------------------- 8

fn plural(out: &mut Vec<Outcome>, runs: &[SeedRun]) {
    let mut fractions = Vec::new();
    let mut per_seed = Vec::new();
    for r in runs {
        let novel = r.world.novel_names();
        let (mut chose, mut total) = (0, 0);
        for (id, cap) in &r.expanded_caps {
            let rec = r.world.test.iter().find(|x| &x.image_id == id).unwrap();
            for tag in rec.tags.iter().filter(|t| t.plural && novel.contains(&t.category)) {
                let cat = r.expanded.category_index(&tag.category).unwrap();
                let (s, p) = r.expanded.vocab.category_tokens(cat).unwrap();
                if cap.constraints.groups().iter().any(|g| g.len() == 2 && g.contains(&s) && g.contains(&p)) {
                    total += 1;
                    if cap.tokens.contains(&p) {
                        chose += 1;
                    }
                }
            }
        }
        per_seed.push(format!("{chose}/{total}"));
        fractions.push(chose as f64 / total.max(1) as f64);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    report(
        out,
        8,
        "plural selection",
        mean > 0.70,
        format!("mean {:.1}% (per seed {})", 100.0 * mean, per_seed.join(", ")),
    );
}

// ---------------------------------------------------------------- 10

fn determinism(out: &mut Vec<Outcome>, run: &SeedRun, threads: usize) {
    let t = Instant::now();
    let (world, model) = train_seed(run.seed);
    let same_world = world.train == run.world.train && world.test == run.world.test;
    let a = checkpoint::to_string(&run.model).unwrap();
    let b = checkpoint::to_string(&model).unwrap();
    let expanded = expand_with_entries(&model, &emit_sample_files(&world, 50, 0).unwrap()).unwrap();
    let ea = checkpoint::to_string(&run.expanded).unwrap();
    let eb = checkpoint::to_string(&expanded).unwrap();
    let d = Decoder::new(&expanded, BiasPolicy::default()).unwrap();
    let serial = caption_records(&d, &world.test, &CaptionOptions::default(), 1).unwrap();
    let parallel = caption_records(&d, &world.test, &CaptionOptions::default(), threads.max(4)).unwrap();
    let caps_a = format_captions(&run.expanded_caps);
    let pass = same_world && a == b && ea == eb && caps_a == format_captions(&serial) && caps_a == format_captions(&parallel);
    report(
        out,
        10,
        "determinism",
        pass,
        format!(
            "seed {} retrained: checkpoint {} bytes {}, expanded {}, captions {} (1 and {} threads); first run trained in {}, rerun {}",
            run.seed,
            a.len(),
            if a == b { "identical" } else { "DIFFER" },
            if ea == eb { "identical" } else { "DIFFER" },
            if caps_a == format_captions(&serial) && caps_a == format_captions(&parallel) { "identical" } else { "DIFFER" },
            threads.max(4),
            secs(run.train_time),
            secs(t.elapsed())
        ),
    );
}
