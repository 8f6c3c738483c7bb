use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use novcap::checkpoint;

const SMALL: &str = "[world]\ntrain_images = 150\nval_images = 10\ntest_images = 40\nnovel_pool = 60\n\
[model]\nembed_dim = 12\nhidden_dim = 12\n[train]\nepochs = 2\n";

fn novcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_novcap")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = novcap(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failure with the given exit code and a one-line diagnostic.
fn fails(args: &[&str], code: i32) -> String {
    let out = novcap(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Run {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Run { dir }
    }

    fn p(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn world(&self) {
        ok(&["--config", &self.p("small.toml"), "genworld", "--out", &self.p("w")]);
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let mut args = vec![
            "--config".to_string(),
            self.p("small.toml"),
            "train".into(),
            "--dataset".into(),
            self.p("w/train.jsonl"),
            "--known-features".into(),
            self.p("w/known_features.jsonl"),
            "--held-out".into(),
            self.p("w/novel_categories.jsonl"),
            "--out".into(),
            self.p(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn full_pipeline() {
    let r = Run::new();
    r.world();
    r.train("m.ckpt", &[]);
    let curve = fs::read_to_string(r.p("m.ckpt.loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);

    let table = ok(&["expand", "--checkpoint", &r.p("m.ckpt"), "--features", &r.p("w/novel_k5.jsonl"), "--out", &r.p("e.ckpt")]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 8, "{table}");
    assert!(rows.iter().any(|l| l.ends_with("\tzebra\tsingular")));
    assert!(rows.iter().any(|l| l.contains("\tbuses\tbus\tplural")));
    let before = checkpoint::load(Path::new(&r.p("m.ckpt"))).unwrap();
    let after = checkpoint::load(Path::new(&r.p("e.ckpt"))).unwrap();
    assert_eq!(after.vocab_size(), before.vocab_size() + 8);

    let err = fails(&["expand", "--checkpoint", &r.p("e.ckpt"), "--features", &r.p("w/novel_k5.jsonl"), "--out", &r.p("e2.ckpt")], 2);
    assert!(err.contains("already"), "{err}");

    ok(&["caption", "--checkpoint", &r.p("e.ckpt"), "--dataset", &r.p("w/test.jsonl"), "--out", &r.p("c.tsv"), "--beam_size", "1"]);
    let caps = fs::read_to_string(r.p("c.tsv")).unwrap();
    let test = novcap::features::ingest_dataset_file(Path::new(&r.p("w/test.jsonl")), None).unwrap();
    assert_eq!(caps.lines().count(), test.len());
    let ids: Vec<&str> = caps.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    for line in caps.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4, "{line}");
        cols[2].parse::<f64>().unwrap();
        // beam size one still satisfies every constraint
        if cols[3] != "-" {
            let (set, n) = cols[3].split_once('/').unwrap();
            let got = set.trim_matches(|c| c == '{' || c == '}').split(',').filter(|s| !s.is_empty()).count();
            assert_eq!(got.to_string(), n, "{line}");
        }
    }

    let summary = ok(&["eval", "--captions", &r.p("c.tsv"), "--dataset", &r.p("w/test.jsonl"), "--checkpoint", &r.p("e.ckpt"), "--out", &r.p("s.csv")]);
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "name,count,mean_cider");
    assert!(lines[1].starts_with(&format!("all,{},", test.len())));
    assert!(lines[2].starts_with("novel,") && lines[3].starts_with("known,"));
    assert_eq!(fs::read_to_string(r.p("s.csv")).unwrap(), summary);
    let detail = fs::read_to_string(r.p("s.csv.detail.csv")).unwrap();
    assert_eq!(detail.lines().count(), test.len() + 1);

    // same category list through a file
    ok(&["eval", "--captions", &r.p("c.tsv"), "--dataset", &r.p("w/test.jsonl"), "--novel", &r.p("w/novel_categories.jsonl"), "--out", &r.p("s2.csv")]);
    assert_eq!(read(r.p("s2.csv")), read(r.p("s.csv")));
}

#[test]
fn exact_mask_expansion_leaves_unconstrained_captions_alone() {
    let r = Run::new();
    r.world();
    r.train("m.ckpt", &["--bias-policy", "exact-mask"]);
    ok(&["expand", "--checkpoint", &r.p("m.ckpt"), "--features", &r.p("w/novel_k10.jsonl"), "--out", &r.p("e.ckpt")]);
    for (ckpt, out) in [("m.ckpt", "a.tsv"), ("e.ckpt", "b.tsv")] {
        ok(&["caption", "--checkpoint", &r.p(ckpt), "--dataset", &r.p("w/test.jsonl"), "--out", &r.p(out), "--constraints", "off"]);
    }
    assert_eq!(read(r.p("a.tsv")), read(r.p("b.tsv")));

    // known rows of the table are untouched by expansion
    let a = fs::read_to_string(r.p("m.ckpt")).unwrap();
    let b = fs::read_to_string(r.p("e.ckpt")).unwrap();
    let v = checkpoint::from_str(&a).unwrap().vocab_size();
    assert_eq!(checkpoint::table_row_lines(&a, v), checkpoint::table_row_lines(&b, v));
}

#[test]
fn reruns_are_byte_identical() {
    let r = Run::new();
    r.world();
    ok(&["--config", &r.p("small.toml"), "genworld", "--out", &r.p("w2")]);
    for f in ["train.jsonl", "test.jsonl", "novel_k1.jsonl", "known_features.jsonl"] {
        assert_eq!(read(r.p(&format!("w/{f}"))), read(r.p(&format!("w2/{f}"))), "{f}");
    }
    r.train("a.ckpt", &["--seed", "3"]);
    r.train("b.ckpt", &["--seed", "3"]);
    assert_eq!(read(r.p("a.ckpt")), read(r.p("b.ckpt")));
    r.train("c.ckpt", &["--seed", "4"]);
    assert_ne!(read(r.p("a.ckpt")), read(r.p("c.ckpt")));
    for (t, out) in [("1", "x.tsv"), ("3", "y.tsv")] {
        ok(&["caption", "--checkpoint", &r.p("a.ckpt"), "--dataset", &r.p("w/test.jsonl"), "--out", &r.p(out), "--threads", t, "--constraints", "off"]);
    }
    assert_eq!(read(r.p("x.tsv")), read(r.p("y.tsv")));
}

#[test]
fn data_errors() {
    let r = Run::new();
    r.world();
    let train = |dataset: &str| {
        fails(
            &[
                "--config",
                &r.p("small.toml"),
                "train",
                "--dataset",
                dataset,
                "--known-features",
                &r.p("w/known_features.jsonl"),
                "--held-out",
                &r.p("w/novel_categories.jsonl"),
                "--out",
                &r.p("x.ckpt"),
            ],
            2,
        )
    };
    // held-out purity: test split contains novel categories
    let err = train(&r.p("w/test.jsonl"));
    assert!(err.contains("held-out"), "{err}");

    let text = fs::read_to_string(r.p("w/train.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"image_id\": \"broken\"";
    fs::write(r.p("bad.jsonl"), lines.join("\n")).unwrap();
    let err = train(&r.p("bad.jsonl"));
    assert!(err.contains("bad.jsonl:7:"), "{err}");
    assert!(!PathBuf::from(r.p("x.ckpt")).exists());

    let err = fails(&["caption", "--checkpoint", &r.p("missing.ckpt"), "--dataset", &r.p("w/test.jsonl"), "--out", &r.p("c.tsv")], 2);
    assert!(err.starts_with("novcap: "));

    fs::write(r.p("bad.ckpt"), "novcap-checkpoint v99\n").unwrap();
    let err = fails(&["caption", "--checkpoint", &r.p("bad.ckpt"), "--dataset", &r.p("w/test.jsonl"), "--out", &r.p("c.tsv")], 2);
    assert!(err.contains("version 99"), "{err}");
}

#[test]
fn usage_and_config_errors() {
    let r = Run::new();
    fails(&[], 1);
    fails(&["bogus"], 1);
    fails(&["caption", "--checkpoint", "x"], 1);
    fails(&["caption", "--checkpoint", "x", "--dataset", "y", "--out", "z", "--constraints", "maybe"], 1);
    fs::write(r.p("bad.toml"), "[decode]\nbeam_size = 0\n").unwrap();
    fails(&["--config", &r.p("bad.toml"), "gradcheck"], 1);
    fs::write(r.p("typo.toml"), "[decode]\nbeam = 3\n").unwrap();
    fails(&["--config", &r.p("typo.toml"), "gradcheck"], 1);
    fails(&["--config", &r.p("nothere.toml"), "gradcheck"], 1);
    // a flag beats the file
    fs::write(r.p("few.toml"), "[gradcheck]\nseeds = 0\n").unwrap();
    fails(&["--config", &r.p("few.toml"), "gradcheck"], 1);
    ok(&["--config", &r.p("few.toml"), "gradcheck", "--seeds", "1"]);
    assert!(novcap(&["--help"]).status.success());
}

#[test]
fn gradcheck_reports_blocks_and_catches_a_broken_gradient() {
    let out = ok(&["gradcheck", "--seeds", "2"]);
    let blocks = novcap::gradcheck::block_names();
    assert_eq!(out.lines().count(), blocks.len());
    assert!(out.lines().all(|l| l.ends_with("\tpass")), "{out}");

    let broken = novcap(&["gradcheck", "--seeds", "2", "--break-block", "converter.output_plural.weight"]);
    assert_eq!(broken.status.code(), Some(3));
    let stdout = String::from_utf8(broken.stdout).unwrap();
    let failing: Vec<&str> = stdout.lines().filter(|l| l.ends_with("\tFAIL")).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0].starts_with("converter.output_plural.weight\t"));
    fails(&["gradcheck", "--break-block", "no.such.block"], 1);
}
