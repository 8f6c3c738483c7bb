//! Command-line front end. `run` returns the process exit code; every error
//! is reported as one line on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cbs::Decoder;
use crate::config::RunConfig;
use crate::converter::BiasPolicy;
use crate::error::{Error, Result};
use crate::features::{ingest_dataset_file, ingest_feature_file, read_feature_entries, CategoryStatus};
use crate::metrics::{evaluate, standard_subsets};
use crate::microworld::{generate, held_out_violations, write_world};
use crate::model::CaptionModel;
use crate::pipeline::{caption_records, default_threads, expand_with_entries, format_captions, parse_caption_lines, train_from_records};
use crate::vocab::{read_category_list, Number, TokenKind};
use crate::{captioner, checkpoint, gradcheck};

#[derive(Parser, Debug)]
#[command(name = "novcap", version, about = "Novel-object captioning with online vocabulary expansion")]
struct Cli {
    /// TOML run configuration; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic micro-world dataset.
    Genworld(GenworldArgs),
    /// Train a captioner from scratch on known categories.
    Train(TrainArgs),
    /// Add novel categories to a trained checkpoint.
    Expand(ExpandArgs),
    /// Caption every image of a dataset.
    Caption(CaptionArgs),
    /// Score a caption file with CIDEr-D.
    Eval(EvalArgs),
    /// Finite-difference audit of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenworldArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset (JSONL image records).
    #[arg(long)]
    dataset: PathBuf,
    /// Feature samples of the known categories.
    #[arg(long)]
    known_features: PathBuf,
    /// Category list that must not occur in the training captions.
    #[arg(long)]
    held_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, alias = "bias_policy")]
    bias_policy: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct ExpandArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature samples of the categories to add.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args, Debug)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, alias = "beam_size")]
    beam_size: Option<usize>,
    #[arg(long, alias = "max_len")]
    max_len: Option<usize>,
    #[arg(long, value_enum)]
    constraints: Option<Switch>,
    #[arg(long, alias = "article_fix", value_enum)]
    article_fix: Option<Switch>,
    /// `novel` or `all`.
    #[arg(long)]
    scope: Option<String>,
    /// Overrides the policy stored in the checkpoint.
    #[arg(long, alias = "bias_policy")]
    bias_policy: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Caption file as written by `caption`.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Category list defining the novel/known subsets.
    #[arg(long, conflicts_with = "checkpoint")]
    novel: Option<PathBuf>,
    /// Take the novel categories from an expanded checkpoint instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `name,count,mean_cider` summary.
    #[arg(long)]
    out: PathBuf,
    /// Per-image scores; defaults to `<out>.detail.csv`.
    #[arg(long)]
    detail: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    first_seed: Option<u64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Test hook: corrupt the analytic gradient of this block.
    #[arg(long)]
    break_block: Option<String>,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            // clap spreads its message over several lines; keep the part
            // before the usage block on one line
            let text = e.to_string();
            let parts: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("novcap: {}", parts.join(" ").trim_start_matches("error: "));
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("novcap: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Genworld(a) => {
            if let Some(s) = a.seed {
                cfg.world.seed = s;
            }
            cfg.validate()?;
            genworld(&cfg, &a.out)
        }
        Command::Train(a) => {
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.seed, a.seed);
            set(&mut cfg.train.learning_rate, a.learning_rate);
            set(&mut cfg.model.bias_policy, a.bias_policy.clone());
            set(&mut cfg.model.delta, a.delta);
            cfg.validate()?;
            train(&cfg, &a)
        }
        Command::Expand(a) => {
            cfg.validate()?;
            expand(&a)
        }
        Command::Caption(a) => {
            set(&mut cfg.decode.beam_size, a.beam_size);
            set(&mut cfg.decode.max_len, a.max_len);
            set(&mut cfg.decode.constraints, a.constraints.map(Switch::on));
            set(&mut cfg.decode.article_fix, a.article_fix.map(Switch::on));
            set(&mut cfg.decode.scope, a.scope.clone());
            set(&mut cfg.decode.threads, a.threads);
            set(&mut cfg.model.delta, a.delta);
            cfg.validate()?;
            let policy = match &a.bias_policy {
                Some(name) => Some(BiasPolicy::parse(name, cfg.model.delta)?),
                None => None,
            };
            caption(&cfg, &a, policy)
        }
        Command::Eval(a) => {
            cfg.validate()?;
            eval(&a)
        }
        Command::Gradcheck(a) => {
            set(&mut cfg.gradcheck.seeds, a.seeds);
            set(&mut cfg.gradcheck.first_seed, a.first_seed);
            set(&mut cfg.gradcheck.tolerance, a.tolerance);
            cfg.validate()?;
            gradcheck_cmd(&cfg, a.break_block.as_deref())
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn genworld(cfg: &RunConfig, out: &Path) -> Result<()> {
    let world = generate(&cfg.world)?;
    let files = write_world(&world, out)?;
    println!("train\t{}\t{}", world.train.len(), files.train.display());
    println!("val\t{}\t{}", world.val.len(), files.val.display());
    println!("test\t{}\t{}", world.test.len(), files.test.display());
    println!("known features\t{}", files.known_features.display());
    println!("novel features\t{}", files.novel_features.display());
    println!("novel categories\t{}", files.novel_categories.display());
    for (k, p) in &files.k_samples {
        println!("k={k}\t{}", p.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let model_cfg = cfg.model.to_model_config()?;
    let train_cfg = cfg.train.to_train_config()?;
    let records = ingest_dataset_file(&a.dataset, Some(model_cfg.feature_dim))?;
    let known = ingest_feature_file(&a.known_features, Some(model_cfg.feature_dim), false, CategoryStatus::Known)?;
    if let Some(path) = &a.held_out {
        let held = read_category_list(path)?;
        if let Some((line, msg)) = held_out_violations(&records, &held).into_iter().next() {
            return Err(Error::Parse {
                path: a.dataset.display().to_string(),
                line,
                message: format!("held-out category in training data: {msg}"),
            });
        }
    }
    for (i, r) in records.iter().enumerate() {
        if let Some(t) = r.tags.iter().find(|t| !known.iter().any(|k| k.name == t.category)) {
            return Err(Error::Parse {
                path: a.dataset.display().to_string(),
                line: i + 1,
                message: format!("tag '{}' is not a known category", t.category),
            });
        }
    }
    let (model, curve) = train_from_records(&records, known, model_cfg, &train_cfg, cfg.train.min_count)?;
    checkpoint::save(&model, &a.out)?;
    let curve_path = a.loss_curve.clone().unwrap_or_else(|| suffixed(&a.out, ".loss.csv"));
    fs::write(&curve_path, captioner::format_loss_curve(&curve))?;
    println!(
        "trained {} epochs, final loss {:.6}, vocabulary {}; wrote {} and {}",
        curve.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        model.vocab_size(),
        a.out.display(),
        curve_path.display()
    );
    Ok(())
}

fn expand(a: &ExpandArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let entries = read_feature_entries(&a.features)?;
    let expanded = expand_with_entries(&model, &entries)?;
    checkpoint::save(&expanded, &a.out)?;
    println!("token_id\tsurface\tcategory\tnumber");
    for (id, e) in expanded.vocab.entries().iter().enumerate().skip(model.vocab_size()) {
        if let TokenKind::Category { category, number } = e.kind {
            let number = match number {
                Number::Singular => "singular",
                Number::Plural => "plural",
            };
            println!("{id}\t{}\t{}\t{number}", e.surface, expanded.categories[category].name);
        }
    }
    Ok(())
}

fn caption(cfg: &RunConfig, a: &CaptionArgs, policy: Option<BiasPolicy>) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let records = ingest_dataset_file(&a.dataset, Some(model.config.feature_dim))?;
    let decoder = Decoder::new(&model, policy.unwrap_or(model.config.bias_policy))?;
    let opts = cfg.decode.to_options()?;
    let threads = if cfg.decode.threads == 0 { default_threads() } else { cfg.decode.threads };
    let captions = caption_records(&decoder, &records, &opts, threads)?;
    fs::write(&a.out, format_captions(&captions))?;
    let unmet = captions.iter().filter(|(_, c)| c.satisfied.len() < c.constraints.len()).count();
    println!("captioned {} images ({unmet} with unmet constraints); wrote {}", captions.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let text = fs::read_to_string(&a.captions)?;
    let outputs = parse_caption_lines(&text, &a.captions.display().to_string())?;
    let novel: Vec<String> = match (&a.novel, &a.checkpoint) {
        (Some(p), _) => read_category_list(p)?.into_iter().map(|c| c.name).collect(),
        (None, Some(p)) => {
            let m: CaptionModel = checkpoint::load(p)?;
            (0..m.categories.len())
                .filter(|&i| m.is_novel_category(i))
                .map(|i| m.categories[i].name.clone())
                .collect()
        }
        (None, None) => Vec::new(),
    };
    let dataset = ingest_dataset_file(&a.dataset, None)?;
    let report = evaluate(&outputs, &dataset, &standard_subsets(&novel))?;
    let summary = report.summary_csv();
    fs::write(&a.out, &summary)?;
    let detail = a.detail.clone().unwrap_or_else(|| suffixed(&a.out, ".detail.csv"));
    fs::write(&detail, report.detail_csv())?;
    print!("{summary}");
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, broken: Option<&str>) -> Result<()> {
    if let Some(b) = broken {
        if !gradcheck::block_names().contains(&b) {
            return Err(Error::Config(format!("unknown parameter block '{b}'")));
        }
    }
    let g = &cfg.gradcheck;
    let report = gradcheck::gradient_audit(g.first_seed, g.seeds, g.tolerance, broken)?;
    let mut failed = Vec::new();
    for b in &report {
        println!("{}\t{:.3e}\t{}", b.name, b.max_relative_error, if b.passed { "pass" } else { "FAIL" });
        if !b.passed {
            failed.push(b.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            g.tolerance
        )))
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
