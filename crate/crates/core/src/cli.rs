//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors (usage text on
//! the error stream), 2 on data or runtime errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::augment::{make_views, ViewStrategy};
use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocab, pair_hard_negatives, Batch, Dataset, Split, Vocab};
use crate::metrics::{aggregate, restrict_to_pair};
use crate::posttrain::{generate_post_training, write_post_examples, PostGenConfig};
use crate::rng::{SeedTree, Stream};
use crate::synthetic::{generate, SyntheticConfig};
use crate::train::{
    ablate, default_clip, default_grid, embedding_margin, run_training, score_groups, write_history, RunOptions,
    TrainConfig, Trainer,
};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "dclr", version, about = "Contrastive response selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect corpus files (or generate a synthetic one) and build a vocabulary.
    Prepare(PrepareArgs),
    /// Train an encoder and save the best checkpoint.
    Train(TrainArgs),
    /// Score an evaluation set with a checkpoint.
    Eval(EvalArgs),
    /// Print anchors next to their augmented views.
    AugmentPreview(PreviewArgs),
    /// Generate masked-LM / next-sentence post-training examples.
    Postgen(PostgenArgs),
    /// Train one model per ablation cell and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Training TSV (optionally gzipped).
    #[arg(long, required_unless_present = "synthetic")]
    train: Option<PathBuf>,
    /// Additional evaluation files as NAME=PATH.
    #[arg(long = "eval", value_name = "NAME=PATH")]
    evals: Vec<String>,
    /// Generate a synthetic corpus with this many dialogues instead of reading files.
    #[arg(long, value_name = "DIALOGUES", conflicts_with = "train")]
    synthetic: Option<usize>,
    /// Seed for the synthetic generator.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for the vocabulary (and synthetic splits).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Maximum vocabulary size including reserved tokens.
    #[arg(long, default_value_t = 50_000)]
    max_vocab: usize,
    /// Minimum token frequency.
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
}

#[derive(Debug, Args)]
struct ModelFlags {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Margin added to hard-negative similarities.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the cross-entropy term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Positive-view strategy.
    #[arg(long, ignore_case = true, value_parser = PossibleValuesParser::new(["none", "drop", "sts", "sr", "tl"])
        .map(|s| s.to_lowercase()))]
    strategy: Option<String>,
    /// Enable or disable the contrastive term.
    #[arg(long)]
    scl: Option<bool>,
    /// Feed positive views into the cross-entropy term.
    #[arg(long)]
    ce_views: bool,
    /// Pairs per batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak Adam learning rate (decays linearly to zero).
    #[arg(long)]
    lr: Option<f64>,
    /// Passes over the training pairs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Evaluate on the dev set every N steps.
    #[arg(long)]
    eval_interval: Option<u64>,
    /// Root seed for initialization, shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    /// Token embedding width.
    #[arg(long)]
    dim: Option<usize>,
    /// Hidden width of the projection head.
    #[arg(long)]
    hidden: Option<usize>,
    /// Encoded sequence length in tokens.
    #[arg(long)]
    max_len: Option<usize>,
    /// Dropout rate used for dropout views.
    #[arg(long)]
    dropout: Option<f64>,
    /// Global gradient-norm cap, or `none`.
    #[arg(long)]
    clip_norm: Option<String>,
}

impl ModelFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k: &'static str, s: Option<String>| {
            if let Some(s) = s {
                v.push((k, s));
            }
        };
        put("tau", self.tau.map(|x| x.to_string()));
        put("alpha", self.alpha.map(|x| x.to_string()));
        put("lambda", self.lambda.map(|x| x.to_string()));
        put("strategy", self.strategy.clone());
        put("scl", self.scl.map(|x| x.to_string()));
        put("ce-views", self.ce_views.then(|| "true".to_owned()));
        put("batch-size", self.batch_size.map(|x| x.to_string()));
        put("lr", self.lr.map(|x| x.to_string()));
        put("epochs", self.epochs.map(|x| x.to_string()));
        put("eval-interval", self.eval_interval.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("dim", self.dim.map(|x| x.to_string()));
        put("hidden", self.hidden.map(|x| x.to_string()));
        put("max-len", self.max_len.map(|x| x.to_string()));
        put("dropout", self.dropout.map(|x| x.to_string()));
        put("clip-norm", self.clip_norm.clone());
        v
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training TSV.
    #[arg(long)]
    train: PathBuf,
    /// Dev TSV used for evaluation and model selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Vocabulary written by `prepare`.
    #[arg(long)]
    vocab: PathBuf,
    /// Where to write the best checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Also write the final state (for resuming) here.
    #[arg(long)]
    last: Option<PathBuf>,
    /// Continue from this checkpoint; its stored configuration is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many total steps.
    #[arg(long)]
    stop_at: Option<u64>,
    /// JSON-lines training history.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Candidate group size of the dev set (default: group by context).
    #[arg(long)]
    group_size: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with.
    #[arg(long)]
    vocab: PathBuf,
    /// Evaluation TSV.
    #[arg(long)]
    data: PathBuf,
    /// Candidate group size (default: group by context).
    #[arg(long)]
    group_size: Option<usize>,
    /// Keep only the first positive and first negative per group (R2@1 protocol).
    #[arg(long)]
    pair: bool,
    /// Also report the embedding margin on the paired data.
    #[arg(long)]
    margin: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    /// TSV with positive/negative pairs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "tl", ignore_case = true,
        value_parser = PossibleValuesParser::new(["none", "drop", "sts", "sr", "tl"]).map(|s| s.to_lowercase()))]
    strategy: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of anchors to show.
    #[arg(long, default_value_t = 4)]
    count: usize,
}

#[derive(Debug, Args)]
struct PostgenArgs {
    /// Source TSV; positive triples are used as dialogues.
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary written by `prepare`.
    #[arg(long)]
    vocab: PathBuf,
    /// Number of examples to generate.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Binary output file; required unless --preview.
    #[arg(long, required_unless_present = "preview")]
    out: Option<PathBuf>,
    /// Print examples as text instead of writing the binary file.
    #[arg(long)]
    preview: bool,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Training TSV.
    #[arg(long)]
    train: PathBuf,
    /// Dev TSV used for model selection.
    #[arg(long)]
    dev: PathBuf,
    /// Vocabulary written by `prepare`.
    #[arg(long)]
    vocab: PathBuf,
    /// Evaluation sets as NAME=PATH or NAME=PATH:GROUP_SIZE (default: dev).
    #[arg(long = "eval", value_name = "NAME=PATH[:GROUP]")]
    evals: Vec<String>,
    /// Dev candidate group size.
    #[arg(long)]
    group_size: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs one command; returns the process exit code.
pub fn dispatch(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut cmd = Cli::command();
    let matches = match cmd.try_get_matches_from_mut(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
                if !text.contains("Usage:") {
                    let usage = args
                        .get(1)
                        .and_then(|name| cmd.find_subcommand_mut(name))
                        .map(|c| c.render_usage().to_string())
                        .unwrap_or_else(|| cmd.render_usage().to_string());
                    let _ = writeln!(err, "\n{usage}");
                }
            }
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let result = match &cli.command {
        Command::Prepare(a) => prepare(a, sub, out, err),
        Command::Train(a) => train(a, sub, out, err),
        Command::Eval(a) => eval(a, sub, out),
        Command::AugmentPreview(a) => preview(a, sub, out),
        Command::Postgen(a) => postgen(a, sub, out, err),
        Command::Ablate(a) => ablation(a, sub, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let name = matches.subcommand_name().unwrap_or("");
            let usage = cmd
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            let _ = writeln!(err, "error: {msg}\n\n{usage}");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

/// Banner lines for every argument of a subcommand, with their origin.
fn arg_banner(m: &ArgMatches) -> Vec<(String, String, &'static str)> {
    let mut rows = Vec::new();
    for id in m.ids() {
        let name = id.as_str();
        if name == "config" || name.starts_with(|c: char| c.is_ascii_uppercase()) || m.try_get_raw(name).is_err() {
            continue;
        }
        let value = match m.get_raw(name) {
            Some(vals) => vals.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","),
            None => "-".to_owned(),
        };
        let source = match m.value_source(name) {
            Some(ValueSource::CommandLine) => "flag",
            Some(ValueSource::EnvVariable) => "env",
            _ => "default",
        };
        rows.push((name.replace('_', "-"), value, source));
    }
    rows
}

fn print_banner(out: &mut dyn Write, command: &str, rows: &[(String, String, &'static str)]) -> CliResult<()> {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut s = format!("# dclr {command}: resolved configuration\n");
    for (k, v, src) in rows {
        let _ = writeln!(s, "#   {k:<width$} = {v}  [{src}]");
    }
    write_out(out, &s)
}

fn write_out(out: &mut dyn Write, s: &str) -> CliResult<()> {
    out.write_all(s.as_bytes())
        .map_err(|e| Failure::Runtime(Error::io("<stdout>", e)))
}

/// Parses a `key = value` file. Blank lines and `#` comments are ignored.
pub fn parse_config_file(text: &str) -> crate::Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !TrainConfig::KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        kv.insert(key, v.trim().to_owned());
    }
    Ok(kv)
}

/// Applies defaults, then the config file, then flags; records each key's origin.
fn resolve_config(flags: &ModelFlags) -> CliResult<(TrainConfig, BTreeMap<String, &'static str>)> {
    let mut cfg = TrainConfig::default();
    let mut source: BTreeMap<String, &'static str> =
        TrainConfig::KEYS.iter().map(|k| ((*k).to_owned(), "default")).collect();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e)))?;
        for (k, v) in parse_config_file(&text)? {
            cfg.set(&k, &v)?;
            source.insert(k, "file");
        }
    }
    for (k, v) in flags.overrides() {
        cfg.set(k, &v)?;
        source.insert(k.to_owned(), "flag");
    }
    if source["clip-norm"] == "default" {
        cfg.clip_norm = default_clip(cfg.loss.temperature);
    }
    Ok((cfg, source))
}

fn config_rows(cfg: &TrainConfig, source: &BTreeMap<String, &'static str>) -> Vec<(String, String, &'static str)> {
    cfg.to_kv()
        .into_iter()
        .map(|(k, v)| {
            let src = source.get(&k).copied().unwrap_or("default");
            (k, v, src)
        })
        .collect()
}

fn load(path: &Path, split: Split) -> CliResult<Dataset> {
    Ok(Dataset::load(path, split)?)
}

fn load_vocab(path: &Path) -> CliResult<Vocab> {
    Ok(Vocab::load(path)?)
}

fn parse_named(named: &str) -> CliResult<(String, PathBuf, Option<usize>)> {
    let (name, rest) = named
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("expected NAME=PATH, got {named:?}")))?;
    let (path, group) = match rest.rsplit_once(':') {
        Some((p, g)) if !g.is_empty() && g.chars().all(|c| c.is_ascii_digit()) => {
            let g: usize = g.parse().map_err(|_| Failure::Usage(format!("bad group size in {named:?}")))?;
            (p, Some(g))
        }
        _ => (rest, None),
    };
    Ok((name.to_owned(), PathBuf::from(path), group))
}

fn ratio_line(name: &str, ds: &Dataset) -> String {
    let r = ds.ratio();
    format!(
        "{name}: {} examples, {} positive, {} negative, pos:neg = {r}",
        ds.len(),
        r.positives,
        r.negatives
    )
}

fn prepare(a: &PrepareArgs, m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let mut sets: Vec<(String, Dataset)> = Vec::new();
    if let Some(n) = a.synthetic {
        let synth = SyntheticConfig {
            dialogues: n,
            ..SyntheticConfig::default()
        };
        if n < 2 {
            return Err(Failure::Usage("--synthetic needs at least 2 dialogues".into()));
        }
        let (train, dev) = generate(&synth, a.seed);
        std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Runtime(Error::io(&a.out_dir, e)))?;
        for (name, ds) in [("train", &train), ("dev", &dev)] {
            let path = a.out_dir.join(format!("{name}.tsv"));
            let f = std::fs::File::create(&path).map_err(|e| Failure::Runtime(Error::io(&path, e)))?;
            ds.write_tsv(std::io::BufWriter::new(f))
                .map_err(|e| Failure::Runtime(Error::io(&path, e)))?;
        }
        sets.push(("train".into(), train));
        sets.push(("dev".into(), dev));
    } else {
        let path = a.train.as_ref().expect("clap enforces --train");
        sets.push(("train".into(), load(path, Split::Train)?));
    }
    for arg in &a.evals {
        let (name, path, _) = parse_named(arg)?;
        sets.push((name, load(&path, Split::Test)?));
    }
    print_banner(out, "prepare", &arg_banner(m))?;
    let vocab = build_vocab(&sets[0].1, a.max_vocab, a.min_freq)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Runtime(Error::io(&a.out_dir, e)))?;
    let vocab_path = a.out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let mut s = String::new();
    for (name, ds) in &sets {
        let _ = writeln!(s, "{}", ratio_line(name, ds));
    }
    let (pairs, report) = pair_hard_negatives(&sets[0].1)?;
    let _ = writeln!(
        s,
        "train pairs: {} (dropped positives {}, extra negatives {})",
        pairs.len(),
        report.dropped_positives,
        report.extra_negatives
    );
    let _ = writeln!(s, "vocabulary: {} tokens -> {}", vocab.len(), vocab_path.display());
    let _ = writeln!(s, "vocabulary digest: {}", vocab.digest());
    write_out(out, &s)?;
    let _ = report.diagnostics.write_to(err);
    Ok(())
}

fn train(a: &TrainArgs, m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let resume = match &a.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let (cfg, source) = match &resume {
        Some(ck) => {
            let src = TrainConfig::KEYS.iter().map(|k| ((*k).to_owned(), "checkpoint")).collect();
            (ck.config, src)
        }
        None => resolve_config(&a.model)?,
    };
    let vocab = load_vocab(&a.vocab)?;
    let train_ds = load(&a.train, Split::Train)?;
    let dev = match &a.dev {
        Some(p) => Some(load(p, Split::Dev)?),
        None => None,
    };
    let (pairs, report) = pair_hard_negatives(&train_ds)?;
    let _ = report.diagnostics.write_to(&mut *err);
    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(ck, &vocab, &pairs)?,
        None => Trainer::new(cfg, &vocab, &pairs)?,
    };
    let mut source = source;
    if resume.is_none() {
        source.insert("vocab-size".into(), "vocab");
    }
    let mut rows = config_rows(trainer.config(), &source);
    rows.extend(
        arg_banner(m)
            .into_iter()
            .filter(|r| !TrainConfig::KEYS.contains(&r.0.as_str())),
    );
    print_banner(out, "train", &rows)?;
    write_out(
        out,
        &format!(
            "{} pairs, {} steps per epoch, {} total steps, starting at step {}\n",
            pairs.len(),
            trainer.steps_per_epoch(),
            trainer.total_steps(),
            trainer.step()
        ),
    )?;
    let opts = RunOptions {
        dev_group_size: a.group_size,
        stop_at: a.stop_at,
    };
    let mut lines = Vec::new();
    let outcome = run_training(&mut trainer, dev.as_ref(), opts, |l| lines.push(l.to_owned()));
    for l in &lines {
        write_out(out, &format!("{l}\n"))?;
    }
    let outcome = outcome?;
    outcome.best.save(&a.out)?;
    if let Some(p) = &a.last {
        outcome.last.save(p)?;
    }
    if let Some(p) = &a.history {
        let f = std::fs::File::create(p).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        write_history(std::io::BufWriter::new(f), &outcome.history).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
    }
    let spe = trainer.steps_per_epoch().max(1) as usize;
    for (i, l) in outcome.epoch_losses(spe).iter().enumerate() {
        write_out(out, &format!("epoch {} mean loss {l:.6}\n", i + 1))?;
    }
    write_out(
        out,
        &format!(
            "saved best checkpoint (step {}) to {}\n",
            outcome.best.step,
            a.out.display()
        ),
    )
}

fn eval(a: &EvalArgs, m: &ArgMatches, out: &mut dyn Write) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let vocab = load_vocab(&a.vocab)?;
    if ck.vocab_digest != vocab.digest() {
        return Err(Failure::Runtime(Error::InvalidInput(
            "checkpoint was trained with a different vocabulary".into(),
        )));
    }
    let ds = load(&a.data, Split::Test)?;
    let mut rows = arg_banner(m);
    rows.extend(config_rows(
        &ck.config,
        &TrainConfig::KEYS.iter().map(|k| ((*k).to_owned(), "checkpoint")).collect(),
    ));
    print_banner(out, "eval", &rows)?;
    let mut groups = score_groups(&ck.params, &vocab, &ds, a.group_size)?;
    if a.pair {
        groups = restrict_to_pair(&groups);
    }
    let report = aggregate(&groups)?;
    let margin = if a.margin {
        let (pairs, _) = pair_hard_negatives(&ds)?;
        Some(embedding_margin(&ck.params, &vocab, &pairs, ck.config.seed)?)
    } else {
        None
    };
    if a.json {
        let mut v = serde_json::to_value(&report).map_err(|e| Failure::Runtime(Error::Corrupt(e.to_string())))?;
        if let Some(mg) = margin {
            v["margin"] = serde_json::json!(mg);
        }
        write_out(out, &format!("{v}\n"))
    } else {
        let mut s = format!("{report}\n");
        if let Some(mg) = margin {
            let _ = writeln!(s, "embedding margin: {mg:.6}");
        }
        write_out(out, &s)
    }
}

fn preview(a: &PreviewArgs, m: &ArgMatches, out: &mut dyn Write) -> CliResult<()> {
    let ds = load(&a.data, Split::Train)?;
    let (pairs, _) = pair_hard_negatives(&ds)?;
    let strategy: ViewStrategy = a.strategy.parse()?;
    print_banner(out, "augment-preview", &arg_banner(m))?;
    let n = a.count.min(pairs.len());
    let batch = Batch {
        anchors: pairs[..n].iter().map(|p| p.positive.clone()).collect(),
        negatives: pairs[..n].iter().map(|p| p.hard_negative.clone()).collect(),
    };
    let mut rng = SeedTree::new(a.seed).rng(Stream::Augmentation, 0, 0, 0);
    let vb = make_views(&batch, strategy, &mut rng)?;
    let mut s = String::from("row\tsource\tkind\tanchor\tview\n");
    for i in 0..vb.len() {
        let kind = if vb.dropout_views {
            "dropout"
        } else if vb.len() > vb.base_len {
            if i < vb.base_len {
                "sts"
            } else {
                "sr"
            }
        } else {
            strategy.name()
        };
        let _ = writeln!(
            s,
            "{i}\t{}\t{kind}\t{}\t{}",
            vb.source_index(i),
            vb.anchors[i].to_tsv_line(),
            vb.views[i].to_tsv_line()
        );
    }
    write_out(out, &s)
}

fn postgen(a: &PostgenArgs, m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let ds = load(&a.data, Split::Train)?;
    let vocab = load_vocab(&a.vocab)?;
    print_banner(out, "postgen", &arg_banner(m))?;
    let cfg = PostGenConfig {
        count: a.count,
        seed: a.seed,
        max_len: a.max_len,
    };
    let (examples, diag) = generate_post_training(&ds, &vocab, &cfg)?;
    let _ = diag.write_to(&mut *err);
    if a.preview {
        let mut s = String::from("context\tresponse\tnsp_label\tmasked\n");
        for e in &examples {
            let _ = writeln!(s, "{}", e.preview(&vocab));
        }
        write_out(out, &s)?;
    }
    if let Some(p) = &a.out {
        let f = std::fs::File::create(p).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        let mut w = std::io::BufWriter::new(f);
        write_post_examples(&mut w, &examples).map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        w.flush().map_err(|e| Failure::Runtime(Error::io(p, e)))?;
        write_out(out, &format!("wrote {} examples to {}\n", examples.len(), p.display()))?;
    }
    Ok(())
}

fn ablation(a: &AblateArgs, m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let (cfg, mut source) = resolve_config(&a.model)?;
    let vocab = load_vocab(&a.vocab)?;
    let train_ds = load(&a.train, Split::Train)?;
    let dev = load(&a.dev, Split::Dev)?;
    let mut named = Vec::new();
    for arg in &a.evals {
        let (name, path, group) = parse_named(arg)?;
        named.push((name, load(&path, Split::Test)?, group));
    }
    let (pairs, report) = pair_hard_negatives(&train_ds)?;
    let _ = report.diagnostics.write_to(&mut *err);
    let mut shown = cfg;
    shown.encoder.vocab_size = vocab.len();
    source.insert("vocab-size".into(), "vocab");
    source.insert("strategy".into(), "grid");
    source.insert("scl".into(), "grid");
    let mut rows = config_rows(&shown, &source);
    rows.extend(
        arg_banner(m)
            .into_iter()
            .filter(|r| !TrainConfig::KEYS.contains(&r.0.as_str())),
    );
    print_banner(out, "ablate", &rows)?;
    let mut evals: Vec<(String, &Dataset, Option<usize>)> =
        named.iter().map(|(n, d, g)| (n.clone(), d, *g)).collect();
    if evals.is_empty() {
        evals.push(("dev".into(), &dev, a.group_size));
    }
    let mut lines = Vec::new();
    let result = ablate(&cfg, &default_grid(), &vocab, &pairs, &dev, &evals, |l| lines.push(l.to_owned()));
    for l in &lines {
        write_out(out, &format!("{l}\n"))?;
    }
    let table = result?;
    write_out(out, &table.to_table())
}
