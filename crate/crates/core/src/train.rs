//! Deterministic training loop: batching, view construction, encoding,
//! combined loss, backprop and Adam, with periodic dev evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::augment::{make_views, sr_view, sts_view, ViewBatch, ViewStrategy};
use crate::checkpoint::Checkpoint;
use crate::corpus::{batch_plan, candidate_groups, encode_triple, Batch, Dataset, PairedExample, Triple, Vocab};
use crate::encoder::{backward_into, forward, EncoderConfig, Forward, Params};
use crate::error::{Error, Result};
use crate::loss::{cosine_sim, total_loss, LossConfig, RepBatch, TotalOutput};
use crate::metrics::{aggregate, CandidateGroup, MetricReport};
use crate::optim::{clip_global_norm, optimizer_step, Moments};
use crate::rng::{SeedTree, Stream};

/// Full training configuration.
///
/// Desk-scale defaults: `batch_size = 32` and `lr = 1e-3` replace the
/// 43/48-example batches and 1e-5..2e-5 rates used for full-size pre-trained
/// encoders; the loss defaults (τ = 0.05, α = 1, λ = 1), three epochs and the
/// 2000-step evaluation interval carry over unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub strategy: ViewStrategy,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub eval_interval: u64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Include positive views in the cross-entropy term.
    pub ce_views: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            strategy: ViewStrategy::Tl,
            loss,
            encoder: EncoderConfig {
                vocab_size: 0,
                dim: 32,
                hidden: 64,
                max_len: 64,
                dropout: 0.1,
            },
            batch_size: 32,
            lr: 1e-3,
            epochs: 3,
            eval_interval: 2000,
            seed: 42,
            clip_norm: default_clip(loss.temperature),
            ce_views: false,
        }
    }
}

/// Clipping at norm 5 guards small temperatures; τ ≥ 1 trains unclipped.
pub fn default_clip(temperature: f64) -> Option<f64> {
    (temperature < 1.0).then_some(5.0)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "alpha",
        "batch-size",
        "ce-views",
        "clip-norm",
        "dim",
        "dropout",
        "epochs",
        "eval-interval",
        "hidden",
        "lambda",
        "lr",
        "max-len",
        "scl",
        "seed",
        "strategy",
        "tau",
        "vocab-size",
    ];

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.encoder.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch-size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval-interval must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip-norm must be positive, got {c}")));
            }
        }
        if self.encoder.max_len < 3 {
            return Err(Error::Config("max-len must be at least 3".into()));
        }
        Ok(())
    }

    /// Key-sorted textual snapshot; floats use round-trip formatting.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("alpha", format!("{:?}", self.loss.alpha));
        put("batch-size", self.batch_size.to_string());
        put("ce-views", self.ce_views.to_string());
        put(
            "clip-norm",
            self.clip_norm.map_or_else(|| "none".to_owned(), |c| format!("{c:?}")),
        );
        put("dim", self.encoder.dim.to_string());
        put("dropout", format!("{:?}", self.encoder.dropout));
        put("epochs", self.epochs.to_string());
        put("eval-interval", self.eval_interval.to_string());
        put("hidden", self.encoder.hidden.to_string());
        put("lambda", format!("{:?}", self.loss.lambda));
        put("lr", format!("{:?}", self.lr));
        put("max-len", self.encoder.max_len.to_string());
        put("scl", self.loss.scl.to_string());
        put("seed", self.seed.to_string());
        put("strategy", self.strategy.name().to_owned());
        put("tau", format!("{:?}", self.loss.temperature));
        put("vocab-size", self.encoder.vocab_size.to_string());
        m
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.loss.alpha = parse_value(key, value)?,
            "batch-size" => self.batch_size = parse_value(key, value)?,
            "ce-views" => self.ce_views = parse_bool(key, value)?,
            "clip-norm" => {
                self.clip_norm = match value.trim() {
                    "none" | "off" | "0" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "dim" => self.encoder.dim = parse_value(key, value)?,
            "dropout" => self.encoder.dropout = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "eval-interval" => self.eval_interval = parse_value(key, value)?,
            "hidden" => self.encoder.hidden = parse_value(key, value)?,
            "lambda" => self.loss.lambda = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "max-len" => self.encoder.max_len = parse_value(key, value)?,
            "scl" => self.loss.scl = parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "strategy" => self.strategy = value.trim().parse()?,
            "tau" => self.loss.temperature = parse_value(key, value)?,
            "vocab-size" => self.encoder.vocab_size = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in kv {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Whether views feed the CE term: on request, or when augmentation is
    /// used without the contrastive term ("w/o CL").
    pub fn views_in_ce(&self) -> bool {
        self.ce_views || (!self.loss.scl && self.strategy != ViewStrategy::None)
    }

    fn needs_views(&self) -> bool {
        self.loss.scl || self.views_in_ce()
    }
}

/// One `{step, split, metric, value}` record of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_history<W: Write>(mut w: W, records: &[HistoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub scl: Option<f64>,
    pub ce: f64,
    pub clamped: usize,
    pub grad_norm: f64,
}

/// A triple encoded for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Seq {
    ids: Vec<u32>,
    len: usize,
}

fn encode(t: &Triple, vocab: &Vocab, max_len: usize) -> Result<Seq> {
    let e = encode_triple(t, vocab, max_len)?;
    Ok(Seq { ids: e.ids, len: e.len })
}

/// Scores every candidate of an evaluation set and groups them.
pub fn score_groups(params: &Params, vocab: &Vocab, dataset: &Dataset, group_size: Option<usize>) -> Result<Vec<CandidateGroup>> {
    let max_len = params.cfg.max_len;
    let ranges = candidate_groups(dataset, group_size)?;
    let mut groups = Vec::with_capacity(ranges.len());
    for (gid, r) in ranges.into_iter().enumerate() {
        let mut cands = Vec::with_capacity(r.len());
        for t in &dataset.examples[r] {
            let s = encode(t, vocab, max_len)?;
            cands.push((forward(params, &s.ids, s.len, None)?.score, t.label));
        }
        groups.push(CandidateGroup::new(gid, cands));
    }
    Ok(groups)
}

pub fn evaluate(params: &Params, vocab: &Vocab, dataset: &Dataset, group_size: Option<usize>) -> Result<MetricReport> {
    aggregate(&score_groups(params, vocab, dataset, group_size)?)
}

/// Mean cos(h, h⁺) − mean cos(h, h⁻) over paired examples, where h⁺ ranges
/// over one STS and one SR view of each positive. Views come from a fixed
/// stream of `seed`, so runs with different training settings are comparable.
pub fn embedding_margin(params: &Params, vocab: &Vocab, pairs: &[PairedExample], seed: u64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("margin needs at least one pair".into()));
    }
    let tree = SeedTree::new(seed);
    let max_len = params.cfg.max_len;
    let h = |t: &Triple| -> Result<Vec<f64>> {
        let s = encode(t, vocab, max_len)?;
        Ok(forward(params, &s.ids, s.len, None)?.h)
    };
    let (mut pos, mut neg) = (0.0, 0.0);
    for (i, p) in pairs.iter().enumerate() {
        let mut rng = tree.rng(Stream::Augmentation, u64::MAX, 0, i as u64);
        let anchor = h(&p.positive)?;
        let sts = h(&sts_view(&p.positive, &mut rng))?;
        let sr = h(&sr_view(&p.positive, &mut rng))?;
        pos += 0.5 * (cosine_sim(&anchor, &sts)? + cosine_sim(&anchor, &sr)?);
        neg += cosine_sim(&anchor, &h(&p.hard_negative)?)?;
    }
    Ok((pos - neg) / pairs.len() as f64)
}

/// Loss and parameter gradient for one view batch. Each underlying anchor and
/// negative is encoded once; under DROP, view `i` uses the dropout stream at
/// `(epoch, step, i)`. Gradients are accumulated anchors, views, negatives.
pub fn batch_gradient(
    params: &Params,
    vocab: &Vocab,
    cfg: &TrainConfig,
    vb: &ViewBatch,
    tree: &SeedTree,
    epoch: u64,
    step: u64,
) -> Result<(TotalOutput, Params)> {
    let n = vb.base_len;
    let max_len = cfg.encoder.max_len;
    let run = |t: &Triple, dropout_index: Option<usize>| -> Result<Forward> {
        let s = encode(t, vocab, max_len)?;
        match dropout_index {
            Some(i) => {
                let mut rng = tree.rng(Stream::Dropout, epoch, step, i as u64);
                forward(params, &s.ids, s.len, Some(&mut rng))
            }
            None => forward(params, &s.ids, s.len, None),
        }
    };
    let anchors: Vec<Forward> = vb.anchors[..n].iter().map(|t| run(t, None)).collect::<Result<_>>()?;
    let negatives: Vec<Forward> = vb.negatives[..n].iter().map(|t| run(t, None)).collect::<Result<_>>()?;
    let views: Vec<Forward> = if cfg.needs_views() {
        vb.views
            .iter()
            .enumerate()
            .map(|(i, t)| run(t, vb.dropout_views.then_some(i)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let reps = RepBatch {
        anchors: (0..vb.len()).map(|i| anchors[vb.source_index(i)].h.clone()).collect(),
        positives: views.iter().map(|f| f.h.clone()).collect(),
        negatives: (0..vb.len()).map(|i| negatives[vb.source_index(i)].h.clone()).collect(),
    };
    let with_views = cfg.views_in_ce();
    let mut scores: Vec<f64> = anchors.iter().map(|f| f.score).collect();
    scores.extend(negatives.iter().map(|f| f.score));
    let mut labels = vec![1u8; n];
    labels.extend(std::iter::repeat(0u8).take(n));
    if with_views {
        scores.extend(views.iter().map(|f| f.score));
        labels.extend(std::iter::repeat(1u8).take(views.len()));
    }
    let out = total_loss(&reps, &scores, &labels, &cfg.loss)?;

    // Upstream gradients per forward pass, summed in index order.
    let d = cfg.encoder.dim;
    let mut gh_anchor = vec![vec![0.0; d]; n];
    let mut gh_neg = vec![vec![0.0; d]; n];
    let mut gh_view = vec![vec![0.0; d]; views.len()];
    if let Some(g) = &out.scl_grads {
        for i in 0..vb.len() {
            let src = vb.source_index(i);
            for k in 0..d {
                gh_anchor[src][k] += g.grad_anchors[i][k];
                gh_neg[src][k] += g.grad_negatives[i][k];
            }
        }
        gh_view.clone_from(&g.grad_positives);
    }
    let gs = &out.grad_scores;
    let mut grads = Params::zeros(params.cfg);
    for (i, f) in anchors.iter().enumerate() {
        backward_into(params, &f.acts, &gh_anchor[i], gs[i], &mut grads)?;
    }
    for (i, f) in views.iter().enumerate() {
        let g_score = if with_views { gs[2 * n + i] } else { 0.0 };
        backward_into(params, &f.acts, &gh_view[i], g_score, &mut grads)?;
    }
    for (i, f) in negatives.iter().enumerate() {
        backward_into(params, &f.acts, &gh_neg[i], gs[n + i], &mut grads)?;
    }
    Ok((out, grads))
}

/// Training state. All randomness is derived from `(seed, epoch, step, index)`,
/// so the state is fully described by parameters, moments and the step count.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    vocab: &'a Vocab,
    pairs: &'a [PairedExample],
    params: Params,
    moments: Moments,
    step: u64,
    steps_per_epoch: u64,
    plan: Option<(u64, Vec<Vec<usize>>)>,
    best_r1: Option<f64>,
    best_step: Option<u64>,
}

impl<'a> Trainer<'a> {
    pub fn new(mut cfg: TrainConfig, vocab: &'a Vocab, pairs: &'a [PairedExample]) -> Result<Self> {
        cfg.encoder.vocab_size = vocab.len();
        cfg.validate()?;
        let init_seed = SeedTree::new(cfg.seed).seed(Stream::Init, 0, 0, 0);
        let params = Params::init(cfg.encoder, init_seed)?;
        let moments = Moments::zeros_like(&params);
        Self::assemble(cfg, vocab, pairs, params, moments, 0)
    }

    /// Continues from a saved state. The checkpoint's vocabulary digest must
    /// match `vocab`.
    pub fn resume(ckpt: &Checkpoint, vocab: &'a Vocab, pairs: &'a [PairedExample]) -> Result<Self> {
        if ckpt.vocab_digest != vocab.digest() {
            return Err(Error::InvalidInput(
                "checkpoint was trained with a different vocabulary".into(),
            ));
        }
        let mut t = Self::assemble(ckpt.config, vocab, pairs, ckpt.params.clone(), ckpt.moments.clone(), ckpt.step)?;
        t.best_r1 = ckpt.best_r1;
        t.best_step = ckpt.best_step;
        Ok(t)
    }

    fn assemble(cfg: TrainConfig, vocab: &'a Vocab, pairs: &'a [PairedExample], params: Params, moments: Moments, step: u64) -> Result<Self> {
        cfg.validate()?;
        let (plan, _) = batch_plan(pairs.len(), cfg.batch_size, 0)?;
        if plan.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} pairs cannot fill a batch of at least 2",
                pairs.len()
            )));
        }
        Ok(Self {
            cfg,
            vocab,
            pairs,
            params,
            moments,
            step,
            steps_per_epoch: plan.len() as u64,
            plan: None,
            best_r1: None,
            best_step: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch * self.cfg.epochs as u64
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg,
            vocab_digest: self.vocab.digest(),
            step: self.step,
            params: self.params.clone(),
            moments: self.moments.clone(),
            best_r1: self.best_r1,
            best_step: self.best_step,
        }
    }

    fn batch_for(&mut self, epoch: u64, index: usize) -> Result<Batch> {
        if self.plan.as_ref().map(|p| p.0) != Some(epoch) {
            let seed = SeedTree::new(self.cfg.seed).seed(Stream::DataShuffle, epoch, 0, 0);
            let (plan, _) = batch_plan(self.pairs.len(), self.cfg.batch_size, seed)?;
            self.plan = Some((epoch, plan));
        }
        let idx = &self.plan.as_ref().expect("plan just built").1[index];
        Ok(Batch {
            anchors: idx.iter().map(|&i| self.pairs[i].positive.clone()).collect(),
            negatives: idx.iter().map(|&i| self.pairs[i].hard_negative.clone()).collect(),
        })
    }

    /// Runs one optimization step.
    pub fn train_step(&mut self) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::InvalidInput("training already finished".into()));
        }
        let step = self.step;
        let epoch = step / self.steps_per_epoch;
        let batch = self.batch_for(epoch, (step % self.steps_per_epoch) as usize)?;
        let tree = SeedTree::new(self.cfg.seed);
        let mut aug_rng = tree.rng(Stream::Augmentation, epoch, step, 0);
        let vb = make_views(&batch, self.cfg.strategy, &mut aug_rng)?;
        let (out, mut grads) = batch_gradient(&self.params, self.vocab, &self.cfg, &vb, &tree, epoch, step)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step} (epoch {epoch})")));
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient tensor {name} at step {step}")));
        }
        let grad_norm = match self.cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => grads.global_norm(),
        };
        let total = self.total_steps();
        optimizer_step(&mut self.params, &grads, &mut self.moments, step, total, self.cfg.lr)?;
        self.step += 1;
        Ok(StepReport {
            step,
            loss: out.loss,
            scl: out.scl,
            ce: out.ce,
            clamped: out.clamped,
            grad_norm,
        })
    }

    /// Records a dev evaluation; returns true when it is the best so far.
    fn note_eval(&mut self, r1: f64) -> bool {
        if self.best_r1.map_or(true, |b| r1 > b) {
            self.best_r1 = Some(r1);
            self.best_step = Some(self.step);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State with the best dev R@1 (the final state when no dev set is given).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<HistoryRecord>,
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    /// Mean training loss per epoch.
    pub fn epoch_losses(&self, steps_per_epoch: usize) -> Vec<f64> {
        self.step_losses
            .chunks(steps_per_epoch)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Options for [`run_training`] beyond the model configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Candidate group size for the dev set; `None` groups by context.
    pub dev_group_size: Option<usize>,
    /// Stop after this many total steps (for checkpoint/resume).
    pub stop_at: Option<u64>,
}

/// Trains until done (or `stop_at`), evaluating on `dev` every
/// `eval_interval` steps and at the final step.
pub fn run_training(trainer: &mut Trainer<'_>, dev: Option<&Dataset>, opts: RunOptions, mut log: impl FnMut(&str)) -> Result<TrainOutcome> {
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let total = trainer.total_steps();
    let stop = opts.stop_at.unwrap_or(total).min(total);
    while trainer.step() < stop {
        let report = trainer.train_step()?;
        step_losses.push(report.loss);
        history.push(HistoryRecord {
            step: report.step + 1,
            split: "train".into(),
            metric: "loss".into(),
            value: report.loss,
        });
        if report.clamped > 0 {
            log(&format!("step {}: {} score(s) clamped in cross-entropy", report.step + 1, report.clamped));
        }
        let s = trainer.step();
        if let Some(dev) = dev {
            if s % trainer.cfg.eval_interval == 0 || s == total {
                let m = evaluate(trainer.params(), trainer.vocab, dev, opts.dev_group_size)?;
                for (name, value) in m.named() {
                    history.push(HistoryRecord {
                        step: s,
                        split: "dev".into(),
                        metric: name.into(),
                        value,
                    });
                }
                let improved = trainer.note_eval(m.r1);
                log(&format!(
                    "step {s}/{total} loss {:.5} dev R@1 {:.4} MRR {:.4}{}",
                    report.loss,
                    m.r1,
                    m.mrr,
                    if improved { " *" } else { "" }
                ));
                if improved {
                    best = Some(trainer.checkpoint());
                }
            }
        }
    }
    let last = trainer.checkpoint();
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        history,
        step_losses,
    })
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub strategy: ViewStrategy,
    pub scl: bool,
}

impl AblationCell {
    /// Row label: `base`, `base_TL w/o CL`, `base_TL`, ...
    pub fn label(&self) -> String {
        match (self.strategy, self.scl) {
            (ViewStrategy::None, false) => "base".into(),
            (ViewStrategy::None, true) => "base_NONE".into(),
            (s, true) => format!("base_{}", s.name().to_uppercase()),
            (s, false) => format!("base_{} w/o CL", s.name().to_uppercase()),
        }
    }
}

/// The default grid: baseline, each strategy with the contrastive term, and TL
/// without it.
pub fn default_grid() -> Vec<AblationCell> {
    let mut g = vec![AblationCell {
        strategy: ViewStrategy::None,
        scl: false,
    }];
    for s in [ViewStrategy::Drop, ViewStrategy::Sts, ViewStrategy::Sr] {
        g.push(AblationCell { strategy: s, scl: true });
    }
    g.push(AblationCell {
        strategy: ViewStrategy::Tl,
        scl: false,
    });
    g.push(AblationCell {
        strategy: ViewStrategy::Tl,
        scl: true,
    });
    g
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    /// One report per evaluation set, in the order given.
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub datasets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = write!(s, "{:<label_w$}", "Model");
        for d in &self.datasets {
            let _ = write!(s, " | {:^47}", d);
        }
        s.push('\n');
        let _ = write!(s, "{:<label_w$}", "");
        for _ in &self.datasets {
            s.push_str(" |");
            for c in crate::metrics::COLUMNS {
                let _ = write!(s, " {c:>7}");
            }
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:<label_w$}", row.label);
            for r in &row.reports {
                s.push_str(" |");
                for v in r.values() {
                    let _ = write!(s, " {v:>7.4}");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every cell from the same seed and data, then evaluates each
/// resulting best checkpoint on every named evaluation set.
pub fn ablate(
    base: &TrainConfig,
    cells: &[AblationCell],
    vocab: &Vocab,
    pairs: &[PairedExample],
    dev: &Dataset,
    evals: &[(String, &Dataset, Option<usize>)],
    mut log: impl FnMut(&str),
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut cfg = *base;
        cfg.strategy = cell.strategy;
        cfg.loss.scl = cell.scl;
        log(&format!("training {}", cell.label()));
        let mut trainer = Trainer::new(cfg, vocab, pairs)?;
        let outcome = run_training(&mut trainer, Some(dev), RunOptions::default(), &mut log)?;
        let reports = evals
            .iter()
            .map(|(_, ds, g)| evaluate(&outcome.best.params, vocab, ds, *g))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow {
            label: cell.label(),
            reports,
        });
    }
    Ok(AblationReport {
        datasets: evals.iter().map(|e| e.0.clone()).collect(),
        rows,
    })
}
