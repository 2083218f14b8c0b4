//! Dialogue corpora: TSV parsing, vocabulary, encoding, hard-negative pairing
//! and batching.
//!
//! The on-disk format is the label-first TSV used by the Ubuntu, Douban and
//! E-commerce response-selection corpora:
//!
//! ```text
//! label \t utterance_1 \t ... \t utterance_l \t response
//! ```
//!
//! with space-separated tokens inside each field. Files may be gzip-compressed.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const RESERVED: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const NUM_RESERVED: usize = RESERVED.len();

/// One dialogue turn; never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance(Vec<String>);

impl Utterance {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty utterance".into()));
        }
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.contains(['\t', '\n', '\r']))
        {
            return Err(Error::InvalidInput(format!("invalid token {bad:?}")));
        }
        Ok(Self(tokens))
    }

    /// Splits on ASCII/Unicode whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn tokens_mut(&mut self) -> &mut [String] {
        &mut self.0
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// A (context, response, label) example.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub label: u8,
}

impl Triple {
    pub fn new(context: Vec<Utterance>, response: Utterance, label: u8) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::InvalidInput("context must hold at least one utterance".into()));
        }
        if label > 1 {
            return Err(Error::InvalidInput(format!("label {label} is not 0 or 1")));
        }
        Ok(Self {
            context,
            response,
            label,
        })
    }

    pub fn to_tsv_line(&self) -> String {
        let mut out = self.label.to_string();
        for u in self.context.iter().chain(std::iter::once(&self.response)) {
            out.push('\t');
            out.push_str(&u.to_string());
        }
        out
    }
}

/// Parses one TSV line. `line_no` is 1-based and only used for error messages.
pub fn parse_tsv_line(line: &str, line_no: usize) -> Result<Triple> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let line = line.trim_end_matches(['\n', '\r']);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 3 {
        return Err(err(format!(
            "expected label, at least one context utterance and a response; got {} field(s)",
            fields.len()
        )));
    }
    let label = match fields[0].trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
    };
    let mut utterances = Vec::with_capacity(fields.len() - 1);
    for (i, field) in fields[1..].iter().enumerate() {
        let u = Utterance::parse(field)
            .map_err(|_| err(format!("field {} is an empty utterance", i + 2)))?;
        utterances.push(u);
    }
    let response = utterances.pop().expect("at least two utterance fields");
    Ok(Triple {
        context: utterances,
        response,
        label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Positive/negative counts of a dataset; printed as `1:x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRatio {
    pub positives: usize,
    pub negatives: usize,
}

impl LabelRatio {
    /// Negatives per positive (the `x` in `1:x`).
    pub fn negatives_per_positive(&self) -> f64 {
        self.negatives as f64 / self.positives as f64
    }

    /// Positives over negatives.
    pub fn pos_neg(&self) -> f64 {
        self.positives as f64 / self.negatives as f64
    }
}

impl fmt::Display for LabelRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1:{:.2}", self.negatives_per_positive())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Triple>,
    pub split: Split,
}

impl Dataset {
    pub fn new(examples: Vec<Triple>, split: Split) -> Self {
        Self { examples, split }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ratio(&self) -> LabelRatio {
        let positives = self.examples.iter().filter(|t| t.label == 1).count();
        LabelRatio {
            positives,
            negatives: self.examples.len() - positives,
        }
    }

    pub fn from_reader<R: BufRead>(reader: R, split: Split) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            examples.push(parse_tsv_line(&line, i + 1)?);
        }
        Ok(Self { examples, split })
    }

    /// Reads a TSV file; gzip input is detected by its magic bytes.
    pub fn load(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let reader = open_maybe_gzip(path)?;
        Self::from_reader(reader, split).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.examples {
            writeln!(out, "{}", t.to_tsv_line())?;
        }
        Ok(())
    }
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = read_up_to(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Line-oriented diagnostics collected while processing data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub lines: Vec<String>,
}

impl Diagnostics {
    pub fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn extend(&mut self, other: Diagnostics) {
        self.lines.extend(other.lines);
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

/// Token vocabulary; ids 0..5 are the reserved tokens in [`RESERVED`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::new()).expect("reserved tokens are unique")
    }

    /// Builds a vocabulary from non-reserved tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id == PAD_ID || id == CLS_ID || id == SEP_ID || id == MASK_ID
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_RESERVED || lines[..NUM_RESERVED] != RESERVED {
            return Err(Error::Corrupt(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        Self::from_tokens(lines[NUM_RESERVED..].iter().map(|s| s.to_string()).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Keeps the `max_size - 5` most frequent tokens seen at least `min_freq`
/// times; frequency ties go to the lexicographically smaller token.
pub fn build_vocab(dataset: &Dataset, max_size: usize, min_freq: usize) -> Result<Vocab> {
    if max_size <= NUM_RESERVED {
        return Err(Error::Config(format!(
            "max vocabulary size must exceed {NUM_RESERVED}, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &dataset.examples {
        for u in t.context.iter().chain(std::iter::once(&t.response)) {
            for tok in u.tokens() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(tok, c)| c >= min_freq.max(1) && !RESERVED.contains(&tok))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_owned()).collect())
}

/// A padded id sequence plus its unpadded length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub len: usize,
    /// Set when the response alone did not fit and its tail was cut.
    pub response_truncated: bool,
}

/// `[CLS] u_1 [SEP] ... u_l [SEP] response [SEP]`, padded to `max_len`.
///
/// Oldest utterances are dropped first; if the most recent utterance alone is
/// too long its oldest tokens are cut. When no context fits, a lone `[SEP]`
/// still separates `[CLS]` from the response.
pub fn encode_triple(t: &Triple, vocab: &Vocab, max_len: usize) -> Result<Encoded> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len must be at least 3, got {max_len}")));
    }
    let resp_budget = max_len - 3;
    let response_truncated = t.response.len() > resp_budget;
    let resp = &t.response.tokens()[..t.response.len().min(resp_budget)];

    // Room for context utterances, each followed by its SEP.
    let mut ctx_budget = max_len - 2 - resp.len();
    let mut kept: Vec<&[String]> = Vec::new();
    for u in t.context.iter().rev() {
        let need = u.len() + 1;
        if need <= ctx_budget {
            kept.push(u.tokens());
            ctx_budget -= need;
        } else {
            if kept.is_empty() && ctx_budget >= 2 {
                let toks = u.tokens();
                kept.push(&toks[toks.len() - (ctx_budget - 1)..]);
            }
            break;
        }
    }
    kept.reverse();

    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    if kept.is_empty() {
        ids.push(SEP_ID);
    }
    for u in kept {
        ids.extend(u.iter().map(|tok| vocab.id(tok)));
        ids.push(SEP_ID);
    }
    ids.extend(resp.iter().map(|tok| vocab.id(tok)));
    ids.push(SEP_ID);
    let len = ids.len();
    debug_assert!(len <= max_len);
    ids.resize(max_len, PAD_ID);
    Ok(Encoded {
        ids,
        len,
        response_truncated,
    })
}

/// A positive triple joined with the dataset's negative for the same context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedExample {
    pub positive: Triple,
    pub hard_negative: Triple,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingReport {
    pub paired: usize,
    pub dropped_positives: usize,
    pub extra_negatives: usize,
    pub diagnostics: Diagnostics,
}

/// Matches every positive with the first negative (file order) whose context is
/// token-for-token identical. Output follows positive order.
pub fn pair_hard_negatives(dataset: &Dataset) -> Result<(Vec<PairedExample>, PairingReport)> {
    let mut first_negative: HashMap<&[Utterance], usize> = HashMap::new();
    let mut report = PairingReport::default();
    for (i, t) in dataset.examples.iter().enumerate() {
        if t.label == 0 {
            if first_negative.contains_key(t.context.as_slice()) {
                report.extra_negatives += 1;
                report
                    .diagnostics
                    .push(format!("example {}: extra negative for an already-paired context", i + 1));
            } else {
                first_negative.insert(t.context.as_slice(), i);
            }
        }
    }
    let mut pairs = Vec::new();
    for (i, t) in dataset.examples.iter().enumerate() {
        if t.label != 1 {
            continue;
        }
        match first_negative.get(t.context.as_slice()) {
            Some(&j) => pairs.push(PairedExample {
                positive: t.clone(),
                hard_negative: dataset.examples[j].clone(),
            }),
            None => {
                report.dropped_positives += 1;
                report
                    .diagnostics
                    .push(format!("example {}: positive has no negative with the same context", i + 1));
            }
        }
    }
    report.paired = pairs.len();
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "no positive example could be paired with a hard negative".into(),
        ));
    }
    Ok((pairs, report))
}

/// Aligned positives (X) and their hard negatives (X⁻).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub anchors: Vec<Triple>,
    pub negatives: Vec<Triple>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batches {
    pub batches: Vec<Batch>,
    /// Pairs left over in a final batch smaller than 2.
    pub dropped: usize,
}

/// Index plan for [`make_batches`]: shuffled pair indices cut into chunks.
pub fn batch_plan(num_pairs: usize, batch_size: usize, seed: u64) -> Result<(Vec<Vec<usize>>, usize)> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2 for in-batch negatives, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..num_pairs).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut plan: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let mut dropped = 0;
    if plan.last().is_some_and(|b| b.len() < 2) {
        dropped = plan.pop().map_or(0, |b| b.len());
    }
    Ok((plan, dropped))
}

pub fn make_batches(pairs: &[PairedExample], batch_size: usize, seed: u64) -> Result<Batches> {
    let (plan, dropped) = batch_plan(pairs.len(), batch_size, seed)?;
    let batches = plan
        .into_iter()
        .map(|idx| Batch {
            anchors: idx.iter().map(|&i| pairs[i].positive.clone()).collect(),
            negatives: idx.iter().map(|&i| pairs[i].hard_negative.clone()).collect(),
        })
        .collect();
    Ok(Batches { batches, dropped })
}

/// Splits an evaluation set into candidate groups.
///
/// With `group_size` set, consecutive blocks of that size form a group;
/// otherwise a new group starts whenever the context changes.
pub fn candidate_groups(dataset: &Dataset, group_size: Option<usize>) -> Result<Vec<std::ops::Range<usize>>> {
    let n = dataset.len();
    match group_size {
        Some(0) => Err(Error::Config("group size must be positive".into())),
        Some(g) => {
            if n % g != 0 {
                return Err(Error::InvalidInput(format!(
                    "{n} examples do not divide into groups of {g}"
                )));
            }
            Ok((0..n / g).map(|i| i * g..(i + 1) * g).collect())
        }
        None => {
            let mut groups = Vec::new();
            let mut start = 0;
            for i in 1..=n {
                if i == n || dataset.examples[i].context != dataset.examples[start].context {
                    groups.push(start..i);
                    start = i;
                }
            }
            Ok(groups)
        }
    }
}
