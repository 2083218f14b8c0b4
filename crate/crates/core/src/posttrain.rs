//! Example generation for domain-adaptive post-training (MLM + NSP).
//!
//! Each example is produced by:
//! 1. sampling a positive triple and joining its context and response into a
//!    dialogue `d`;
//! 2. with probability 1/2 cutting `d` to a random strict prefix of at least
//!    two utterances;
//! 3. sampling an NSP pair: 1/4 positive (the final utterance), otherwise a
//!    negative drawn 2/3 from another dialogue and 1/3 from the same context;
//! 4. encoding the pair;
//! 5. masking 15% of the non-special tokens (80% `[MASK]`, 10% random, 10% kept).
//!
//! Tokens are whitespace-delimited words, so whole-word masking is per token.

use std::fmt;
use std::io::{Read, Write};

use crate::corpus::{encode_triple, Dataset, Diagnostics, Encoded, Triple, Utterance, Vocab, MASK_ID, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, SplitMix64, Stream};

pub const CUT_PROBABILITY: f64 = 0.5;
pub const NSP_POSITIVE_PROBABILITY: f64 = 0.25;
pub const RANDOM_NEGATIVE_SHARE: f64 = 2.0 / 3.0;
pub const MASK_RATE: f64 = 0.15;
pub const MASK_TOKEN_SHARE: f64 = 0.8;
pub const RANDOM_TOKEN_SHARE: f64 = 0.1;

/// Marks positions that carry no MLM target.
pub const MLM_IGNORE: i32 = -1;

const FILE_MAGIC: &[u8; 4] = b"DCLP";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NspLabel {
    Positive,
    RandomNegative,
    SameContextNegative,
}

impl NspLabel {
    pub fn code(self) -> u8 {
        match self {
            NspLabel::Positive => 0,
            NspLabel::RandomNegative => 1,
            NspLabel::SameContextNegative => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(NspLabel::Positive),
            1 => Some(NspLabel::RandomNegative),
            2 => Some(NspLabel::SameContextNegative),
            _ => None,
        }
    }
}

impl fmt::Display for NspLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NspLabel::Positive => "positive",
            NspLabel::RandomNegative => "random-negative",
            NspLabel::SameContextNegative => "same-context-negative",
        })
    }
}

/// Step 2: returns the (possibly cut) dialogue and whether it was cut.
pub fn cut_dialogue(d: &[Utterance], rng: &mut SplitMix64) -> Result<(Vec<Utterance>, bool)> {
    if d.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "dialogue of {} utterance(s) cannot be split into context and response",
            d.len()
        )));
    }
    let cut = rng.bernoulli(CUT_PROBABILITY);
    if cut && d.len() > 2 {
        let keep = 2 + rng.below(d.len() - 2);
        Ok((d[..keep].to_vec(), true))
    } else {
        Ok((d.to_vec(), false))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NspSample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub label: NspLabel,
    /// Set when a random negative was requested but the corpus had no other dialogue.
    pub fell_back: bool,
}

/// Step 3. `source` is the index of `d` within `corpus`, excluded from random negatives.
pub fn sample_nsp(d: &[Utterance], corpus: &[Vec<Utterance>], source: usize, rng: &mut SplitMix64) -> Result<NspSample> {
    if d.len() < 2 {
        return Err(Error::InvalidInput("NSP sampling needs at least two utterances".into()));
    }
    let last = d.len() - 1;
    let context = d[..last].to_vec();
    if rng.bernoulli(NSP_POSITIVE_PROBABILITY) {
        return Ok(NspSample {
            context,
            response: d[last].clone(),
            label: NspLabel::Positive,
            fell_back: false,
        });
    }
    let wants_random = rng.bernoulli(RANDOM_NEGATIVE_SHARE);
    let others = corpus.len().saturating_sub(usize::from(source < corpus.len()));
    if wants_random && others > 0 {
        let mut other = rng.below(others);
        if source < corpus.len() && other >= source {
            other += 1;
        }
        let pool = &corpus[other];
        let response = pool[rng.below(pool.len())].clone();
        return Ok(NspSample {
            context,
            response,
            label: NspLabel::RandomNegative,
            fell_back: false,
        });
    }
    let response = d[rng.below(last)].clone();
    Ok(NspSample {
        context,
        response,
        label: NspLabel::SameContextNegative,
        fell_back: wants_random,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    pub ids: Vec<u32>,
    pub mlm_labels: Vec<i32>,
    /// Selected positions in selection order.
    pub actions: Vec<(usize, MaskAction)>,
    pub candidates: usize,
}

/// Step 5. Selects `⌊0.15·n⌋` candidates plus one more with probability equal
/// to the fractional part (so the expected rate is exactly 15%), at least one.
pub fn mask_tokens(enc: &Encoded, vocab_size: usize, rng: &mut SplitMix64) -> Result<Masked> {
    let mut candidates: Vec<usize> = (0..enc.len).filter(|&t| !Vocab::is_special(enc.ids[t])).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("sequence has no maskable token".into()));
    }
    let n = candidates.len();
    let expected = MASK_RATE * n as f64;
    let mut k = expected.floor() as usize;
    if rng.bernoulli(expected - expected.floor()) {
        k += 1;
    }
    let k = k.clamp(1, n);
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for i in 0..k {
        let j = i + rng.below(n - i);
        candidates.swap(i, j);
    }
    let mut ids = enc.ids.clone();
    let mut mlm_labels = vec![MLM_IGNORE; ids.len()];
    let mut actions = Vec::with_capacity(k);
    for &pos in &candidates[..k] {
        mlm_labels[pos] = enc.ids[pos] as i32;
        let u = rng.next_f64();
        let action = if u < MASK_TOKEN_SHARE {
            ids[pos] = MASK_ID;
            MaskAction::Mask
        } else if u < MASK_TOKEN_SHARE + RANDOM_TOKEN_SHARE {
            if vocab_size > NUM_RESERVED {
                ids[pos] = (NUM_RESERVED + rng.below(vocab_size - NUM_RESERVED)) as u32;
            }
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push((pos, action));
    }
    Ok(Masked {
        ids,
        mlm_labels,
        actions,
        candidates: n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostExample {
    pub input_ids: Vec<u32>,
    pub len: usize,
    pub mlm_labels: Vec<i32>,
    pub nsp_label: NspLabel,
    /// Index of the source positive within the dataset.
    pub source: usize,
    pub cut: bool,
    pub mask_actions: Vec<(usize, MaskAction)>,
    pub mask_candidates: usize,
    pub pair: Triple,
}

impl PostExample {
    /// `context ∥ response ∥ nsp_label ∥ masked positions`, tab-separated.
    pub fn preview(&self, vocab: &Vocab) -> String {
        let ctx: Vec<String> = self.pair.context.iter().map(|u| u.to_string()).collect();
        let masked: Vec<String> = self
            .mask_actions
            .iter()
            .map(|&(pos, _)| {
                let orig = vocab.token(self.mlm_labels[pos] as u32).unwrap_or("?");
                let now = vocab.token(self.input_ids[pos]).unwrap_or("?");
                format!("{pos}:{orig}->{now}")
            })
            .collect();
        format!("{}\t{}\t{}\t{}", ctx.join(" | "), self.pair.response, self.nsp_label, masked.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostGenConfig {
    pub count: usize,
    pub seed: u64,
    pub max_len: usize,
}

/// Runs steps 1-5 `count` times. Example `i` draws from streams indexed by `i`,
/// so any contiguous range can be generated independently.
pub fn generate_post_training(dataset: &Dataset, vocab: &Vocab, cfg: &PostGenConfig) -> Result<(Vec<PostExample>, Diagnostics)> {
    let positives: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.examples[i].label == 1).collect();
    let mut diag = Diagnostics::default();
    if cfg.count == 0 {
        return Ok((Vec::new(), diag));
    }
    if positives.is_empty() {
        return Err(Error::InvalidInput("post-training needs at least one positive triple".into()));
    }
    let dialogues: Vec<Vec<Utterance>> = positives
        .iter()
        .map(|&i| {
            let t = &dataset.examples[i];
            let mut d = t.context.clone();
            d.push(t.response.clone());
            d
        })
        .collect();
    let tree = SeedTree::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count as u64 {
        let mut rng = tree.rng(Stream::PosttrainSampling, 0, 0, i);
        let pick = rng.below(dialogues.len());
        let (d, cut) = match cut_dialogue(&dialogues[pick], &mut rng) {
            Ok(v) => v,
            Err(e) => {
                diag.push(format!("example {i}: skipped: {e}"));
                continue;
            }
        };
        let nsp = sample_nsp(&d, &dialogues, pick, &mut rng)?;
        if nsp.fell_back {
            diag.push(format!(
                "example {i}: corpus has a single dialogue; random negative replaced by same-context negative"
            ));
        }
        let label = u8::from(nsp.label == NspLabel::Positive);
        let pair = Triple::new(nsp.context, nsp.response, label)?;
        let enc = encode_triple(&pair, vocab, cfg.max_len)?;
        if enc.response_truncated {
            diag.push(format!("example {i}: response truncated to fit {} tokens", cfg.max_len));
        }
        let mut mask_rng = tree.rng(Stream::PosttrainMasking, 0, 0, i);
        let masked = match mask_tokens(&enc, vocab.len(), &mut mask_rng) {
            Ok(m) => m,
            Err(e) => {
                diag.push(format!("example {i}: skipped: {e}"));
                continue;
            }
        };
        out.push(PostExample {
            input_ids: masked.ids,
            len: enc.len,
            mlm_labels: masked.mlm_labels,
            nsp_label: nsp.label,
            source: positives[pick],
            cut,
            mask_actions: masked.actions,
            mask_candidates: masked.candidates,
            pair,
        });
    }
    Ok((out, diag))
}

/// Binary layout, little-endian:
///
/// ```text
/// "DCLP" u32:version u64:count
/// per record: u32:payload_len, then
///   u64:source u8:nsp u32:max_len u32:len  u32[max_len]:ids  i32[max_len]:mlm_labels
/// ```
pub fn write_post_examples<W: Write>(mut w: W, examples: &[PostExample]) -> std::io::Result<()> {
    w.write_all(FILE_MAGIC)?;
    w.write_all(&FILE_VERSION.to_le_bytes())?;
    w.write_all(&(examples.len() as u64).to_le_bytes())?;
    for e in examples {
        let mut rec = Vec::with_capacity(17 + 8 * e.input_ids.len());
        rec.extend_from_slice(&(e.source as u64).to_le_bytes());
        rec.push(e.nsp_label.code());
        rec.extend_from_slice(&(e.input_ids.len() as u32).to_le_bytes());
        rec.extend_from_slice(&(e.len as u32).to_le_bytes());
        for id in &e.input_ids {
            rec.extend_from_slice(&id.to_le_bytes());
        }
        for l in &e.mlm_labels {
            rec.extend_from_slice(&l.to_le_bytes());
        }
        w.write_all(&(rec.len() as u32).to_le_bytes())?;
        w.write_all(&rec)?;
    }
    Ok(())
}

/// Decoded record from a post-training file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostRecord {
    pub source: u64,
    pub nsp_label: NspLabel,
    pub len: usize,
    pub input_ids: Vec<u32>,
    pub mlm_labels: Vec<i32>,
}

pub fn read_post_examples<R: Read>(mut r: R) -> Result<Vec<PostRecord>> {
    let corrupt = |m: &str| Error::Corrupt(format!("post-training file: {m}"));
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| corrupt(&e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4).ok_or_else(|| corrupt("truncated header"))? != FILE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| corrupt("truncated header"))?;
    if version != FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FILE_VERSION,
        });
    }
    let count = cur.u64().ok_or_else(|| corrupt("truncated header"))?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = cur.u32().ok_or_else(|| corrupt("truncated record"))? as usize;
        let rec = cur.take(len).ok_or_else(|| corrupt("truncated record"))?;
        let mut rc = Cursor { buf: rec, pos: 0 };
        let source = rc.u64().ok_or_else(|| corrupt("short record"))?;
        let nsp = rc.take(1).ok_or_else(|| corrupt("short record"))?[0];
        let nsp_label = NspLabel::from_code(nsp).ok_or_else(|| corrupt("bad NSP label"))?;
        let max_len = rc.u32().ok_or_else(|| corrupt("short record"))? as usize;
        let seq_len = rc.u32().ok_or_else(|| corrupt("short record"))? as usize;
        let input_ids = (0..max_len).map(|_| rc.u32()).collect::<Option<Vec<_>>>().ok_or_else(|| corrupt("short record"))?;
        let mlm_labels = (0..max_len)
            .map(|_| rc.u32().map(|x| x as i32))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| corrupt("short record"))?;
        out.push(PostRecord {
            source,
            nsp_label,
            len: seq_len,
            input_ids,
            mlm_labels,
        });
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, CLS_ID, PAD_ID, SEP_ID};

    fn utts(words: &[&str]) -> Vec<Utterance> {
        words.iter().map(|w| Utterance::parse(w).unwrap()).collect()
    }

    #[test]
    fn two_utterances_are_never_cut() {
        let d = utts(&["a", "b"]);
        for s in 0..50 {
            let (out, cut) = cut_dialogue(&d, &mut SplitMix64::new(s)).unwrap();
            assert_eq!(out, d);
            assert!(!cut);
        }
        assert!(cut_dialogue(&d[..1], &mut SplitMix64::new(0)).is_err());
    }

    #[test]
    fn cuts_are_prefixes() {
        let d = utts(&["a", "b", "c", "d", "e"]);
        let mut cuts = 0;
        for s in 0..2000 {
            let (out, cut) = cut_dialogue(&d, &mut SplitMix64::new(s)).unwrap();
            assert!(out.len() >= 2);
            assert_eq!(out[..], d[..out.len()]);
            assert_eq!(cut, out.len() < d.len());
            cuts += usize::from(cut);
        }
        // Binomial(2000, 1/2): sd ≈ 22.4, allow ~4.5 sd.
        assert!((cuts as i64 - 1000).abs() < 100, "{cuts}");
    }

    #[test]
    fn positive_takes_final_utterance() {
        let d = utts(&["a", "b", "c"]);
        let corpus = vec![d.clone(), utts(&["x", "y"])];
        let mut seen = [false; 3];
        for s in 0..200 {
            let n = sample_nsp(&d, &corpus, 0, &mut SplitMix64::new(s)).unwrap();
            assert_eq!(n.context, d[..2]);
            match n.label {
                NspLabel::Positive => assert_eq!(n.response, d[2]),
                NspLabel::SameContextNegative => assert!(n.response == d[0] || n.response == d[1]),
                NspLabel::RandomNegative => assert!(corpus[1].contains(&n.response)),
            }
            seen[n.label.code() as usize] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn same_context_with_two_utterances_is_forced() {
        let d = utts(&["a", "b"]);
        for s in 0..100 {
            let n = sample_nsp(&d, &[d.clone()], 0, &mut SplitMix64::new(s)).unwrap();
            if n.label == NspLabel::SameContextNegative {
                assert_eq!(n.response, d[0]);
            }
            assert_ne!(n.label, NspLabel::RandomNegative);
        }
    }

    #[test]
    fn single_dialogue_corpus_falls_back() {
        let d = utts(&["a", "b", "c"]);
        let mut fell = 0;
        for s in 0..200 {
            let n = sample_nsp(&d, &[d.clone()], 0, &mut SplitMix64::new(s)).unwrap();
            fell += usize::from(n.fell_back);
            if n.fell_back {
                assert_eq!(n.label, NspLabel::SameContextNegative);
            }
        }
        assert!(fell > 0);
    }

    fn encoded(ids: &[u32]) -> Encoded {
        Encoded {
            ids: ids.to_vec(),
            len: ids.iter().take_while(|&&i| i != PAD_ID).count(),
            response_truncated: false,
        }
    }

    #[test]
    fn specials_are_never_masked() {
        let enc = encoded(&[CLS_ID, 5, 6, 7, SEP_ID, 8, 9, 10, 11, 12, 13, 14, SEP_ID, PAD_ID]);
        for s in 0..300 {
            let m = mask_tokens(&enc, 20, &mut SplitMix64::new(s)).unwrap();
            for &(pos, _) in &m.actions {
                assert!(!Vocab::is_special(enc.ids[pos]));
                assert_eq!(m.mlm_labels[pos], enc.ids[pos] as i32);
            }
            for (pos, &l) in m.mlm_labels.iter().enumerate() {
                if !m.actions.iter().any(|a| a.0 == pos) {
                    assert_eq!(l, MLM_IGNORE);
                    assert_eq!(m.ids[pos], enc.ids[pos]);
                }
            }
            assert_eq!(m.candidates, 10);
            assert!(m.actions.len() == 1 || m.actions.len() == 2);
        }
    }

    #[test]
    fn single_candidate_is_always_selected() {
        let enc = encoded(&[CLS_ID, SEP_ID, 7, SEP_ID]);
        for s in 0..20 {
            let m = mask_tokens(&enc, 10, &mut SplitMix64::new(s)).unwrap();
            assert_eq!(m.actions.len(), 1);
            assert_eq!(m.actions[0].0, 2);
        }
        assert!(mask_tokens(&encoded(&[CLS_ID, SEP_ID, SEP_ID]), 10, &mut SplitMix64::new(0)).is_err());
    }

    fn toy_dataset() -> Dataset {
        let lines = [
            "1\thello there\thow are you\tfine thanks",
            "0\thello there\thow are you\tgo away",
            "1\twhat time\tnoon today\tsee you then",
        ];
        let examples = lines.iter().enumerate().map(|(i, l)| crate::corpus::parse_tsv_line(l, i + 1).unwrap()).collect();
        Dataset::new(examples, Split::Train)
    }

    #[test]
    fn generation_is_seeded_and_uses_positives() {
        let ds = toy_dataset();
        let vocab = crate::corpus::build_vocab(&ds, 100, 1).unwrap();
        let cfg = PostGenConfig {
            count: 50,
            seed: 17,
            max_len: 16,
        };
        let (a, _) = generate_post_training(&ds, &vocab, &cfg).unwrap();
        let (b, _) = generate_post_training(&ds, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| ds.examples[e.source].label == 1));
        let (none, _) = generate_post_training(&ds, &vocab, &PostGenConfig { count: 0, ..cfg }).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn binary_round_trip() {
        let ds = toy_dataset();
        let vocab = crate::corpus::build_vocab(&ds, 100, 1).unwrap();
        let cfg = PostGenConfig {
            count: 5,
            seed: 3,
            max_len: 12,
        };
        let (ex, _) = generate_post_training(&ds, &vocab, &cfg).unwrap();
        let mut bytes = Vec::new();
        write_post_examples(&mut bytes, &ex).unwrap();
        let back = read_post_examples(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        for (r, e) in back.iter().zip(&ex) {
            assert_eq!(r.input_ids, e.input_ids);
            assert_eq!(r.mlm_labels, e.mlm_labels);
            assert_eq!(r.nsp_label, e.nsp_label);
            assert_eq!(r.len, e.len);
        }
        assert!(read_post_examples(&bytes[..bytes.len() - 3]).is_err());
    }
}
