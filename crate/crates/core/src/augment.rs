//! Positive-view construction: sentence token shuffling (STS), sentence
//! reordering (SR), two-level (TL) and dropout (DROP).
//!
//! Only the context is ever changed; responses and labels pass through.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{Batch, Triple};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewStrategy {
    None,
    Drop,
    Sts,
    Sr,
    Tl,
}

impl ViewStrategy {
    pub const ALL: [ViewStrategy; 5] = [
        ViewStrategy::None,
        ViewStrategy::Drop,
        ViewStrategy::Sts,
        ViewStrategy::Sr,
        ViewStrategy::Tl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViewStrategy::None => "none",
            ViewStrategy::Drop => "drop",
            ViewStrategy::Sts => "sts",
            ViewStrategy::Sr => "sr",
            ViewStrategy::Tl => "tl",
        }
    }
}

impl fmt::Display for ViewStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewStrategy::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected one of none, drop, sts, sr, tl)"
                ))
            })
    }
}

/// Sentence token shuffling: one context utterance, picked uniformly, gets a
/// uniform random permutation of its tokens.
pub fn sts_view(t: &Triple, rng: &mut SplitMix64) -> Triple {
    let mut view = t.clone();
    let idx = rng.below(view.context.len());
    rng.shuffle(view.context[idx].tokens_mut());
    view
}

/// Sentence reordering: swaps two distinct non-final context utterances.
/// Contexts with fewer than two movable utterances get an STS view instead.
pub fn sr_view(t: &Triple, rng: &mut SplitMix64) -> Triple {
    let movable = t.context.len().saturating_sub(1);
    if movable < 2 {
        return sts_view(t, rng);
    }
    let mut view = t.clone();
    let a = rng.below(movable);
    let mut b = rng.below(movable - 1);
    if b >= a {
        b += 1;
    }
    view.context.swap(a, b);
    view
}

/// Anchors, positive views and hard negatives, aligned by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewBatch {
    pub anchors: Vec<Triple>,
    pub views: Vec<Triple>,
    pub negatives: Vec<Triple>,
    /// Encode the views with an independent dropout mask.
    pub dropout_views: bool,
    /// Under TL, index `i` and `i + base_len` share the same underlying example.
    pub base_len: usize,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Index of the underlying (un-duplicated) example for position `i`.
    pub fn source_index(&self, i: usize) -> usize {
        i % self.base_len
    }
}

/// Builds (X, X⁺, X⁻) from a batch. TL yields `2N` rows: `X ∥ X` as anchors,
/// `STS(X) ∥ SR(X)` as views and `X⁻ ∥ X⁻` as negatives.
pub fn make_views(batch: &Batch, strategy: ViewStrategy, rng: &mut SplitMix64) -> Result<ViewBatch> {
    let n = batch.anchors.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot build views of an empty batch".into()));
    }
    if batch.negatives.len() != n {
        return Err(Error::Shape(format!(
            "{n} anchors but {} negatives",
            batch.negatives.len()
        )));
    }
    let anchors = batch.anchors.clone();
    let negatives = batch.negatives.clone();
    let out = match strategy {
        ViewStrategy::None | ViewStrategy::Drop => ViewBatch {
            views: anchors.clone(),
            anchors,
            negatives,
            dropout_views: strategy == ViewStrategy::Drop,
            base_len: n,
        },
        ViewStrategy::Sts => ViewBatch {
            views: anchors.iter().map(|t| sts_view(t, rng)).collect(),
            anchors,
            negatives,
            dropout_views: false,
            base_len: n,
        },
        ViewStrategy::Sr => ViewBatch {
            views: anchors.iter().map(|t| sr_view(t, rng)).collect(),
            anchors,
            negatives,
            dropout_views: false,
            base_len: n,
        },
        ViewStrategy::Tl => {
            let mut views: Vec<Triple> = anchors.iter().map(|t| sts_view(t, rng)).collect();
            views.extend(anchors.iter().map(|t| sr_view(t, rng)));
            ViewBatch {
                views,
                anchors: anchors.iter().chain(&anchors).cloned().collect(),
                negatives: negatives.iter().chain(&negatives).cloned().collect(),
                dropout_views: false,
                base_len: n,
            }
        }
    };
    Ok(out)
}
