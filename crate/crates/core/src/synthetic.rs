//! Template dialogue generator for desk-scale experiments.
//!
//! Each dialogue mentions one topic token and one distractor token somewhere in
//! its context. The correct response repeats the topic token; the hard
//! negative repeats the distractor. Everything else is filler.

use crate::corpus::{Dataset, Split, Triple, Utterance};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    pub topics: usize,
    pub distractors: usize,
    pub fillers: usize,
    /// Fraction of dialogues placed in the dev split.
    pub dev_fraction_percent: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dialogues: 5000,
            topics: 20,
            distractors: 20,
            fillers: 60,
            dev_fraction_percent: 20,
        }
    }
}

fn words(rng: &mut SplitMix64, fillers: usize, min: usize, max: usize) -> Vec<String> {
    let n = min + rng.below(max - min + 1);
    (0..n).map(|_| format!("w{}", rng.below(fillers))).collect()
}

fn insert(rng: &mut SplitMix64, tokens: &mut Vec<String>, tok: String) {
    let at = rng.below(tokens.len() + 1);
    tokens.insert(at, tok);
}

/// One positive/negative pair sharing a context.
pub fn dialogue(rng: &mut SplitMix64, layout: &SyntheticConfig) -> (Triple, Triple) {
    let topic = format!("topic{}", rng.below(layout.topics));
    let distractor = format!("noise{}", rng.below(layout.distractors));
    let turns = 2 + rng.below(3);
    let mut ctx: Vec<Vec<String>> = (0..turns).map(|_| words(rng, layout.fillers, 2, 5)).collect();
    let t_at = rng.below(turns);
    insert(rng, &mut ctx[t_at], topic.clone());
    let d_at = rng.below(turns);
    insert(rng, &mut ctx[d_at], distractor.clone());
    let context: Vec<Utterance> = ctx
        .into_iter()
        .map(|u| Utterance::new(u).expect("non-empty template utterance"))
        .collect();

    let mut pos = words(rng, layout.fillers, 2, 4);
    insert(rng, &mut pos, topic);
    let mut neg = words(rng, layout.fillers, 2, 4);
    insert(rng, &mut neg, distractor);
    let positive = Triple::new(context.clone(), Utterance::new(pos).expect("non-empty"), 1).expect("valid");
    let negative = Triple::new(context, Utterance::new(neg).expect("non-empty"), 0).expect("valid");
    (positive, negative)
}

/// Train and dev splits, each laid out as positive then negative per context.
pub fn generate(layout: &SyntheticConfig, seed: u64) -> (Dataset, Dataset) {
    let mut rng = SplitMix64::new(seed);
    let dev_count = layout.dialogues * layout.dev_fraction_percent / 100;
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for i in 0..layout.dialogues {
        let (p, n) = dialogue(&mut rng, layout);
        let target = if i < layout.dialogues - dev_count { &mut train } else { &mut dev };
        target.push(p);
        target.push(n);
    }
    (Dataset::new(train, Split::Train), Dataset::new(dev, Split::Dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pair_hard_negatives;

    #[test]
    fn splits_are_balanced_and_pairable() {
        let layout = SyntheticConfig {
            dialogues: 100,
            ..SyntheticConfig::default()
        };
        let (train, dev) = generate(&layout, 1);
        assert_eq!(train.len(), 160);
        assert_eq!(dev.len(), 40);
        assert_eq!(train.ratio().positives, train.ratio().negatives);
        let (pairs, report) = pair_hard_negatives(&train).unwrap();
        assert_eq!(pairs.len(), 80);
        assert_eq!(report.dropped_positives, 0);
    }

    #[test]
    fn responses_carry_the_right_cue() {
        let layout = SyntheticConfig::default();
        let mut rng = SplitMix64::new(9);
        for _ in 0..50 {
            let (p, n) = dialogue(&mut rng, &layout);
            let ctx: Vec<&String> = p.context.iter().flat_map(|u| u.tokens()).collect();
            let topic = p.response.tokens().iter().find(|t| t.starts_with("topic")).unwrap();
            let noise = n.response.tokens().iter().find(|t| t.starts_with("noise")).unwrap();
            assert!(ctx.contains(&topic));
            assert!(ctx.contains(&noise));
        }
    }
}
