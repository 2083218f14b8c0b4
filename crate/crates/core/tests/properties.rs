//! Property-based invariants across modules.

use proptest::collection::vec;
use proptest::prelude::*;

use dclr::augment::{make_views, sr_view, sts_view, ViewStrategy};
use dclr::checkpoint::Checkpoint;
use dclr::corpus::{encode_triple, parse_tsv_line, Batch, Triple, Utterance, Vocab, CLS_ID, PAD_ID, SEP_ID};
use dclr::encoder::{EncoderConfig, Params};
use dclr::loss::{bce_loss, scl_loss, LossConfig, RepBatch};
use dclr::metrics::{aggregate, group_metrics, rank_group, CandidateGroup};
use dclr::optim::Moments;
use dclr::rng::SplitMix64;
use dclr::train::TrainConfig;

fn token() -> impl Strategy<Value = String> {
    "[a-e]{1,3}"
}

fn utterance() -> impl Strategy<Value = Utterance> {
    vec(token(), 1..6).prop_map(|t| Utterance::new(t).unwrap())
}

fn triple() -> impl Strategy<Value = Triple> {
    (vec(utterance(), 1..7), utterance(), 0u8..2).prop_map(|(c, r, y)| Triple::new(c, r, y).unwrap())
}

fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-3.0f64..3.0, d).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

fn reps(max_n: usize, d: usize) -> impl Strategy<Value = RepBatch> {
    (1..=max_n).prop_flat_map(move |n| {
        (vec(nonzero_vec(d), n), vec(nonzero_vec(d), n), vec(nonzero_vec(d), n)).prop_map(|(a, p, q)| RepBatch {
            anchors: a,
            positives: p,
            negatives: q,
        })
    })
}

fn cfg(tau: f64, alpha: f64) -> LossConfig {
    LossConfig {
        temperature: tau,
        alpha,
        lambda: 1.0,
        scl: true,
    }
}

fn sorted(u: &Utterance) -> Vec<String> {
    let mut v = u.tokens().to_vec();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scl_is_positive_and_finite(r in reps(6, 5), tau in prop::sample::select(vec![0.05, 0.2, 1.0]), alpha in 0.0f64..2.0) {
        let out = scl_loss(&r, &cfg(tau, alpha)).unwrap();
        prop_assert!(out.loss > 0.0 && out.loss.is_finite());
        prop_assert!(out.grad_anchors.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn scl_grows_with_alpha(r in reps(6, 5), tau in 0.05f64..1.0, a in 0.0f64..1.0, step in 0.01f64..1.0) {
        let lo = scl_loss(&r, &cfg(tau, a)).unwrap().loss;
        let hi = scl_loss(&r, &cfg(tau, a + step)).unwrap().loss;
        prop_assert!(hi > lo);
    }

    #[test]
    fn scl_ignores_vector_scale(r in reps(5, 4), scales in vec(0.01f64..100.0, 15)) {
        let base = scl_loss(&r, &cfg(0.1, 1.0)).unwrap().loss;
        let mut s = r.clone();
        for (v, c) in s.anchors.iter_mut().chain(&mut s.positives).chain(&mut s.negatives).zip(scales.iter().cycle()) {
            v.iter_mut().for_each(|x| *x *= c);
        }
        let scaled = scl_loss(&s, &cfg(0.1, 1.0)).unwrap().loss;
        prop_assert!((scaled - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn scl_ignores_batch_order(r in reps(6, 4), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..r.len()).collect();
        SplitMix64::new(seed).shuffle(&mut perm);
        let p = RepBatch {
            anchors: perm.iter().map(|&i| r.anchors[i].clone()).collect(),
            positives: perm.iter().map(|&i| r.positives[i].clone()).collect(),
            negatives: perm.iter().map(|&i| r.negatives[i].clone()).collect(),
        };
        let a = scl_loss(&r, &cfg(0.05, 1.0)).unwrap();
        let b = scl_loss(&p, &cfg(0.05, 1.0)).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-9 * a.loss.max(1.0));
        for (k, &i) in perm.iter().enumerate() {
            for (x, y) in b.grad_anchors[k].iter().zip(&a.grad_anchors[i]) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn bce_is_nonnegative(pairs in vec((0.0f64..=1.0, 0u8..2), 1..20)) {
        let (s, y): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        let out = bce_loss(&s, &y).unwrap();
        prop_assert!(out.loss >= 0.0 && out.loss.is_finite());
        prop_assert!(out.grad_scores.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn sts_keeps_token_multisets(t in triple(), seed in any::<u64>()) {
        let v = sts_view(&t, &mut SplitMix64::new(seed));
        prop_assert_eq!(v.context.len(), t.context.len());
        for (a, b) in v.context.iter().zip(&t.context) {
            prop_assert_eq!(sorted(a), sorted(b));
        }
        prop_assert_eq!(&v.response, &t.response);
    }

    #[test]
    fn sr_keeps_final_utterance(t in triple(), seed in any::<u64>()) {
        let v = sr_view(&t, &mut SplitMix64::new(seed));
        if t.context.len() < 3 {
            // Too few movable utterances: falls back to token shuffling.
            prop_assert_eq!(v, sts_view(&t, &mut SplitMix64::new(seed)));
            return Ok(());
        }
        prop_assert_eq!(v.context.last(), t.context.last());
        let mut a: Vec<Vec<String>> = v.context.iter().map(sorted).collect();
        let mut b: Vec<Vec<String>> = t.context.iter().map(sorted).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn view_batches_have_expected_size(ts in vec((triple(), triple()), 1..6), seed in any::<u64>()) {
        let batch = Batch {
            anchors: ts.iter().map(|p| p.0.clone()).collect(),
            negatives: ts.iter().map(|p| p.1.clone()).collect(),
        };
        for s in ViewStrategy::ALL {
            let vb = make_views(&batch, s, &mut SplitMix64::new(seed)).unwrap();
            let expected = if s == ViewStrategy::Tl { 2 * ts.len() } else { ts.len() };
            prop_assert_eq!(vb.len(), expected);
            prop_assert_eq!(vb.views.len(), expected);
            prop_assert_eq!(vb.dropout_views, s == ViewStrategy::Drop);
        }
    }

    #[test]
    fn metrics_are_bounded_and_ordered(cands in vec((0u8..4, 0u8..2), 1..12)) {
        let g = CandidateGroup::new(0, cands.iter().map(|&(s, y)| (f64::from(s), y)).collect());
        let order = rank_group(&g);
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..cands.len()).collect::<Vec<_>>());
        match group_metrics(&g) {
            None => prop_assert_eq!(g.num_positives(), 0),
            Some(m) => {
                prop_assert!(m.hits[0] <= m.hits[1] && m.hits[1] <= m.hits[2]);
                for v in [m.average_precision, m.reciprocal_rank, m.precision_at_1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(m.precision_at_1 <= m.reciprocal_rank);
                prop_assert_eq!(m.hits[0], m.precision_at_1);
            }
        }
    }

    #[test]
    fn aggregate_counts_skipped(groups in vec(vec((0u8..4, 0u8..2), 1..6), 1..20)) {
        let gs: Vec<CandidateGroup> = groups
            .iter()
            .enumerate()
            .map(|(i, c)| CandidateGroup::new(i, c.iter().map(|&(s, y)| (f64::from(s), y)).collect()))
            .collect();
        let empty = gs.iter().filter(|g| g.num_positives() == 0).count();
        match aggregate(&gs) {
            Ok(r) => prop_assert_eq!(r.skipped_groups, empty),
            Err(_) => prop_assert_eq!(empty, gs.len()),
        }
    }

    #[test]
    fn tsv_round_trip(t in triple()) {
        let back = parse_tsv_line(&t.to_tsv_line(), 1).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn encoding_respects_length(t in triple(), max_len in 4usize..40) {
        let vocab = Vocab::from_tokens(["a", "b", "c", "aa", "bb"].iter().map(|s| s.to_string()).collect()).unwrap();
        let e = encode_triple(&t, &vocab, max_len).unwrap();
        prop_assert_eq!(e.ids.len(), max_len);
        prop_assert!(e.len <= max_len);
        prop_assert_eq!(e.ids[0], CLS_ID);
        prop_assert_eq!(e.ids[e.len - 1], SEP_ID);
        prop_assert!(e.ids[e.len..].iter().all(|&i| i == PAD_ID));
        prop_assert!(e.ids[..e.len].iter().all(|&i| i != PAD_ID));
    }

    #[test]
    fn shuffle_is_a_permutation(n in 0usize..50, seed in any::<u64>()) {
        let mut v: Vec<usize> = (0..n).collect();
        SplitMix64::new(seed).shuffle(&mut v);
        v.sort_unstable();
        prop_assert_eq!(v, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), step in any::<u64>(), best in prop::option::of(0.0f64..1.0)) {
        let mut config = TrainConfig::default();
        config.encoder = EncoderConfig { vocab_size: 9, dim: 3, hidden: 4, max_len: 6, dropout: 0.1 };
        config.seed = seed;
        let params = Params::init(config.encoder, seed).unwrap();
        let moments = Moments::zeros_like(&params);
        let ck = Checkpoint {
            config,
            vocab_digest: "ab".repeat(32),
            step,
            params,
            moments,
            best_r1: best,
            best_step: best.map(|_| step),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
