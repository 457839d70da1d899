mod common;

use proptest::prelude::*;
use tagdistill::distill::{loss_tag, loss_total, minmax_norm, union_max, Reduction};
use tagdistill::metrics::{average_precision, binarize, mask_stats};
use tagdistill::scoring::{score_candidates, score_seg, simmap};
use tagdistill::selection::{select_by_gap, select_by_threshold};
use tagdistill::tensor_io::{decode_mask, decode_tensor, encode_mask, encode_tensor, BinaryMask, Tensor};
use tagdistill::{Embedding, PixelMap, ScalarMap, ScoreMethod, TagEmbedding, TagScores};

const NO_PATH: &str = "<memory>";

fn unit() -> impl Strategy<Value = f64> {
    // keep away from zero-norm vectors
    prop_oneof![-1.0..-0.05f64, 0.05..1.0f64]
}

/// (pixels, text, candidates)
fn instance() -> impl Strategy<Value = (PixelMap, Embedding, Vec<TagEmbedding>)> {
    (1usize..=4, 1usize..=4, 2usize..=6, 1usize..=5).prop_flat_map(|(h, w, c, n)| {
        (
            prop::collection::vec(unit(), h * w * c),
            prop::collection::vec(unit(), c),
            prop::collection::vec(prop::collection::vec(unit(), c), n),
        )
            .prop_map(move |(px, text, tags)| {
                let cands = tags
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| TagEmbedding::new(format!("t{i}"), Embedding(t)))
                    .collect();
                (PixelMap::new(h, w, c, px).unwrap(), Embedding(text), cands)
            })
    })
}

fn scores() -> impl Strategy<Value = TagScores> {
    prop::collection::vec(-1.0..1.0f64, 1..10).prop_map(|v| {
        TagScores::new(
            ScoreMethod::Pixel,
            v.into_iter().enumerate().map(|(i, s)| (format!("t{i}"), s)).collect(),
        )
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0u8..2, h * w),
            prop::collection::vec(0u8..2, h * w),
        )
            .prop_map(move |(a, b)| (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn scores_are_scale_invariant((px, text, cands) in instance(), k in 0.01..100.0f64) {
        let scaled: Vec<TagEmbedding> = cands
            .iter()
            .map(|c| TagEmbedding::new(c.tag.clone(), c.embedding.scaled(k)))
            .collect();
        for m in ScoreMethod::ALL {
            let a = score_candidates(&px, &text, &cands, m).unwrap();
            let b = score_candidates(&px.scaled(k), &text.scaled(1.0 / k), &scaled, m).unwrap();
            for (x, y) in a.scores().iter().zip(b.scores()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pixel_score_dominates_map((px, text, cands) in instance()) {
        let s = score_candidates(&px, &text, &cands, ScoreMethod::Pixel).unwrap();
        for (c, score) in cands.iter().zip(s.scores()) {
            let m = simmap(&px, &c.embedding).unwrap();
            prop_assert!(m.values().iter().all(|v| *v <= score));
            prop_assert!(m.values().contains(&score));
            prop_assert!((-1.0..=1.0).contains(&score));
        }
    }

    #[test]
    fn seg_scores_sum_to_one((px, _text, cands) in instance()) {
        let refs: Vec<&Embedding> = cands.iter().map(|c| &c.embedding).collect();
        let s = score_seg(&px, &refs).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(s, common::score_seg(px.data(), px.len(), px.channels(), &cands.iter().map(|c| c.embedding.0.clone()).collect::<Vec<_>>()));
    }

    #[test]
    fn gap_is_affine_invariant(s in scores(), a in 0.1..10.0f64, b in -1.0..1.0f64) {
        let base = select_by_gap(&s).unwrap();
        let mut gaps = base.gaps.clone();
        gaps.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(gaps.len() < 2 || gaps[0] - gaps[1] > 1e-9);
        let moved = TagScores::new(s.method, s.entries.iter().map(|(t, v)| (t.clone(), a * v + b)).collect());
        prop_assert_eq!(select_by_gap(&moved).unwrap().selected, base.selected);
    }

    #[test]
    fn gap_selects_a_prefix(s in scores()) {
        let r = select_by_gap(&s).unwrap();
        prop_assert!(!r.selected.is_empty());
        let kept: Vec<f64> = r.selected.iter().map(|t| s.get(t).unwrap()).collect();
        let lowest = kept.iter().copied().fold(f64::INFINITY, f64::min);
        for (t, v) in &s.entries {
            if !r.contains(t) {
                prop_assert!(*v <= lowest);
            }
        }
    }

    #[test]
    fn threshold_is_antitone(s in scores(), t1 in -1.0..1.0f64, t2 in -1.0..1.0f64) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let wide = select_by_threshold(&s, lo);
        let narrow = select_by_threshold(&s, hi);
        prop_assert!(narrow.selected.iter().all(|t| wide.contains(t)));
    }

    #[test]
    fn binarize_is_monotone(v in prop::collection::vec(-1.0..1.0f64, 1..30), t1 in -1.0..1.0f64, t2 in -1.0..1.0f64) {
        let m = ScalarMap::new(1, v.len(), v).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = binarize(&m, lo);
        let b = binarize(&m, hi);
        prop_assert!(b.data().iter().zip(a.data()).all(|(x, y)| x <= y));
    }

    #[test]
    fn tensor_round_trip_is_bitwise(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut r = common::rng(seed);
        let data: Vec<f32> = common::uniform_vec(&mut r, n).into_iter().map(|x| (x * 1e3) as f32).collect();
        let t = Tensor::new(dims, data).unwrap();
        let bytes = encode_tensor(&t);
        prop_assert_eq!(bytes.len(), 16 + 8 * t.dims().len() + 4 * n);
        let back = decode_tensor(&bytes, NO_PATH.as_ref()).unwrap();
        prop_assert_eq!(encode_tensor(&back), bytes);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn mask_round_trip((m, _) in mask_pair()) {
        let back = decode_mask(&encode_mask(&m), NO_PATH.as_ref()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn losses_are_non_negative((px, text, cands) in instance(), pick in any::<u64>()) {
        let selected: Vec<String> = cands
            .iter()
            .enumerate()
            .filter(|(i, _)| pick >> (i % 64) & 1 == 1)
            .map(|(_, c)| c.tag.clone())
            .collect();
        for red in [Reduction::Sum, Reduction::Mean] {
            let r = loss_total(&px, &text, &cands, &selected, red).unwrap();
            prop_assert!(r.l_distill >= 0.0 && r.l_tag >= 0.0);
            prop_assert!(r.per_tag.iter().all(|(_, d)| *d >= 0.0));
            let (l_tag, per_tag) = loss_tag(&px, &cands, &selected, red).unwrap();
            prop_assert!((l_tag - per_tag.iter().map(|(_, d)| d).sum::<f64>()).abs() < 1e-12);
            prop_assert!((l_tag - r.l_tag).abs() < 1e-12);
        }
    }

    #[test]
    fn union_dominates_inputs(maps in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 1..5)) {
        let normed: Vec<ScalarMap> = maps.iter().map(|m| minmax_norm(&ScalarMap::new(2, 3, m.clone()).unwrap()).unwrap()).collect();
        let u = union_max(&normed, 2, 3).unwrap();
        for m in &normed {
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(u.values().iter().zip(m.values()).all(|(a, b)| a >= b));
        }
        for (i, v) in u.values().iter().enumerate() {
            prop_assert!(normed.iter().any(|m| m.values()[i] == *v));
        }
    }

    #[test]
    fn ap_is_one_iff_positives_lead(s in prop::collection::vec(0u8..5, 1..10), pos in prop::collection::vec(any::<bool>(), 10)) {
        let scores: Vec<f64> = s.iter().map(|&x| f64::from(x)).collect();
        let positive = &pos[..scores.len()];
        let ap = average_precision(&scores, positive);
        prop_assert_eq!(ap, common::average_precision(&scores, positive));
        if let Some(ap) = ap {
            let min_pos = scores.iter().zip(positive).filter(|(_, p)| **p).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
            let max_neg = scores.iter().zip(positive).filter(|(_, p)| !**p).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(ap == 1.0, min_pos > max_neg);
        } else {
            prop_assert!(positive.iter().all(|p| !p));
        }
    }

    #[test]
    fn iou_symmetric_and_rates_swap((a, b) in mask_pair()) {
        let ab = mask_stats(&a, &b).unwrap();
        let ba = mask_stats(&b, &a).unwrap();
        prop_assert_eq!(ab.iou, ba.iou);
        prop_assert!((0.0..=1.0).contains(&ab.iou));
        // complementing both masks turns misses into false alarms
        let flip = |m: &BinaryMask| BinaryMask::new(m.height(), m.width(), m.data().iter().map(|x| 1 - x).collect()).unwrap();
        let c = mask_stats(&flip(&a), &flip(&b)).unwrap();
        prop_assert_eq!(c.fpr, ab.fnr);
        prop_assert_eq!(c.fnr, ab.fpr);
    }
}
