use posture_core::metrics::{iou, miou_image, ConfusionAccumulator};
use posture_core::pseudo::{extract_pseudo_labels, score_batch, split_batch};
use posture_core::{argmax_mask, HardMask, ProbMap, IGNORE, NUM_CLASSES};
use proptest::prelude::*;

const SIDE: usize = 6;

fn labels(ignore: bool) -> impl Strategy<Value = Vec<u8>> {
    let cell = if ignore {
        prop_oneof![9 => 0u8..NUM_CLASSES as u8, 1 => Just(IGNORE)].boxed()
    } else {
        (0u8..NUM_CLASSES as u8).boxed()
    };
    prop::collection::vec(cell, SIDE * SIDE)
}

fn mask(l: Vec<u8>) -> HardMask {
    HardMask::new(SIDE, SIDE, l).unwrap()
}

fn probmap() -> impl Strategy<Value = ProbMap> {
    prop::collection::vec(-4.0f32..4.0, NUM_CLASSES * SIDE * SIDE)
        .prop_map(|logits| ProbMap::from_logits_chw(SIDE, SIDE, &logits))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn miou_is_a_fraction(p in labels(false), r in labels(true)) {
        let m = miou_image(&mask(p), &mask(r)).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn self_comparison_is_perfect(r in labels(false)) {
        let r = mask(r);
        prop_assert_eq!(miou_image(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn iou_is_symmetric_without_ignore(a in labels(false), b in labels(false), c in 0..NUM_CLASSES) {
        let (a, b) = (mask(a), mask(b));
        prop_assert_eq!(iou(&a, &b, c).unwrap(), iou(&b, &a, c).unwrap());
    }

    #[test]
    fn merged_accumulators_match_one_pass(
        pairs in prop::collection::vec((labels(false), labels(true)), 1..8),
        cut in 0usize..8,
    ) {
        let pairs: Vec<_> = pairs.into_iter().map(|(p, r)| (mask(p), mask(r))).collect();
        let cut = cut.min(pairs.len());
        let mut whole = ConfusionAccumulator::new();
        let (mut left, mut right) = (ConfusionAccumulator::new(), ConfusionAccumulator::new());
        for (i, (p, r)) in pairs.iter().enumerate() {
            whole.accumulate(p, r).unwrap();
            if i < cut { left.accumulate(p, r).unwrap() } else { right.accumulate(p, r).unwrap() }
        }
        left.merge(&right);
        prop_assert_eq!(left.report(), whole.report());
    }

    #[test]
    fn higher_threshold_only_drops_labels(pm in probmap(), lo in 0.0f64..1.0, gap in 0.0f64..0.5) {
        let loose = extract_pseudo_labels(&pm, lo);
        let strict = extract_pseudo_labels(&pm, (lo + gap).min(1.0));
        let arg = argmax_mask(&pm);
        for ((&l, &s), &a) in loose.labels().iter().zip(strict.labels()).zip(arg.labels()) {
            prop_assert!(s == IGNORE || s == l);
            prop_assert!(l == IGNORE || l == a);
        }
    }

    #[test]
    fn split_partitions_by_score(
        scores in prop::collection::vec(0.0f64..1.0, 1..20),
        gamma in 0.0f64..1.0,
    ) {
        let split = split_batch(&scores, gamma);
        let mut all: Vec<_> = split.reliable_indices.iter().chain(&split.unreliable_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..scores.len()).collect::<Vec<_>>());
        prop_assert!(split.reliable_indices.iter().all(|&i| scores[i] >= gamma));
        prop_assert!(split.unreliable_indices.iter().all(|&i| scores[i] < gamma));
        prop_assert_eq!(split.lambda, split.reliable_indices.len() as f64 / scores.len() as f64);
    }

    #[test]
    fn scores_are_fractions(preds in prop::collection::vec(probmap(), 1..4), prior in labels(true)) {
        let priors = vec![mask(prior); preds.len()];
        for s in score_batch(&preds, &priors).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
