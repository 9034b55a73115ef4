//! Property tests for the pipeline invariants that hold on arbitrary
//! inputs, not just the hand-picked cases of the unit suites.

use proptest::prelude::*;

use lithoscan::dataset::{ClassLabel, PatchRecord, ViewKind};
use lithoscan::evaluation::{compute_metrics, stratified_kfold, GroupingMode};
use lithoscan::features::{
    feature_vector, rgb_to_hsv, select_features, FeatureCombo, LbpParams, BINS,
};
use lithoscan::patching::{augment, whiten};
use lithoscan::raster::RgbImage;

fn patch_strategy(side: u32) -> impl Strategy<Value = PatchRecord> {
    proptest::collection::vec(any::<u8>(), (side * side * 3) as usize).prop_map(move |bytes| {
        PatchRecord {
            patch: RgbImage::from_raw(side, side, bytes).unwrap(),
            origin: (0, 0),
            class: ClassLabel::WW,
            view: ViewKind::Surface,
            stone_id: "prop".into(),
            synthetic: false,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hsv_ranges_hold(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let p = rgb_to_hsv([r, g, b]);
        prop_assert!((0.0..360.0).contains(&p.h));
        prop_assert!((0.0..=1.0).contains(&p.s));
        prop_assert!((0.0..=255.0).contains(&p.v));
        if r == g && g == b {
            prop_assert_eq!(p.s, 0.0);
            prop_assert_eq!(p.h, 0.0);
        }
    }

    #[test]
    fn descriptor_blocks_are_probability_vectors(rec in patch_strategy(12)) {
        let v = feature_vector(&rec, &LbpParams::default()).unwrap();
        prop_assert_eq!(v.components.len(), 4 * BINS);
        for block in 0..4 {
            let chunk = &v.components[block * BINS..(block + 1) * BINS];
            let sum: f64 = chunk.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "block {} sums to {}", block, sum);
            prop_assert!(chunk.iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn select_features_respects_block_arithmetic(
        rec in patch_strategy(12),
        eh in any::<bool>(),
        es in any::<bool>(),
        ev in any::<bool>(),
        lbp in any::<bool>(),
    ) {
        let combo = FeatureCombo { eh, es, ev, lbp };
        let v = feature_vector(&rec, &LbpParams::default()).unwrap();
        let selected = select_features(&v, combo);
        if combo.is_empty() {
            prop_assert!(selected.is_err());
        } else {
            prop_assert_eq!(selected.unwrap().components.len(), combo.blocks() * BINS);
        }
    }

    #[test]
    fn augmentation_count_and_sides(rec in patch_strategy(10)) {
        let variants = augment(&rec);
        prop_assert_eq!(variants.len(), 8);
        prop_assert!(variants.iter().all(|v| v.patch.dimensions() == (10, 10)));
    }

    #[test]
    fn whitening_statistics(rec in patch_strategy(10)) {
        let w = whiten(&rec.patch);
        let n = 100.0;
        for c in 0..3 {
            let mean: f64 = w.channel(c).sum::<f64>() / n;
            let std = (w.channel(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            // Constant channels whiten to zero; anything else to unit std.
            prop_assert!(std < 1e-12 || (std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kfold_partitions_for_arbitrary_label_mixes(
        seed in any::<u64>(),
        counts in proptest::collection::vec(5usize..40, 2..4),
    ) {
        let mut labels = Vec::new();
        for (class, &count) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(class, count));
        }
        let stones: Vec<String> = (0..labels.len()).map(|i| format!("s{i}")).collect();
        let split = stratified_kfold(&labels, &stones, 5, GroupingMode::PerPatch, seed).unwrap();
        let mut seen = vec![false; labels.len()];
        for fold in &split.folds {
            for &i in fold {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        for (class, &count) in counts.iter().enumerate() {
            let lo = count / 5;
            for fold in &split.folds {
                let got = fold.iter().filter(|&&i| labels[i] == class).count();
                prop_assert!(got == lo || got == lo + 1);
            }
        }
    }

    #[test]
    fn metrics_permutation_invariant(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 8..60),
        seed in any::<u64>(),
    ) {
        let classes: Vec<String> = (0..4).map(|c| format!("C{c}")).collect();
        let (y_true, y_pred): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        let a = compute_metrics(&y_true, &y_pred, &classes).unwrap();
        // Deterministic permutation of the (true, pred) pairs.
        let mut permuted = pairs.clone();
        let n = permuted.len();
        for i in 0..n {
            let j = (seed as usize).wrapping_mul(31).wrapping_add(i * 17) % n;
            permuted.swap(i, j);
        }
        let (pt, pp): (Vec<usize>, Vec<usize>) = permuted.into_iter().unzip();
        let b = compute_metrics(&pt, &pp, &classes).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.weighted_f1, b.weighted_f1);
    }
}
