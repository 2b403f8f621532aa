use attnseg::eval::{auc_roc, dice, iou};
use attnseg::maps::{bilinear_resize, fuse, reverse_shift_map, window_reverse_map, FusedMap, LayerMap, MapMethod};
use attnseg::segment::{binarize_values, gate_by_brain, grid_search_threshold, mean_dice_at, ThresholdGrid};
use attnseg::Method;
use ndarray::Array2;
use proptest::prelude::*;

fn grid(side: usize, cells: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((side, side), cells).unwrap()
}

fn binary(side: usize, cells: Vec<bool>) -> Array2<u8> {
    Array2::from_shape_vec((side, side), cells.into_iter().map(u8::from).collect()).unwrap()
}

fn map_strategy(side: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, side * side).prop_map(move |v| grid(side, v))
}

fn mask_strategy(side: usize) -> impl Strategy<Value = Array2<u8>> {
    prop::collection::vec(any::<bool>(), side * side).prop_map(move |v| binary(side, v))
}

proptest! {
    #[test]
    fn iou_never_exceeds_dice(a in mask_strategy(6), b in mask_strategy(6)) {
        let (d, j) = (dice(&a, &b).unwrap(), iou(&a, &b).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && j <= d + 1e-12);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert_eq!(d, dice(&b, &a).unwrap());
    }

    #[test]
    fn auc_depends_only_on_score_order(
        pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..40),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
        let gts: Vec<bool> = pairs.iter().map(|&(_, g)| g).collect();
        let base = auc_roc(&scores, &gts).unwrap();
        let stretched: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        prop_assert_eq!(auc_roc(&stretched, &gts).unwrap(), base);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        match (base, auc_roc(&flipped, &gts).unwrap()) {
            (Some(a), Some(b)) => prop_assert!((a + b - 1.0).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn higher_threshold_keeps_a_subset(values in map_strategy(8), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = binarize_values(&values, lo, Method::HgiSam);
        let tight = binarize_values(&values, hi, Method::HgiSam);
        prop_assert!(tight.mask.iter().zip(loose.mask.iter()).all(|(&t, &l)| t <= l));
        prop_assert!(tight.foreground_pixels <= loose.foreground_pixels);
    }

    #[test]
    fn gating_clears_outside_brain(values in map_strategy(8), brain in mask_strategy(8)) {
        let map = FusedMap::normalized(values, MapMethod::HgiSam, vec![0, 1, 2], None);
        let gated = gate_by_brain(&map, &brain).unwrap();
        for (&v, &m) in gated.values.iter().zip(brain.iter()) {
            prop_assert!(m == 1 || v == 0.0);
        }
        let max = gated.values.fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(gated.is_zero() || (max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_ignores_layer_scale(a in map_strategy(6), b in map_strategy(6), scale in 0.01f64..100.0) {
        let maps = vec![
            LayerMap { values: a.clone(), layer_index: 0 },
            LayerMap { values: b.clone(), layer_index: 1 },
        ];
        let scaled = vec![
            LayerMap { values: a * scale, layer_index: 0 },
            LayerMap { values: b, layer_index: 1 },
        ];
        let fused = fuse(&maps, &[0, 1], MapMethod::HgiSam).unwrap();
        let rescaled = fuse(&scaled, &[0, 1], MapMethod::HgiSam).unwrap();
        for (x, y) in fused.values.iter().zip(rescaled.values.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(fused.values.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn grid_search_returns_the_best_grid_point(
        maps in prop::collection::vec(map_strategy(5), 1..4),
        masks in prop::collection::vec(mask_strategy(5), 4),
    ) {
        let pairs: Vec<(&Array2<f64>, &Array2<u8>)> = maps.iter().zip(&masks).collect();
        let grid = ThresholdGrid::default();
        let choice = grid_search_threshold(&pairs, &grid).unwrap();
        for t in grid.values() {
            let d = mean_dice_at(&pairs, t).unwrap();
            prop_assert!(d <= choice.mean_dice);
            if t < choice.threshold {
                prop_assert!(d < choice.mean_dice);
            }
        }
    }

    #[test]
    fn shift_reversal_permutes_entries(values in map_strategy(8), shift in 0usize..8) {
        let back = reverse_shift_map(&values, shift);
        let mut before: Vec<f64> = values.iter().copied().collect();
        let mut after: Vec<f64> = back.iter().copied().collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        prop_assert_eq!(before, after);
        prop_assert_eq!(back[[shift, shift]], values[[0, 0]]);
    }

    #[test]
    fn window_reverse_places_each_token_once(window in 1usize..4, per_side in 1usize..4) {
        let side = window * per_side;
        let tokens = window * window;
        let saliency = Array2::from_shape_fn((per_side * per_side, tokens), |(w, t)| (w * tokens + t) as f64);
        let map = window_reverse_map(&saliency, window, side).unwrap();
        let mut seen: Vec<f64> = map.iter().copied().collect();
        seen.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..side * side).map(|i| i as f64).collect();
        prop_assert_eq!(seen, expected);
    }

    #[test]
    fn resizing_stays_within_the_input_range(values in map_strategy(6), side in 1usize..20) {
        let out = bilinear_resize(&values, side, side);
        let lo = values.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = values.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
