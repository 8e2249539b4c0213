use proptest::prelude::*;
use scd_core::evaluation::{confusion, f1_iou, ConfusionCounts};
use scd_core::matching::{match_and_refine, MatchConfig};
use scd_core::{overlap_ratio, to_binary, union_masks, Bitmap, ChangeMask, MaskInstance, MaskSource};

fn grid() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=32, 1usize..=32)
}

fn bitmap(w: usize, h: usize) -> impl Strategy<Value = Bitmap> {
    proptest::collection::vec(any::<bool>(), w * h).prop_map(move |v| Bitmap::from_bools(w, h, &v).unwrap())
}

fn instances(w: usize, h: usize, max: usize) -> impl Strategy<Value = Vec<MaskInstance>> {
    proptest::collection::vec(bitmap(w, h), 0..=max).prop_map(|bs| {
        bs.into_iter()
            .enumerate()
            .map(|(k, b)| MaskInstance::new(format!("c{k}"), b, MaskSource::Tracker))
            .collect()
    })
}

fn brute_overlap(c: &Bitmap, r: &Bitmap) -> Option<f64> {
    let (w, h) = c.dims();
    let mut inter = 0usize;
    let mut area = 0usize;
    for y in 0..h {
        for x in 0..w {
            if c.get(x, y) {
                area += 1;
                inter += r.get(x, y) as usize;
            }
        }
    }
    (area > 0).then(|| inter as f64 / area as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn overlap_ratio_matches_pixel_count((a, b) in grid().prop_flat_map(|(w, h)| (bitmap(w, h), bitmap(w, h)))) {
        let inst = MaskInstance::new("a", a.clone(), MaskSource::Tracker);
        match brute_overlap(&a, &b) {
            Some(want) => prop_assert_eq!(overlap_ratio(&inst, &b).unwrap(), want),
            None => prop_assert!(overlap_ratio(&inst, &b).is_err()),
        }
    }

    #[test]
    fn union_is_pixelwise_or(((w, h), masks) in grid().prop_flat_map(|(w, h)| (Just((w, h)), instances(w, h, 5)))) {
        let u = union_masks(&masks, w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(u.get(x, y), masks.iter().any(|m| m.bitmap.get(x, y)));
            }
        }
    }

    #[test]
    fn to_binary_marks_nonzero_labels(
        (w, h, labels) in grid().prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(0u8..4, w * h)))
    ) {
        let m = ChangeMask::from_labels(w, h, 4, labels.clone()).unwrap();
        let b = to_binary(&m);
        for (i, l) in labels.iter().enumerate() {
            prop_assert_eq!(b.get_index(i), *l != 0);
        }
    }

    #[test]
    fn iou_is_f1_over_two_minus_f1(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000) {
        let c = ConfusionCounts { num_classes: 2, tp: vec![0, tp], fp: vec![0, fp], fn_: vec![0, fn_], total: tp + fp + fn_ };
        let s = f1_iou(&c, 1);
        if tp + fp + fn_ == 0 {
            prop_assert!(s.undefined);
        } else {
            let via_f1 = s.f1 / (2.0 - s.f1);
            prop_assert!((s.iou - via_f1).abs() <= 1e-12, "{} vs {}", s.iou, via_f1);
            prop_assert!(0.0 <= s.iou && s.iou <= s.f1 + 1e-15 && s.f1 <= 1.0);
        }
    }

    #[test]
    fn confusion_invariant_under_pixel_permutation(
        (n, pred, gt, perm) in (1usize..=64).prop_flat_map(|n| (
            Just(n),
            proptest::collection::vec(0u8..4, n),
            proptest::collection::vec(0u8..4, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        ))
    ) {
        let a = confusion(&ChangeMask::from_labels(n, 1, 4, pred.clone()).unwrap(), &ChangeMask::from_labels(n, 1, 4, gt.clone()).unwrap()).unwrap();
        let p2: Vec<u8> = perm.iter().map(|&i| pred[i]).collect();
        let g2: Vec<u8> = perm.iter().map(|&i| gt[i]).collect();
        let b = confusion(&ChangeMask::from_labels(n, 1, 4, p2).unwrap(), &ChangeMask::from_labels(n, 1, 4, g2).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn eleven_points() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn retention_and_area_fall_as_thresholds_rise(
        (initial, tracker, semantic) in (4usize..=16, 4usize..=16).prop_flat_map(|(w, h)| (bitmap(w, h), instances(w, h, 6), instances(w, h, 6)))
    ) {
        for sweep_geo in [true, false] {
            let mut last: Option<(usize, usize)> = None;
            for th in eleven_points() {
                let cfg = if sweep_geo {
                    MatchConfig { alpha_t: th, ..MatchConfig::default() }
                } else {
                    MatchConfig { alpha_g: th, ..MatchConfig::default() }
                };
                let r = match_and_refine(&initial, &tracker, &semantic, &cfg).unwrap();
                let now = (r.retained_count(), r.mask.area());
                if let Some(prev) = last {
                    prop_assert!(now.0 <= prev.0 && now.1 <= prev.1, "{th}: {now:?} after {prev:?}");
                }
                last = Some(now);
            }
        }
    }

    #[test]
    fn refined_mask_is_union_of_passing_candidates(
        (initial, tracker, semantic, keep) in (4usize..=16, 4usize..=16)
            .prop_flat_map(|(w, h)| (bitmap(w, h), instances(w, h, 5), instances(w, h, 5), any::<bool>()))
    ) {
        let cfg = MatchConfig { keep_initial: keep, ..MatchConfig::default() };
        let r = match_and_refine(&initial, &tracker, &semantic, &cfg).unwrap();
        let passing: Vec<&Bitmap> = tracker.iter().map(|c| (c, cfg.alpha_t))
            .chain(semantic.iter().map(|c| (c, cfg.alpha_g)))
            .filter(|(c, th)| brute_overlap(&c.bitmap, &initial).is_some_and(|a| a > *th))
            .map(|(c, _)| &c.bitmap)
            .collect();
        for i in 0..initial.len() {
            let want = passing.iter().any(|b| b.get_index(i)) || (keep && initial.get_index(i));
            prop_assert_eq!(r.mask.get_index(i), want);
        }
    }
}
