mod common;

use cam_forge::cam::{
    fuse, fuse_unnormalized, stack_fuse, to_pseudo_mask, Cam, CamStack, FusionMode, PseudoMask,
};
use cam_forge::metrics::{accumulate, summarize, ConfusionMatrix};
use proptest::prelude::*;

fn cam_pair() -> impl Strategy<Value = (Cam, Cam)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        let v = prop::collection::vec(0.0f64..=1.0, h * w);
        (v.clone(), v).prop_map(move |(a, b)| (Cam::new(h, w, a).unwrap(), Cam::new(h, w, b).unwrap()))
    })
}

fn mode() -> impl Strategy<Value = FusionMode> {
    prop_oneof![Just(FusionMode::Or), Just(FusionMode::And), Just(FusionMode::Avg)]
}

fn mask_pair(classes: u8) -> impl Strategy<Value = (PseudoMask, PseudoMask)> {
    (1usize..=6, 1usize..=6).prop_flat_map(move |(h, w)| {
        // Only ground truth carries the ignore label.
        let pred = prop::collection::vec(0..classes, h * w);
        let gt = prop::collection::vec(prop_oneof![9 => 0..classes, 1 => Just(255u8)], h * w);
        (pred, gt).prop_map(move |(p, g)| (PseudoMask::new(h, w, p).unwrap(), PseudoMask::new(h, w, g).unwrap()))
    })
}

proptest! {
    #[test]
    fn fusion_is_commutative((a, b) in cam_pair(), m in mode()) {
        prop_assert_eq!(fuse(&a, &b, m).unwrap(), fuse(&b, &a, m).unwrap());
    }

    #[test]
    fn fused_maps_are_normalized((a, b) in cam_pair(), m in mode()) {
        let f = fuse(&a, &b, m).unwrap();
        prop_assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let raw_max = fuse_unnormalized(&a, &b, m).unwrap().max();
        if raw_max > 0.0 {
            prop_assert_eq!(f.max(), 1.0);
        } else {
            prop_assert!(f.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unnormalized_ordering((a, b) in cam_pair()) {
        let and = fuse_unnormalized(&a, &b, FusionMode::And).unwrap();
        let avg = fuse_unnormalized(&a, &b, FusionMode::Avg).unwrap();
        let or = fuse_unnormalized(&a, &b, FusionMode::Or).unwrap();
        for i in 0..a.values().len() {
            let (x, y) = (a.values()[i], b.values()[i]);
            prop_assert!(and.values()[i] <= x.min(y));
            prop_assert!(x.min(y) <= avg.values()[i] && avg.values()[i] <= x.max(y));
            prop_assert!(x.max(y) <= or.values()[i]);
        }
    }

    #[test]
    fn unnormalized_fusion_is_monotone((a, b) in cam_pair(), m in mode(), bump in 0.0f64..=1.0) {
        // Raising one input pixel never lowers any fused pixel.
        let mut v = a.values().to_vec();
        v[0] = v[0].max(bump);
        let a2 = Cam::new(a.height(), a.width(), v).unwrap();
        let lo = fuse_unnormalized(&a, &b, m).unwrap();
        let hi = fuse_unnormalized(&a2, &b, m).unwrap();
        for (x, y) in lo.values().iter().zip(hi.values()) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn pseudo_mask_labels_come_from_the_stack((a, b) in cam_pair(), t in 0.05f64..0.95) {
        let stack = CamStack::new("x", vec![(3, a.clone()), (9, b.clone())]).unwrap();
        let mask = to_pseudo_mask(&stack, t).unwrap();
        for (i, &l) in mask.labels().iter().enumerate() {
            let (x, y) = (a.values()[i], b.values()[i]);
            match l {
                0 => prop_assert!(x <= t && y <= t),
                3 => prop_assert!(x > t && x >= y),
                9 => prop_assert!(y > t && y > x),
                other => prop_assert!(false, "unexpected label {}", other),
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_adds_background((a, b) in cam_pair(), t in 0.05f64..0.5, dt in 0.0f64..0.45) {
        let stack = CamStack::new("x", vec![(1, a), (2, b)]).unwrap();
        let lo = to_pseudo_mask(&stack, t).unwrap();
        let hi = to_pseudo_mask(&stack, t + dt).unwrap();
        for (&x, &y) in lo.labels().iter().zip(hi.labels()) {
            prop_assert!(y == x || y == 0);
        }
    }

    #[test]
    fn stack_fusion_matches_per_class_fusion((a, b) in cam_pair(), m in mode()) {
        let s1 = CamStack::new("x", vec![(4, a.clone()), (5, b.clone())]).unwrap();
        let s2 = CamStack::new("x", vec![(4, b.clone()), (5, a.clone())]).unwrap();
        let f = stack_fuse(&s1, &s2, m).unwrap();
        prop_assert_eq!(f.get(4).unwrap(), &fuse(&a, &b, m).unwrap());
        prop_assert_eq!(f.get(5).unwrap(), &fuse(&b, &a, m).unwrap());
    }

    #[test]
    fn confusion_matches_brute_force((p, g) in mask_pair(4)) {
        let cm = accumulate(ConfusionMatrix::new(4).unwrap(), &p, &g).unwrap();
        let brute = common::brute_metrics(&[(&p, &g)], 4);
        for gt in 0..4u8 {
            for pr in 0..4u8 {
                prop_assert_eq!(cm.get(gt as usize, pr as usize), brute.counts.get(&(gt, pr)).copied().unwrap_or(0));
            }
        }
    }

    #[test]
    fn metrics_ignore_pixel_order((p, g) in mask_pair(3), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.labels().len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut common::rng(seed));
        let n = idx.len();
        let perm = |m: &PseudoMask| PseudoMask::new(1, n, idx.iter().map(|&i| m.labels()[i]).collect()).unwrap();
        let a = accumulate(ConfusionMatrix::new(3).unwrap(), &p, &g).unwrap();
        let b = accumulate(ConfusionMatrix::new(3).unwrap(), &perm(&p), &perm(&g)).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
    }

    #[test]
    fn confusion_is_additive((p1, g1) in mask_pair(3), (p2, g2) in mask_pair(3)) {
        let empty = ConfusionMatrix::new(3).unwrap();
        let both = accumulate(accumulate(empty.clone(), &p1, &g1).unwrap(), &p2, &g2).unwrap();
        let mut merged = accumulate(empty.clone(), &p1, &g1).unwrap();
        merged.merge(&accumulate(empty, &p2, &g2).unwrap()).unwrap();
        prop_assert_eq!(both, merged);
    }

    #[test]
    fn perfect_prediction_scores_100((_, g) in mask_pair(4)) {
        let cm = accumulate(ConfusionMatrix::new(4).unwrap(), &g, &g).unwrap();
        if cm.total() > 0 {
            let r = summarize(&cm).unwrap();
            prop_assert_eq!((r.miou, r.mean_precision, r.mean_recall), (100.0, 100.0, 100.0));
        }
    }
}
