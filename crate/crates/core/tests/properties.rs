use proptest::prelude::*;
use stablematch::fusion::{fuse, init_params, FeatureMap, FusionKind};
use stablematch::geometry::{giou, iou, nms, rescale_giou};
use stablematch::loss::{negative_term, rescale_positives, RescaleStrategy};
use stablematch::matching::{brute_force_assign, hungarian};
use stablematch::stability::unstable_score;
use stablematch::{Assignment, BBox, CostMatrix};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..1.0f64, 0.0..1.0f64, 0.01..0.5f64, 0.01..0.5f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn matrix(max_gt: usize) -> impl Strategy<Value = CostMatrix> {
    (1..=max_gt, 0..=2usize).prop_flat_map(|(n_gt, extra)| {
        let n_pred = n_gt + extra;
        prop::collection::vec(-5.0..5.0f64, n_pred * n_gt).prop_map(move |v| CostMatrix::new(n_pred, n_gt, v).unwrap())
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn iou_and_giou_are_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (i, g) = (iou(&a, &b), giou(&a, &b));
        prop_assert_eq!(i, iou(&b, &a));
        prop_assert!((g - giou(&b, &a)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!(g <= i + 1e-15);
    }

    #[test]
    fn rescale_giou_is_monotone(a in -1.0..=1.0f64, b in -1.0..=1.0f64) {
        let (ra, rb) = (rescale_giou(a).unwrap(), rescale_giou(b).unwrap());
        prop_assert!((0.0..=1.0).contains(&ra));
        if a < b {
            prop_assert!(ra <= rb);
        }
    }

    #[test]
    fn nms_keeps_a_valid_subset(boxes in prop::collection::vec((bbox(), 0.0..1.0f64), 0..12), thr in 0.0..=1.0f64) {
        let kept = nms(&boxes, thr).unwrap();
        let mut sorted = kept.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), kept.len());
        prop_assert!(kept.iter().all(|&k| k < boxes.len()));
        for (x, &i) in kept.iter().enumerate() {
            for &j in &kept[x + 1..] {
                prop_assert!(iou(&boxes[i].0, &boxes[j].0) <= thr);
            }
        }
        if !boxes.is_empty() {
            prop_assert!(!kept.is_empty());
        }
    }

    #[test]
    fn negative_term_increases_with_p(p in 0.001..0.998f64, dp in 1e-4..1e-3f64, gamma in 0.5..4.0f64) {
        prop_assert!(negative_term(p, gamma) < negative_term(p + dp, gamma));
    }

    #[test]
    fn rescale_hits_its_peak(raw in prop::collection::vec(0.01..1.0f64, 1..10), max_iou in 0.01..=1.0f64) {
        let peak = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
        let m = rescale_positives(&raw, max_iou, RescaleStrategy::MaxIou);
        prop_assert!((peak(&m) - max_iou).abs() <= 1e-12);
        let one = rescale_positives(&raw, max_iou, RescaleStrategy::ToOne);
        prop_assert!((peak(&one) - 1.0).abs() <= 1e-12);
        prop_assert_eq!(rescale_positives(&raw, max_iou, RescaleStrategy::None), raw);
    }

    #[test]
    fn hungarian_is_optimal(c in matrix(6)) {
        let h = hungarian(&c).unwrap();
        let b = brute_force_assign(&c).unwrap();
        prop_assert_eq!(h.total_cost(&c), b.total_cost(&c));
        prop_assert_eq!(h, b);
    }

    #[test]
    fn hungarian_is_row_permutation_equivariant((c, perm) in matrix(5).prop_flat_map(|c| {
        let n = c.n_pred();
        (Just(c), permutation(n))
    })) {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| c.row(i).to_vec()).collect();
        let permuted = CostMatrix::from_rows(&rows).unwrap();
        let a = hungarian(&c).unwrap();
        let b = hungarian(&permuted).unwrap();
        prop_assert!((a.total_cost(&c) - b.total_cost(&permuted)).abs() < 1e-9);
    }

    #[test]
    fn hungarian_ignores_constant_shift(c in matrix(5), k in -3.0..3.0f64) {
        let shifted = CostMatrix::new(c.n_pred(), c.n_gt(), c.values().iter().map(|v| v + k).collect()).unwrap();
        let a = hungarian(&c).unwrap();
        let b = hungarian(&shifted).unwrap();
        prop_assert!((a.total_cost(&c) - b.total_cost(&c)).abs() < 1e-9);
    }

    #[test]
    fn unstable_score_is_a_scaled_metric(
        (x, y, z) in (1..8usize).prop_flat_map(|n| (permutation(n + 3), permutation(n + 3), permutation(n + 3)))
    ) {
        let n = x.len() - 3;
        let asg = |v: &[usize]| Assignment::from_gt_order(v[..n].to_vec()).unwrap();
        let (a, b, c) = (asg(&x), asg(&y), asg(&z));
        let d = |p: &Assignment, q: &Assignment| unstable_score(p, q, n).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        prop_assert!((0.0..=100.0).contains(&d(&a, &b)));
        // relabelling predictions consistently changes nothing
        let relabel = |p: &Assignment| Assignment::from_gt_order(p.matched_predictions().map(|i| i + 100).collect()).unwrap();
        prop_assert_eq!(d(&relabel(&a), &relabel(&b)), d(&a, &b));
    }

    #[test]
    fn fusion_preserves_shape_and_normalizes(layers in 1..5usize, tokens in 1..6usize, dim in 2..9usize, seed in any::<u64>()) {
        let backbone = FeatureMap::random(tokens, dim, seed).unwrap();
        let enc: Vec<FeatureMap> = (0..layers)
            .map(|l| FeatureMap::random(tokens, dim, seed.wrapping_add(1 + l as u64)).unwrap())
            .collect();
        for kind in FusionKind::ALL {
            let params = init_params(kind, layers, dim, seed);
            let out = fuse(kind, &backbone, &enc, &params).unwrap();
            prop_assert_eq!(out.len(), kind.site_count(layers));
            for m in &out {
                prop_assert_eq!((m.tokens(), m.dim()), (tokens, dim));
                for t in 0..tokens {
                    let row = m.row(t);
                    let mean = row.iter().sum::<f64>() / dim as f64;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / dim as f64;
                    prop_assert!(mean.abs() < 1e-9);
                    prop_assert!((var - 1.0).abs() < 1e-9 || var < 1e-18);
                }
            }
            prop_assert_eq!(&out, &fuse(kind, &backbone, &enc, &init_params(kind, layers, dim, seed)).unwrap());
        }
    }
}
