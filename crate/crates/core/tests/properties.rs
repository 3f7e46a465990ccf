use finetrack_core::geometry::BBox;
use finetrack_core::metrics::{clear_metrics, Annotation, TrackingEval};
use finetrack_core::tracker::{ema_update, feature_distance, fused_distance, fused_pair, iou_distance, KalmanFilter};
use nalgebra::SMatrix;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..80.0f64, 1.0..120.0f64).prop_map(|(x, y, w, h)| BBox::from_tlwh(x, y, w, h))
}

fn embedding(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
}

proptest! {
    #[test]
    fn fused_distance_in_unit_interval(
        tracks in prop::collection::vec((bbox(), embedding(6)), 0..5),
        dets in prop::collection::vec((bbox(), embedding(6)), 0..5),
    ) {
        let tb: Vec<BBox> = tracks.iter().map(|t| t.0).collect();
        let db: Vec<BBox> = dets.iter().map(|d| d.0).collect();
        let te: Vec<&Vec<f64>> = tracks.iter().map(|t| &t.1).collect();
        let de: Vec<&Vec<f64>> = dets.iter().map(|d| &d.1).collect();
        let m = fused_distance(&feature_distance(&te, &de), &iou_distance(&tb, &db)).unwrap();
        for mat in [&m.feature, &m.iou, &m.gated_feature, &m.fused] {
            for &v in mat.data() {
                prop_assert!((0.0..=1.0).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn fused_pair_is_monotone(f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64, i1 in 0.0..=1.0f64, i2 in 0.0..=1.0f64) {
        let (flo, fhi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let (ilo, ihi) = if i1 <= i2 { (i1, i2) } else { (i2, i1) };
        prop_assert!(fused_pair(flo, i1) <= fused_pair(fhi, i1));
        prop_assert!(fused_pair(f1, ilo) <= fused_pair(f1, ihi));
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = a.iou(&b);
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ema_output_has_unit_norm(a in embedding(8), b in embedding(8), m in 0.0..1.0f64) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
        let mut a = a;
        let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        a.iter_mut().for_each(|v| *v /= n);
        let out = ema_update(&a, &b, m);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 0.0);
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kalman_covariance_stays_psd(
        start in bbox(),
        steps in prop::collection::vec((any::<bool>(), -5.0..5.0f64, -5.0..5.0f64), 1..40),
    ) {
        let kf = KalmanFilter;
        let mut state = kf.initiate(&start);
        let mut truth = start;
        for (observe, dx, dy) in steps {
            kf.predict(&mut state);
            truth = truth.translate(dx, dy);
            if observe {
                kf.update(&mut state, &truth);
            }
            let p = SMatrix::<f64, 8, 8>::from_fn(|i, j| state.covariance[i][j]);
            prop_assert_eq!(p, p.transpose());
            let eig = p.symmetric_eigenvalues();
            let scale = eig.amax().max(1.0);
            prop_assert!(eig.min() >= -1e-12 * scale, "eigenvalues {eig}");
        }
    }

    #[test]
    fn clear_metrics_invariant_to_relabeling(offset in 1u64..1000, perm_seed in 0usize..6) {
        let boxes = |k: usize, t: usize| BBox::from_tlwh(10.0 + 60.0 * k as f64 + t as f64, 20.0, 20.0, 48.0);
        let mut gt = Vec::new();
        let mut hyp = Vec::new();
        for t in 0..6 {
            for k in 0..3 {
                gt.push(Annotation { frame: t, id: k as u64, bbox: boxes(k, t) });
                // One hypothesis swaps identities half way through.
                let h = if k < 2 && t >= 3 { 1 - k } else { k };
                if !(k == 2 && t == 4) {
                    hyp.push(Annotation { frame: t, id: h as u64, bbox: boxes(k, t) });
                }
            }
        }
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let relabel = |a: &Annotation| Annotation { id: perms[perm_seed][a.id as usize] as u64 + offset, ..*a };
        let base = clear_metrics(&TrackingEval::new(gt.clone(), hyp.clone())).unwrap();
        let moved = clear_metrics(&TrackingEval::new(
            gt.iter().map(relabel).collect(),
            hyp.iter().map(|a| Annotation { id: a.id * 7 + offset, ..*a }).collect(),
        ))
        .unwrap();
        prop_assert_eq!(base, moved);
    }
}
