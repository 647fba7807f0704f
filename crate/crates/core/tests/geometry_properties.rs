mod support;

use std::f64::consts::{FRAC_PI_2, PI};

use graspreason_core::geometry::{self, default_width_max, GraspPose};
use graspreason_core::{
    angle_delta, decode_grasps, is_valid_grasp, pose_to_rect, rasterize_gt_maps, rect_iou, GraspRect,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle::{angle_delta_ref, mask_area, mask_iou, OracleBox};

const JAW: f64 = 0.5;

fn oracle_box(p: &GraspPose<f64>) -> OracleBox {
    OracleBox::new(p.x(), p.y(), p.theta(), p.width(), p.width() * JAW)
}

fn random_pose(rng: &mut ChaCha8Rng, lo: f64, hi: f64, wmin: f64, wmax: f64) -> GraspPose<f64> {
    GraspPose::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(-PI..PI),
        rng.random_range(wmin..wmax),
        1.0,
    )
    .unwrap()
}

#[test]
fn rect_area_matches_supersampled_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = random_pose(&mut rng, 0.0, 50.0, 4.0, 30.0);
        let r = pose_to_rect(&p, JAW).unwrap();
        let oracle = mask_area(&oracle_box(&p), 10);
        assert!((r.area() - oracle).abs() / oracle < 0.02, "{} vs {oracle}", r.area());
        assert!((r.area() - p.width() * p.width() * JAW).abs() < 1e-9);
    }
}

#[test]
fn iou_matches_supersampled_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = random_pose(&mut rng, 10.0, 20.0, 6.0, 20.0);
        let b = random_pose(&mut rng, 10.0, 20.0, 6.0, 20.0);
        let (ra, rb) = (pose_to_rect(&a, JAW).unwrap(), pose_to_rect(&b, JAW).unwrap());
        let exact = rect_iou(&ra, &rb);
        let oracle = mask_iou(&oracle_box(&a), &oracle_box(&b), 10);
        assert!((exact - oracle).abs() <= 0.02, "{exact} vs {oracle}");
        assert_eq!(exact, rect_iou(&rb, &ra));
        overlapping += (exact > 0.0) as usize;
    }
    assert!(overlapping > 300);
}

#[test]
fn roundtrip_rasterize_decode() {
    let size = 96;
    let wmax = default_width_max(size) * 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let w = rng.random_range(8.0..wmax);
        let margin = w * 0.6 + 1.0;
        let p = GraspPose::new(
            rng.random_range(margin..size as f64 - 1.0 - margin),
            rng.random_range(margin..size as f64 - 1.0 - margin),
            rng.random_range(-PI..PI),
            w,
            1.0,
        )
        .unwrap();
        let rect = pose_to_rect(&p, JAW).unwrap();
        let maps = rasterize_gt_maps(&[rect], (size, size), wmax, 1.0 / 3.0)
            .unwrap()
            .cast::<f32>();
        let got = decode_grasps(&maps, wmax, 1, 4.0).unwrap();
        assert_eq!(got.len(), 1);
        let g = got[0];
        assert!((g.x() as f64 - p.x()).abs() <= 1.0, "{g:?} vs {p:?}");
        assert!((g.y() as f64 - p.y()).abs() <= 1.0, "{g:?} vs {p:?}");
        assert!(angle_delta(g.theta() as f64, p.theta()) <= 2f64.to_radians());
        assert!((g.width() as f64 - w).abs() / w <= 0.05);
    }
}

#[test]
fn half_turn_maps_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let p = random_pose(&mut rng, 20.0, 44.0, 6.0, 20.0);
        let q = GraspPose::new(p.x(), p.y(), p.theta() + PI, p.width(), 1.0).unwrap();
        let a = rasterize_gt_maps(&[pose_to_rect(&p, JAW).unwrap()], (64, 64), 20.0, 1.0 / 3.0)
            .unwrap()
            .cast::<f32>();
        let b = rasterize_gt_maps(&[pose_to_rect(&q, JAW).unwrap()], (64, 64), 20.0, 1.0 / 3.0)
            .unwrap()
            .cast::<f32>();
        assert_eq!(a, b);
        // the same rectangle listed from the opposite corner is structurally equal
        let r = pose_to_rect(&p, JAW).unwrap();
        let c = r.corners();
        let flipped = GraspRect::from_corners([c[2], c[3], c[0], c[1]]).unwrap();
        let ma = rasterize_gt_maps(&[r], (64, 64), 20.0, 1.0 / 3.0).unwrap();
        let mb = rasterize_gt_maps(&[flipped], (64, 64), 20.0, 1.0 / 3.0).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(angle_delta(p.theta(), q.theta() + PI), angle_delta(p.theta(), q.theta()));
    }
}

/// Shift along the closing axis at which the oracle IoU crosses `target`.
fn shift_for_iou(gt: &GraspPose<f64>, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, gt.width());
    let ob = oracle_box(gt);
    let (s, c) = gt.theta().sin_cos();
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let moved = OracleBox { cx: ob.cx + mid * c, cy: ob.cy + mid * s, ..ob };
        if mask_iou(&ob, &moved, 10) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn metric_boundaries() {
    let gt_pose = GraspPose::new(40.0, 40.0, 0.35, 16.0, 1.0).unwrap();
    let gt = pose_to_rect(&gt_pose, JAW).unwrap();
    let (s, c) = gt_pose.theta().sin_cos();
    let thr = 30f64.to_radians();

    let exact = GraspPose::new(40.0, 40.0, 0.35, 16.0, 0.9).unwrap();
    assert!(is_valid_grasp(&exact, &[gt], 0.25, thr).unwrap());

    for (target, expect) in [(0.24, false), (0.26, true)] {
        let d = shift_for_iou(&gt_pose, target);
        let pred = GraspPose::new(40.0 + d * c, 40.0 + d * s, 0.35, 16.0, 0.9).unwrap();
        let iou = rect_iou(&pose_to_rect(&pred, JAW).unwrap(), &gt);
        assert!((iou - target).abs() < 0.01, "{iou}");
        assert_eq!(is_valid_grasp(&pred, &[gt], 0.25, thr).unwrap(), expect, "iou {iou}");
    }

    for (deg, expect) in [(31.0, false), (29.0, true), (-31.0, false), (-29.0, true)] {
        let pred = GraspPose::new(40.0, 40.0, 0.35 + f64::to_radians(deg), 16.0, 0.9).unwrap();
        assert_eq!(is_valid_grasp(&pred, &[gt], 0.25, thr).unwrap(), expect, "{deg}");
    }
}

#[test]
fn default_width_max_scales() {
    assert_eq!(default_width_max(480), 150.0);
    assert_eq!(default_width_max(224), 70.0);
    assert_eq!(geometry::DEFAULT_JAW_RATIO, 0.5);
}

fn pose_strategy() -> impl Strategy<Value = GraspPose<f64>> {
    (0.0..60.0f64, 0.0..60.0f64, -10.0..10.0f64, 1.0..30.0f64)
        .prop_map(|(x, y, t, w)| GraspPose::new(x, y, t, w, 1.0).unwrap())
}

proptest! {
    #[test]
    fn angle_delta_matches_enumeration(a in -20.0..20.0f64, b in -20.0..20.0f64) {
        let d = angle_delta(a, b);
        prop_assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&d));
        prop_assert!((d - angle_delta_ref(a, b)).abs() < 1e-9);
    }

    #[test]
    fn iou_bounded_symmetric_reflexive(a in pose_strategy(), b in pose_strategy()) {
        let (ra, rb) = (pose_to_rect(&a, JAW).unwrap(), pose_to_rect(&b, JAW).unwrap());
        let v = rect_iou(&ra, &rb);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, rect_iou(&rb, &ra));
        prop_assert_eq!(rect_iou(&ra, &ra), 1.0);
    }

    #[test]
    fn metric_monotone_in_thresholds(
        p in pose_strategy(),
        g in pose_strategy(),
        iou_t in 0.0..1.0f64,
        ang_t in 0.0..1.6f64,
        shrink in 0.0..1.0f64,
        grow in 0.0..1.0f64,
    ) {
        let gts = [pose_to_rect(&g, JAW).unwrap()];
        if is_valid_grasp(&p, &gts, iou_t, ang_t).unwrap() {
            prop_assert!(is_valid_grasp(&p, &gts, iou_t * shrink, ang_t + grow).unwrap());
        }
    }
}
