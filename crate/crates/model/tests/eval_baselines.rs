//! Evaluation, rendering and the modular baseline's grounding path.

mod common;

use std::collections::HashMap;

use candle_core::DType;
use common::*;
use graspreason_core::geometry::{GraspPose, GraspRect, RectMetric, DEFAULT_JAW_RATIO};
use graspreason_core::dataset::InstructionSample;
use graspreason_model::baselines::*;
use graspreason_model::data::SceneInput;
use graspreason_model::eval::{evaluate_model, render_annotated, EvalReport, GT_COLOR, PRED_COLOR};
use graspreason_model::model::{GraspPredictor, Prediction};
use graspreason_model::Result;
use image::{Rgb, RgbImage};

/// Returns the decoded ground truth of whichever sample carries the instruction.
struct GtPredictor {
    by_instruction: HashMap<String, Vec<GraspRect<f64>>>,
}

impl GraspPredictor for GtPredictor {
    fn name(&self) -> &str {
        "gt"
    }

    fn predict(&self, scene: &SceneInput, instruction: &str, _hint: Option<[f64; 4]>, k: usize) -> Result<Prediction> {
        let (_, h, w) = scene.rgb.dims3()?;
        let det = GtMapDetector::for_window(&self.by_instruction[instruction], (0, 0, w as u32), 20.0, 2.0)?;
        Ok(Prediction {
            poses: det
                .detect(&RgbImage::new(w as u32, h as u32), k)?
                .into_iter()
                .map(|p| graspreason_model::model::unscale_pose(p, scene.scale))
                .collect(),
            ..Prediction::default()
        })
    }
}

fn stored_image(ds: &Tiny, s: &InstructionSample) -> RgbImage {
    image::open(ds.root().join(&s.image_path)).unwrap().to_rgb8()
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let ds = tiny_dataset(4, 41);
    let m = tiny_model(&ds, DType::F32);
    let cache = ds.cache(&m.cfg, DType::F32);
    let mut samples = ds.test.clone();
    samples.extend(ds.train.iter().take(6).cloned());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    evaluate_model(&m, &samples, &cache, &[1, 3], &RectMetric::default()).unwrap().write(a.path()).unwrap();
    samples.reverse();
    evaluate_model(&m, &samples, &cache, &[1, 3], &RectMetric::default()).unwrap().write(b.path()).unwrap();
    for f in [graspreason_model::eval::REPORT_FILE, graspreason_model::eval::TABLE_FILE, graspreason_model::eval::FAILURES_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let cells = EvalReport::read_cells(a.path()).unwrap();
    assert!(cells.iter().all(|c| c.r_at_k[&1] <= c.r_at_k[&3]));
    assert_eq!(cells.iter().map(|c| c.count).sum::<usize>(), samples.len());
}

#[test]
fn ground_truth_predictor_scores_full_marks() {
    let ds = tiny_dataset(4, 42);
    let cfg = tiny_config();
    let cache = ds.cache(&cfg, DType::F32);
    // scene images are 64 px; the cache resizes to 32, so rectangles are
    // rasterised at 32 and the poses mapped back
    let by_instruction = ds
        .test
        .iter()
        .map(|s| {
            let scale = cache.for_sample(s).unwrap().scale;
            (s.instruction.clone(), graspreason_model::data::scale_rects(&s.gt_rects, scale).unwrap())
        })
        .collect();
    let unique: Vec<_> = {
        let mut seen = std::collections::HashSet::new();
        ds.test.iter().filter(|s| seen.insert(s.instruction.clone())).cloned().collect()
    };
    let rep = evaluate_model(&GtPredictor { by_instruction }, &unique, &cache, &[1, 3], &RectMetric::default()).unwrap();
    for c in &rep.cells {
        assert_eq!(c.hits[&1], c.count, "{:?}/{:?}", c.kind, c.level);
        assert!(c.token_accuracy.is_none());
    }
}

#[test]
fn render_marks_pose_corners() {
    let img = RgbImage::from_pixel(40, 40, Rgb([0, 0, 0]));
    let pose = GraspPose::new(20.0, 16.0, 0.0, 10.0, 0.87).unwrap();
    let gt = graspreason_core::geometry::pose_to_rect(&GraspPose::new(10.0, 30.0, std::f64::consts::FRAC_PI_2, 8.0, 1.0).unwrap(), 0.5).unwrap();
    let (out, corners) = render_annotated(&img, &[pose], Some(&[gt]), 0.5, 2).unwrap();
    assert_eq!(out.dimensions(), (80, 80));
    // width 10 along x, jaw length 5 along y, doubled
    let mut want = vec![(30, 27), (50, 27), (50, 37), (30, 37)];
    let mut got = corners[0].to_vec();
    want.sort();
    got.sort();
    assert_eq!(got, want);
    for (x, y) in want {
        assert_eq!(*out.get_pixel(x as u32, y as u32), PRED_COLOR);
    }
    assert!(out.pixels().any(|p| *p == GT_COLOR));
    // quality label sits above the top edge
    assert!((20..27).any(|y| (30..46).any(|x| *out.get_pixel(x, y) == PRED_COLOR)));
    let (same, none) = render_annotated(&img, &[], None, DEFAULT_JAW_RATIO, 1).unwrap();
    assert_eq!(same, img);
    assert!(none.is_empty());
}

#[test]
fn oracle_grounding_and_gt_detector_grasp_every_reachable_target() {
    let ds = tiny_dataset(5, 43);
    let metric = RectMetric::default();
    let mut checked = 0;
    for s in ds.train.iter().chain(&ds.test) {
        let image = stored_image(&ds, s);
        let bbox = s.target_bbox.unwrap();
        let (w, h) = image.dimensions();
        let window = crop_window(clip_box(bbox, w, h).unwrap(), w, h);
        let inside = s.gt_rects.iter().any(|r| {
            let (a, b, c, d) = r.bounds();
            let (x0, y0, side) = (window.0 as f64, window.1 as f64, window.2 as f64);
            a >= x0 - 0.5 && b >= y0 - 0.5 && c <= x0 + side - 0.5 && d <= y0 + side - 0.5
        });
        if !inside {
            continue;
        }
        let det = GtMapDetector::for_window(&s.gt_rects, window, 30.0, 2.0).unwrap();
        let pipe = ModularPipeline::new(OracleGrounder, det);
        let (poses, reply) = pipe.run(&image, &s.instruction, Some(bbox), 1).unwrap();
        assert!(parse_box(&reply).is_ok());
        assert!(metric.any_valid_in_top_k(&poses, &s.gt_rects, 1).unwrap(), "{}", s.sample_id);
        checked += 1;
    }
    assert!(checked > 10);
}

struct FixedDetector(GraspPose<f64>);

impl Detector for FixedDetector {
    fn detect(&self, _crop: &RgbImage, _k: usize) -> Result<Vec<GraspPose<f64>>> {
        Ok(vec![self.0])
    }
}

#[test]
fn grounding_replies_are_strict_and_retried_once() {
    let img = RgbImage::new(64, 48);
    let det = || FixedDetector(GraspPose::new(4.0, 4.0, 0.3, 6.0, 0.9).unwrap());

    let prose = ModularPipeline::new(StubGrounder::new(["The mug is at the left.", "Somewhere near 10, 10"]), det());
    assert!(matches!(prose.ground(&img, "pick the mug", None), Err(graspreason_model::ModelError::Grounding(_))));
    assert_eq!(prose.grounder.calls(), 2);

    let retry = ModularPipeline::new(StubGrounder::new(["box: 1,2,3,4", " 10, 12.5 ,30,40 "]), det());
    let (b, reply) = retry.ground(&img, "pick the mug", None).unwrap();
    assert_eq!(b, [10.0, 12.5, 30.0, 40.0]);
    assert_eq!(reply.trim(), "10, 12.5 ,30,40");
    assert_eq!(retry.grounder.calls(), 2);

    let first = ModularPipeline::new(StubGrounder::new(["1,2,30,40"]), det());
    first.ground(&img, "x", None).unwrap();
    assert_eq!(first.grounder.calls(), 1);

    assert!(parse_box("5,5,5,9").is_err());
    assert!(parse_box("1,2,3").is_err());
    assert_eq!(clip_box([-4.0, 10.0, 80.0, 20.0], 64, 48).unwrap(), [0.0, 10.0, 64.0, 20.0]);
    assert!(clip_box([70.0, 10.0, 80.0, 20.0], 64, 48).is_err());
    assert!(OracleGrounder.ground(&img, "x", None).is_err());
}

#[test]
fn crop_poses_map_back_to_image_pixels() {
    let img = RgbImage::new(64, 48);
    let b = [20.0, 10.0, 36.0, 30.0];
    let (x0, y0, side) = crop_window(b, 64, 48);
    assert_eq!(side, 20);
    assert!(x0 + side <= 64 && y0 + side <= 48);
    let inside = GraspPose::new(8.0, 9.0, 0.7, 5.0, 0.8).unwrap();
    let pipe = ModularPipeline::new(OracleGrounder, FixedDetector(inside));
    let got = pipe.detect_in_box(&img, b, 1).unwrap();
    assert_eq!(got.len(), 1);
    assert!((got[0].x() - (8.0 + x0 as f64)).abs() < 1e-12 && (got[0].y() - (9.0 + y0 as f64)).abs() < 1e-12);
    assert!((got[0].theta() - 0.7).abs() < 1e-12 && (got[0].width() - 5.0).abs() < 1e-12);
    // a crop pose outside the grounded box is dropped
    let outside = ModularPipeline::new(OracleGrounder, FixedDetector(GraspPose::new(0.0, 0.0, 0.0, 5.0, 0.8).unwrap()));
    assert!(outside.detect_in_box(&img, b, 1).unwrap().is_empty());
    // the window stays inside the image near its border
    assert_eq!(crop_window([55.0, 40.0, 70.0, 60.0], 64, 48).0 + crop_window([55.0, 40.0, 70.0, 60.0], 64, 48).2, 64);
}
