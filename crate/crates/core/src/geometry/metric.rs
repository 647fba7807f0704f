use super::{angle_delta, pose_to_rect, rect_iou, GeometryError, GraspPose, GraspRect};
use crate::Scalar;

/// Rectangle metric: a prediction is valid when some ground truth overlaps it
/// with IoU strictly above `iou_threshold` and differs in orientation by
/// strictly less than `angle_threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectMetric {
    pub iou_threshold: f64,
    /// Radians.
    pub angle_threshold: f64,
    /// Jaw length / width used to turn predicted poses into rectangles.
    pub jaw_ratio: f64,
}

impl Default for RectMetric {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            angle_threshold: 30f64.to_radians(),
            jaw_ratio: super::DEFAULT_JAW_RATIO,
        }
    }
}

impl RectMetric {
    pub fn is_valid<T: Scalar>(
        &self,
        pred: &GraspPose<T>,
        gts: &[GraspRect<T>],
    ) -> Result<bool, GeometryError> {
        if gts.is_empty() {
            return Err(GeometryError::EmptyGroundTruth);
        }
        if !(pred.width() > T::zero()) {
            // a zero-width prediction has no rectangle and cannot overlap anything
            return Ok(false);
        }
        let rect = pose_to_rect(pred, T::lit(self.jaw_ratio))?;
        let iou_t = T::lit(self.iou_threshold);
        let ang_t = T::lit(self.angle_threshold);
        Ok(gts.iter().any(|gt| {
            angle_delta(pred.theta(), gt.angle()) < ang_t && rect_iou(&rect, gt) > iou_t
        }))
    }

    /// Whether any of the first `k` predictions is valid.
    pub fn any_valid_in_top_k<T: Scalar>(
        &self,
        preds: &[GraspPose<T>],
        gts: &[GraspRect<T>],
        k: usize,
    ) -> Result<bool, GeometryError> {
        for p in preds.iter().take(k) {
            if self.is_valid(p, gts)? {
                return Ok(true);
            }
        }
        if gts.is_empty() {
            return Err(GeometryError::EmptyGroundTruth);
        }
        Ok(false)
    }
}

/// [`RectMetric::is_valid`] with explicit thresholds and the default jaw ratio.
pub fn is_valid_grasp<T: Scalar>(
    pred: &GraspPose<T>,
    gts: &[GraspRect<T>],
    iou_thresh: f64,
    angle_thresh: f64,
) -> Result<bool, GeometryError> {
    RectMetric {
        iou_threshold: iou_thresh,
        angle_threshold: angle_thresh,
        ..RectMetric::default()
    }
    .is_valid(pred, gts)
}
