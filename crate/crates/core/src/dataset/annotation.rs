//! Part-level grasp annotation: nearest-part assignment of 6-DoF grasps and
//! pinhole projection of parts and grasps into the image.

use nalgebra::{Matrix3, Point3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{pose_to_rect, GraspPose, GraspRect};

/// Parallel-jaw grasp in an object frame. The rotation's first column is the
/// approach direction and its second the closing direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp6D {
    /// Metres.
    pub position: Point3<f64>,
    pub rotation: Matrix3<f64>,
    /// Opening, metres.
    pub width: f64,
    pub score: f64,
}

impl Grasp6D {
    pub fn closing_axis(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAnnotation {
    pub object_id: String,
    pub part_name: String,
    pub part_points: Vec<Point3<f64>>,
    pub assigned_grasps: Vec<Grasp6D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    /// `(height, width)`.
    image_size: (usize, usize),
}

impl CameraView {
    /// `rotation` and `translation` map object coordinates into the camera frame.
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self, DatasetError> {
        if intrinsics.try_inverse().is_none() {
            return Err(DatasetError::InvalidView("intrinsics are singular".into()));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > 1e-6 || rotation.determinant() < 0.0 {
            return Err(DatasetError::InvalidView(format!(
                "rotation is not orthonormal (error {err:e})"
            )));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(DatasetError::InvalidView("empty image".into()));
        }
        Ok(CameraView {
            intrinsics,
            rotation,
            translation,
            image_size,
        })
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Pixel `(u, v)` of an object-frame point, `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * c.coords;
        Some([h.x / h.z, h.y / h.z])
    }
}

fn nearest_sq(points: &[Point3<f64>], q: &Point3<f64>) -> f64 {
    points
        .iter()
        .map(|p| (p - q).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

/// Gives each grasp to the part holding the point nearest its centre; ties go
/// to the lower part index.
pub fn assign_grasps_to_parts(
    object_id: &str,
    parts: &[(String, Vec<Point3<f64>>)],
    grasps: &[Grasp6D],
) -> Result<Vec<PartAnnotation>, DatasetError> {
    if parts.is_empty() {
        return Err(DatasetError::NoParts);
    }
    if let Some(i) = parts.iter().position(|(_, pts)| pts.is_empty()) {
        return Err(DatasetError::EmptyPart(i));
    }
    let mut out: Vec<PartAnnotation> = parts
        .iter()
        .map(|(name, pts)| PartAnnotation {
            object_id: object_id.to_string(),
            part_name: name.clone(),
            part_points: pts.clone(),
            assigned_grasps: Vec::new(),
        })
        .collect();
    for g in grasps {
        let mut best = (0, f64::INFINITY);
        for (i, (_, pts)) in parts.iter().enumerate() {
            let d = nearest_sq(pts, &g.position);
            if d < best.1 {
                best = (i, d);
            }
        }
        out[best.0].assigned_grasps.push(g.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskProjection {
    pub mask: Array2<bool>,
    /// Every point was behind the camera, so the mask is empty.
    pub all_behind: bool,
}

/// Splats the part's points into the image and closes the result with a 3×3
/// structuring element.
pub fn project_part_to_mask(part: &PartAnnotation, view: &CameraView) -> MaskProjection {
    let (h, w) = view.image_size;
    let mut splat = Array2::from_elem((h, w), false);
    let mut in_front = 0usize;
    for p in &part.part_points {
        if let Some([u, v]) = view.project(p) {
            in_front += 1;
            let (col, row) = (u.round(), v.round());
            if col >= 0.0 && row >= 0.0 && (col as usize) < w && (row as usize) < h {
                splat[(row as usize, col as usize)] = true;
            }
        }
    }
    let all_behind = in_front == 0 && !part.part_points.is_empty();
    if all_behind {
        log::warn!("part '{}' lies entirely behind the camera", part.part_name);
    }
    let dilated = morph(&splat, true);
    MaskProjection {
        mask: morph(&dilated, false),
        all_behind,
    }
}

/// 3×3 dilation (`any`) or erosion (`all`, treating outside as set).
fn morph(m: &Array2<bool>, dilate: bool) -> Array2<bool> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut any = false;
        let mut all = true;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                let v = if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    !dilate
                } else {
                    m[(rr as usize, cc as usize)]
                };
                any |= v;
                all &= v;
            }
        }
        if dilate {
            any
        } else {
            all
        }
    })
}

/// Image-plane rectangle of a grasp: centre from the projected grasp centre,
/// angle and width from the projected finger positions.
pub fn project_grasp_to_rect(
    grasp: &Grasp6D,
    view: &CameraView,
    jaw_ratio: f64,
) -> Result<GraspRect<f64>, DatasetError> {
    let c = view.project(&grasp.position).ok_or(DatasetError::BehindCamera)?;
    let half = grasp.closing_axis() * (grasp.width / 2.0);
    let a = view.project(&(grasp.position - half)).ok_or(DatasetError::BehindCamera)?;
    let b = view.project(&(grasp.position + half)).ok_or(DatasetError::BehindCamera)?;
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let pose = GraspPose::new(c[0], c[1], dy.atan2(dx), dx.hypot(dy), grasp.score.clamp(0.0, 1.0))?;
    Ok(pose_to_rect(&pose, jaw_ratio)?)
}
