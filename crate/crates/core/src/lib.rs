//! Grasp geometry kernel and dataset pipeline for reasoning-driven grasp detection.
//!
//! The geometry types are generic over the float type ([`Scalar`]); the
//! aliases below pin the two instantiations the rest of the workspace uses.

pub mod dataset;
pub mod geometry;
pub mod scalar;

pub use scalar::Scalar;

pub use geometry::{
    angle_delta, canonical_angle, decode_grasps, decode_grasps_with, is_valid_grasp, pose_to_rect,
    rasterize_gt_maps, rect_iou, DecodeParams, GeometryError, Point2, RectMetric,
};

/// Planar grasp in `f64`, the precision used by datasets and evaluation.
pub type GraspPose2D = geometry::GraspPose<f64>;
/// Oriented grasp rectangle in `f64`.
pub type GraspRect = geometry::GraspRect<f64>;
/// Grasp maps in `f32`, the precision networks train against.
pub type GraspMaps = geometry::GraspMaps<f32>;

pub type GraspPose2DF32 = geometry::GraspPose<f32>;
pub type GraspRectF32 = geometry::GraspRect<f32>;
pub type GraspMapsF64 = geometry::GraspMaps<f64>;
