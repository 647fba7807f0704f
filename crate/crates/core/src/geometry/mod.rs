//! Planar grasp representations and the rectangle metric.
//!
//! Image coordinates: `x` is the column, `y` the row, pixel centers sit on
//! integer coordinates. An angle `θ` is the direction `(cos θ, sin θ)` of the
//! gripper-closing axis in those coordinates, stored canonically in
//! `[-π/2, π/2)` because a parallel-jaw grasp is symmetric under `θ + π`.

mod decode;
mod iou;
pub mod io;
mod maps;
mod metric;
mod pose;
mod rect;

use thiserror::Error;

pub use decode::{decode_grasps, decode_grasps_with, gaussian_blur, DecodeParams};
pub use iou::{convex_clip, polygon_area, rect_iou};
pub use maps::{rasterize_gt_maps, GraspMaps};
pub use metric::{is_valid_grasp, RectMetric};
pub use pose::{angle_delta, canonical_angle, GraspPose};
pub use rect::{pose_to_rect, GraspRect, Point2};

/// Default jaw length as a fraction of the opening width.
pub const DEFAULT_JAW_RATIO: f64 = 0.5;
/// Default fraction of the opening axis marked as the quality peak region.
pub const DEFAULT_CENTER_FRACTION: f64 = 1.0 / 3.0;
/// Default width normaliser at a 480 px input.
pub const DEFAULT_WIDTH_MAX_480: f64 = 150.0;

/// `width_max` scaled proportionally for an input of `size` pixels.
pub fn default_width_max(size: usize) -> f64 {
    DEFAULT_WIDTH_MAX_480 * size as f64 / 480.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("grasp width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("grasp width must be non-negative, got {0}")]
    NegativeWidth(f64),
    #[error("grasp quality must lie in [0, 1], got {0}")]
    QualityOutOfRange(f64),
    #[error("jaw ratio must be positive, got {0}")]
    NonPositiveJawRatio(f64),
    #[error("degenerate rectangle: {0}")]
    DegenerateRect(String),
    #[error("rectangle {index} lies outside the {height}x{width} image")]
    RectOutOfBounds {
        index: usize,
        height: usize,
        width: usize,
    },
    #[error("ground-truth rectangle list is empty")]
    EmptyGroundTruth,
    #[error("width_max must be positive, got {0}")]
    NonPositiveWidthMax(f64),
    #[error("map shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeometryError {
    fn from(e: std::io::Error) -> Self {
        GeometryError::Io(e.to_string())
    }
}
