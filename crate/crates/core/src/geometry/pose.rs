use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::Scalar;

/// Maps any angle onto `[-π/2, π/2)`.
pub fn canonical_angle<T: Scalar>(theta: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut t = theta - pi * ((theta + half) / pi).floor();
    // floor() can land one period off when theta + π/2 rounds onto a multiple of π
    if t >= half {
        t = t - pi;
    }
    if t < -half {
        t = t + pi;
    }
    t
}

/// Smallest absolute orientation difference modulo π, in `[0, π/2]`.
pub fn angle_delta<T: Scalar>(theta_a: T, theta_b: T) -> T {
    let d = (canonical_angle(theta_a) - canonical_angle(theta_b)).abs();
    let alt = T::PI() - d;
    if alt < d {
        alt
    } else {
        d
    }
}

/// A planar grasp `(x, y, θ, w, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose<T> {
    x: T,
    y: T,
    theta: T,
    width: T,
    quality: T,
}

impl<T: Scalar> GraspPose<T> {
    pub fn new(x: T, y: T, theta: T, width: T, quality: T) -> Result<Self, GeometryError> {
        if !(width >= T::zero()) {
            return Err(GeometryError::NegativeWidth(width.to_f64_lossy()));
        }
        if !(quality >= T::zero() && quality <= T::one()) {
            return Err(GeometryError::QualityOutOfRange(quality.to_f64_lossy()));
        }
        Ok(Self {
            x,
            y,
            theta: canonical_angle(theta),
            width,
            quality,
        })
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    /// Closing-axis orientation, always in `[-π/2, π/2)`.
    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn quality(&self) -> T {
        self.quality
    }

    pub fn with_quality(mut self, quality: T) -> Result<Self, GeometryError> {
        if !(quality >= T::zero() && quality <= T::one()) {
            return Err(GeometryError::QualityOutOfRange(quality.to_f64_lossy()));
        }
        self.quality = quality;
        Ok(self)
    }

    /// Translates and scales the pose: `p' = offset + scale * p`, width scaled too.
    pub fn affine(&self, scale_x: T, scale_y: T, offset_x: T, offset_y: T) -> Self {
        let (s, c) = self.theta.sin_cos();
        let theta = (s * scale_y).atan2(c * scale_x);
        let width = self.width * ((c * scale_x).powi(2) + (s * scale_y).powi(2)).sqrt();
        Self {
            x: offset_x + scale_x * self.x,
            y: offset_y + scale_y * self.y,
            theta: canonical_angle(theta),
            width,
            quality: self.quality,
        }
    }

    pub fn cast<U: Scalar>(&self) -> GraspPose<U> {
        let c = |v: T| U::from(v).expect("float cast");
        GraspPose {
            x: c(self.x),
            y: c(self.y),
            theta: canonical_angle(c(self.theta)),
            width: c(self.width),
            quality: c(self.quality),
        }
    }
}
