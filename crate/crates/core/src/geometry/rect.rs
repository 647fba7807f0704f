use serde::{Deserialize, Serialize};

use super::{canonical_angle, GeometryError, GraspPose};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    fn lex_lt(self, o: Self) -> bool {
        self.x < o.x || (self.x == o.x && self.y < o.y)
    }
}

/// Oriented grasp rectangle.
///
/// Corners run counterclockwise (positive shoelace area in `x, y`). The edge
/// `corners[0] -> corners[1]` lies along the closing axis and has the opening
/// width as its length; `corners[1] -> corners[2]` spans the jaw. Among the
/// two orderings satisfying this (one per direction of the closing axis) the
/// one starting at the lexicographically smaller corner is kept, so a
/// rectangle built from `θ` and from `θ + π` is structurally identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect<T> {
    corners: [Point2<T>; 4],
}

fn rel_tol<T: Scalar>() -> T {
    T::lit(1e-6).max(T::epsilon() * T::lit(64.0))
}

impl<T: Scalar> GraspRect<T> {
    /// Builds a rectangle from four corners in either winding, first edge along the closing axis.
    pub fn from_corners(corners: [Point2<T>; 4]) -> Result<Self, GeometryError> {
        Self::from_corners_with_tolerance(corners, rel_tol())
    }

    /// As [`GraspRect::from_corners`] with an explicit relative side tolerance,
    /// for foreign files that store rounded coordinates.
    pub fn from_corners_with_tolerance(
        corners: [Point2<T>; 4],
        tol: T,
    ) -> Result<Self, GeometryError> {
        if corners.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(GeometryError::DegenerateRect("non-finite corner".into()));
        }
        let [p0, p1, p2, p3] = corners;
        let s01 = p1.sub(p0).norm();
        let s12 = p2.sub(p1).norm();
        let s23 = p3.sub(p2).norm();
        let s30 = p0.sub(p3).norm();
        let d02 = p2.sub(p0).norm();
        let d13 = p3.sub(p1).norm();
        let scale = s01.max(s12).max(T::min_positive_value());
        if s01 <= scale * tol || s12 <= scale * tol {
            return Err(GeometryError::DegenerateRect("zero-length side".into()));
        }
        let close = |a: T, b: T| (a - b).abs() <= tol * a.max(b);
        if !close(s01, s23) || !close(s12, s30) {
            return Err(GeometryError::DegenerateRect(
                "opposite sides differ in length".into(),
            ));
        }
        if !close(d02, d13) {
            return Err(GeometryError::DegenerateRect("corners are not a rectangle".into()));
        }
        let mut c = corners;
        if signed_area(&c) < T::zero() {
            // reverse the winding but keep the closing-axis edge first
            c = [p1, p0, p3, p2];
        }
        if c[2].lex_lt(c[0]) {
            c = [c[2], c[3], c[0], c[1]];
        }
        Ok(Self { corners: c })
    }

    pub fn corners(&self) -> &[Point2<T>; 4] {
        &self.corners
    }

    pub fn center(&self) -> Point2<T> {
        self.corners[0].add(self.corners[2]).scale(T::lit(0.5))
    }

    /// Unit vector along the closing axis.
    pub fn axis(&self) -> Point2<T> {
        let e = self.corners[1].sub(self.corners[0]);
        e.scale(T::one() / e.norm())
    }

    /// Closing-axis orientation in `[-π/2, π/2)`.
    pub fn angle(&self) -> T {
        let e = self.corners[1].sub(self.corners[0]);
        canonical_angle(e.y.atan2(e.x))
    }

    /// Opening width (length along the closing axis).
    pub fn width(&self) -> T {
        self.corners[1].sub(self.corners[0]).norm()
    }

    /// Jaw length (extent perpendicular to the closing axis).
    pub fn height(&self) -> T {
        self.corners[2].sub(self.corners[1]).norm()
    }

    pub fn area(&self) -> T {
        signed_area(&self.corners)
    }

    pub fn to_pose(&self, quality: T) -> Result<GraspPose<T>, GeometryError> {
        let c = self.center();
        GraspPose::new(c.x, c.y, self.angle(), self.width(), quality)
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (T, T, T, T) {
        let mut b = (T::infinity(), T::infinity(), T::neg_infinity(), T::neg_infinity());
        for p in &self.corners {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }

    /// Whether `p` lies inside (or on) the rectangle.
    pub fn contains(&self, p: Point2<T>) -> bool {
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            b.sub(a).cross(p.sub(a)) >= T::zero()
        })
    }

    pub fn cast<U: Scalar>(&self) -> Result<GraspRect<U>, GeometryError> {
        let c = |p: Point2<T>| Point2::new(U::from(p.x).unwrap(), U::from(p.y).unwrap());
        GraspRect::from_corners(self.corners.map(c))
    }
}

pub(crate) fn signed_area<T: Scalar>(poly: &[Point2<T>]) -> T {
    let n = poly.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc = acc + poly[i].cross(poly[(i + 1) % n]);
    }
    acc * T::lit(0.5)
}

/// Rectangle centred on the pose: opening `w` along `θ`, jaw `jaw_ratio * w` across it.
pub fn pose_to_rect<T: Scalar>(
    pose: &GraspPose<T>,
    jaw_ratio: T,
) -> Result<GraspRect<T>, GeometryError> {
    if !(pose.width() > T::zero()) {
        return Err(GeometryError::NonPositiveWidth(pose.width().to_f64_lossy()));
    }
    if !(jaw_ratio > T::zero()) {
        return Err(GeometryError::NonPositiveJawRatio(jaw_ratio.to_f64_lossy()));
    }
    let half_w = pose.width() * T::lit(0.5);
    let half_h = pose.width() * jaw_ratio * T::lit(0.5);
    let (s, c) = pose.theta().sin_cos();
    let u = Point2::new(c * half_w, s * half_w);
    let v = Point2::new(-s * half_h, c * half_h);
    let ctr = Point2::new(pose.x(), pose.y());
    let p0 = ctr.sub(u).sub(v);
    let p1 = ctr.add(u).sub(v);
    let p2 = ctr.add(u).add(v);
    let p3 = ctr.sub(u).add(v);
    GraspRect::from_corners([p0, p1, p2, p3])
}
