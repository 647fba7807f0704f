use super::rect::signed_area;
use super::{GraspRect, Point2};
use crate::Scalar;

/// Sutherland–Hodgman clip of `subject` against the convex counterclockwise `clip`.
pub fn convex_clip<T: Scalar>(subject: &[Point2<T>], clip: &[Point2<T>]) -> Vec<Point2<T>> {
    let mut output = subject.to_vec();
    let n = clip.len();
    let mut input = Vec::with_capacity(subject.len() + n);
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let a = clip[i];
        let edge = clip[(i + 1) % n].sub(a);
        let side = |p: Point2<T>| edge.cross(p.sub(a));
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= T::zero() {
                if sp < T::zero() {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= T::zero() {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect<T: Scalar>(p: Point2<T>, q: Point2<T>, sp: T, sq: T) -> Point2<T> {
    let t = sp / (sp - sq);
    p.add(q.sub(p).scale(t))
}

/// Absolute area of a simple polygon.
pub fn polygon_area<T: Scalar>(poly: &[Point2<T>]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    signed_area(poly).abs()
}

/// Exact intersection-over-union of two oriented rectangles.
///
/// The pair is ordered canonically before clipping so the result is bitwise
/// symmetric in its arguments.
pub fn rect_iou<T: Scalar>(a: &GraspRect<T>, b: &GraspRect<T>) -> T {
    let key = |r: &GraspRect<T>| r.corners().map(|p| (p.x, p.y));
    let (a, b) = match key(a).partial_cmp(&key(b)) {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    };
    let inter = polygon_area(&convex_clip(a.corners(), b.corners()));
    let union = a.area() + b.area() - inter;
    if !(union > T::zero()) {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_to_rect, GraspPose};

    fn rect(x: f64, y: f64, t: f64, w: f64) -> GraspRect<f64> {
        pose_to_rect(&GraspPose::new(x, y, t, w, 1.0).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let r = rect(10.0, 10.0, 0.3, 12.0);
        assert_eq!(rect_iou(&r, &r), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(rect_iou(&rect(0.0, 0.0, 0.0, 4.0), &rect(50.0, 0.0, 0.2, 4.0)), 0.0);
    }

    #[test]
    fn half_overlap_axis_aligned() {
        // 10x5 rects shifted by 5 along x: inter 25, union 75
        let a = rect(0.0, 0.0, 0.0, 10.0);
        let b = rect(5.0, 0.0, 0.0, 10.0);
        assert!((rect_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn contained_rect() {
        let a = rect(0.0, 0.0, 0.0, 10.0);
        let b = rect(0.0, 0.0, 0.0, 5.0);
        assert!((rect_iou(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn symmetric_exactly() {
        let a = rect(1.0, 2.0, 0.4, 9.0);
        let b = rect(3.0, 1.0, -0.7, 11.0);
        assert_eq!(rect_iou(&a, &b), rect_iou(&b, &a));
    }

    #[test]
    fn f32_instantiation() {
        let a = pose_to_rect(&GraspPose::new(0.0f32, 0.0, 0.0, 10.0, 1.0).unwrap(), 0.5).unwrap();
        let b = pose_to_rect(&GraspPose::new(5.0f32, 0.0, 0.0, 10.0, 1.0).unwrap(), 0.5).unwrap();
        assert!((rect_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    }
}
