use ndarray::Array2;

use super::{GeometryError, GraspRect, Point2};
use crate::Scalar;

/// Per-pixel grasp maps: quality, `cos 2θ`, `sin 2θ` and normalised width.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspMaps<T> {
    pub quality: Array2<T>,
    pub cos: Array2<T>,
    pub sin: Array2<T>,
    pub width: Array2<T>,
}

impl<T: Scalar> GraspMaps<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        let z = Array2::zeros((height, width));
        Self {
            quality: z.clone(),
            cos: z.clone(),
            sin: z.clone(),
            width: z,
        }
    }

    pub fn from_parts(
        quality: Array2<T>,
        cos: Array2<T>,
        sin: Array2<T>,
        width: Array2<T>,
    ) -> Result<Self, GeometryError> {
        let dim = quality.dim();
        for (name, m) in [("cos", &cos), ("sin", &sin), ("width", &width)] {
            if m.dim() != dim {
                return Err(GeometryError::ShapeMismatch(format!(
                    "quality is {dim:?} but {name} is {:?}",
                    m.dim()
                )));
            }
        }
        Ok(Self {
            quality,
            cos,
            sin,
            width,
        })
    }

    /// `(height, width)` of every map.
    pub fn dim(&self) -> (usize, usize) {
        self.quality.dim()
    }

    pub fn maps(&self) -> [&Array2<T>; 4] {
        [&self.quality, &self.cos, &self.sin, &self.width]
    }

    pub fn cast<U: Scalar>(&self) -> GraspMaps<U> {
        let c = |m: &Array2<T>| m.mapv(|v| U::from(v).expect("float cast"));
        GraspMaps {
            quality: c(&self.quality),
            cos: c(&self.cos),
            sin: c(&self.sin),
            width: c(&self.width),
        }
    }
}

/// Renders ground-truth rectangles into training maps.
///
/// For each rectangle the pixels whose centres fall inside its central region
/// (the middle `center_fraction` of the closing axis, full jaw length) get
/// `Q = 1`, `C = cos 2θ`, `S = sin 2θ`, `W = min(w, width_max) / width_max`.
/// The pixel nearest the rectangle centre is always included so very small
/// grasps still leave a mark. Later rectangles overwrite earlier ones.
pub fn rasterize_gt_maps<T: Scalar>(
    gts: &[GraspRect<T>],
    image_size: (usize, usize),
    width_max: T,
    center_fraction: T,
) -> Result<GraspMaps<T>, GeometryError> {
    let (h, w) = image_size;
    if !(width_max > T::zero()) {
        return Err(GeometryError::NonPositiveWidthMax(width_max.to_f64_lossy()));
    }
    let half = T::lit(0.5);
    let lo = -half;
    let (hi_x, hi_y) = (T::from(w).unwrap() - half, T::from(h).unwrap() - half);
    for (index, r) in gts.iter().enumerate() {
        let (x0, y0, x1, y1) = r.bounds();
        let slack = T::lit(1e-9);
        if x0 < lo - slack || y0 < lo - slack || x1 > hi_x + slack || y1 > hi_y + slack {
            return Err(GeometryError::RectOutOfBounds {
                index,
                height: h,
                width: w,
            });
        }
    }

    let mut maps = GraspMaps::zeros(h, w);
    for r in gts {
        let u = r.axis();
        let c2 = u.x * u.x - u.y * u.y;
        let s2 = T::lit(2.0) * u.x * u.y;
        let wv = r.width().min(width_max) / width_max;
        let ctr = r.center();
        let half_open = r.width() * center_fraction * half;
        let half_jaw = r.height() * half;

        let mut paint = |row: usize, col: usize| {
            maps.quality[(row, col)] = T::one();
            maps.cos[(row, col)] = c2;
            maps.sin[(row, col)] = s2;
            maps.width[(row, col)] = wv;
        };

        let (x0, y0, x1, y1) = r.bounds();
        let clamp = |v: T, n: usize| -> usize {
            let v = v.max(T::zero()).min(T::from(n - 1).unwrap());
            v.to_usize().unwrap_or(0)
        };
        for row in clamp(y0.floor(), h)..=clamp(y1.ceil(), h) {
            for col in clamp(x0.floor(), w)..=clamp(x1.ceil(), w) {
                let d = Point2::new(T::from(col).unwrap(), T::from(row).unwrap()).sub(ctr);
                let along = d.x * u.x + d.y * u.y;
                let across = d.y * u.x - d.x * u.y;
                if along.abs() <= half_open && across.abs() <= half_jaw {
                    paint(row, col);
                }
            }
        }
        paint(clamp(ctr.y.round(), h), clamp(ctr.x.round(), w));
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_to_rect, GraspPose};

    fn rect(x: f64, y: f64, t: f64, w: f64) -> GraspRect<f64> {
        pose_to_rect(&GraspPose::new(x, y, t, w, 1.0).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn empty_is_zero() {
        let m = rasterize_gt_maps::<f64>(&[], (16, 20), 10.0, 1.0 / 3.0).unwrap();
        assert_eq!(m.dim(), (16, 20));
        assert!(m.maps().iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn axis_aligned_values() {
        let m = rasterize_gt_maps(&[rect(10.0, 8.0, 0.0, 12.0)], (16, 20), 20.0, 1.0 / 3.0).unwrap();
        assert_eq!(m.quality[(8, 10)], 1.0);
        assert_eq!(m.cos[(8, 10)], 1.0);
        assert_eq!(m.sin[(8, 10)], 0.0);
        assert!((m.width[(8, 10)] - 0.6).abs() < 1e-12);
        // middle third along x: |dx| <= 2, full jaw: |dy| <= 3
        assert_eq!(m.quality[(8, 11)], 1.0);
        assert_eq!(m.quality[(8, 13)], 0.0);
        assert_eq!(m.quality[(11, 10)], 1.0);
        assert_eq!(m.quality[(12, 10)], 0.0);
    }

    #[test]
    fn unit_circle_where_marked() {
        let rs = [rect(10.0, 10.0, 0.37, 9.0), rect(20.0, 14.0, -1.2, 14.0)];
        let m = rasterize_gt_maps(&rs, (32, 32), 20.0, 1.0 / 3.0).unwrap();
        for ((q, c), s) in m.quality.iter().zip(&m.cos).zip(&m.sin) {
            if *q > 0.0 {
                assert!((c * c + s * s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_of_bounds_reports_index() {
        let rs = [rect(10.0, 10.0, 0.0, 6.0), rect(1.0, 10.0, 0.0, 6.0)];
        let err = rasterize_gt_maps(&rs, (32, 32), 20.0, 1.0 / 3.0).unwrap_err();
        assert_eq!(
            err,
            GeometryError::RectOutOfBounds {
                index: 1,
                height: 32,
                width: 32
            }
        );
    }

    #[test]
    fn last_writer_wins() {
        let a = rect(10.0, 10.0, 0.0, 9.0);
        let b = rect(10.0, 10.0, 0.6, 12.0);
        let m = rasterize_gt_maps(&[a, b], (24, 24), 20.0, 1.0 / 3.0).unwrap();
        assert!((m.width[(10, 10)] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn width_clipped_to_max() {
        let m = rasterize_gt_maps(&[rect(12.0, 12.0, 0.0, 16.0)], (24, 24), 10.0, 1.0 / 3.0).unwrap();
        assert_eq!(m.width[(12, 12)], 1.0);
    }
}
