use ndarray::Array2;

use super::{GeometryError, GraspMaps, GraspPose};
use crate::Scalar;

/// Peak-extraction settings for [`decode_grasps_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub width_max: f64,
    pub k: usize,
    pub min_peak_dist: f64,
    /// Gaussian smoothing of the quality map before peak search; `0` disables it.
    pub sigma: f64,
    /// Relative tolerance under which neighbouring smoothed values count as one flat top.
    pub plateau_tolerance: f64,
}

impl DecodeParams {
    pub fn new(width_max: f64, k: usize, min_peak_dist: f64) -> Self {
        Self {
            width_max,
            k,
            min_peak_dist,
            sigma: 2.0,
            plateau_tolerance: 5e-3,
        }
    }
}

/// Separable Gaussian blur with edge clamping; the kernel is truncated at 3σ.
pub fn gaussian_blur<T: Scalar>(img: &Array2<T>, sigma: f64) -> Array2<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<T> = (-radius..=radius)
        .map(|i| T::lit((-((i * i) as f64) / (2.0 * sigma * sigma)).exp()))
        .collect();
    let norm = kernel.iter().fold(T::zero(), |a, &b| a + b);
    kernel.iter_mut().for_each(|v| *v = *v / norm);

    let (h, w) = img.dim();
    let pass = |src: &Array2<T>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let mut acc = T::zero();
            for (ki, &kv) in kernel.iter().enumerate() {
                let off = ki as isize - radius;
                let v = if horizontal {
                    src[(r, (c as isize + off).clamp(0, w as isize - 1) as usize)]
                } else {
                    src[((r as isize + off).clamp(0, h as isize - 1) as usize, c)]
                };
                if v != T::zero() {
                    acc = acc + kv * v;
                }
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

fn neighbours(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(|dr| (-1isize..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dr, dc)| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            (rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize).then_some((rr as usize, cc as usize))
        })
}

/// Top-`k` grasps from the maps with the default smoothing (σ = 2 px).
pub fn decode_grasps<T: Scalar>(
    maps: &GraspMaps<T>,
    width_max: f64,
    k: usize,
    min_peak_dist: f64,
) -> Result<Vec<GraspPose<T>>, GeometryError> {
    decode_grasps_with(maps, &DecodeParams::new(width_max, k, min_peak_dist))
}

/// Top-`k` local maxima of the smoothed quality map, at least `min_peak_dist`
/// apart, decoded into poses and sorted by quality (descending).
///
/// An all-zero quality map yields an empty list.
pub fn decode_grasps_with<T: Scalar>(
    maps: &GraspMaps<T>,
    params: &DecodeParams,
) -> Result<Vec<GraspPose<T>>, GeometryError> {
    if params.k == 0 {
        return Err(GeometryError::ZeroK);
    }
    if !(params.width_max > 0.0) {
        return Err(GeometryError::NonPositiveWidthMax(params.width_max));
    }
    let (h, w) = maps.dim();
    for m in [&maps.cos, &maps.sin, &maps.width] {
        if m.dim() != (h, w) {
            return Err(GeometryError::ShapeMismatch(format!(
                "quality is {:?} but another map is {:?}",
                (h, w),
                m.dim()
            )));
        }
    }
    let smooth = gaussian_blur(&maps.quality, params.sigma);

    // Near-ties count as one flat top: a wide rectangle blurs into a ridge
    // whose values differ only by rounding. Each flat top becomes one peak
    // located at its centroid; maps are sampled at the member nearest to it.
    let tol = T::lit(params.plateau_tolerance);
    let mut order: Vec<(T, usize, usize)> = smooth
        .indexed_iter()
        .filter(|(_, &v)| v > T::zero())
        .map(|((r, c), &v)| (v, r, c))
        .collect();
    order.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut seen = Array2::from_elem((h, w), false);
    let mut peaks = Vec::new();
    for &(v, r, c) in &order {
        if seen[(r, c)] {
            continue;
        }
        let upper = v * (T::one() + tol);
        if neighbours(r, c, h, w).any(|(rr, cc)| smooth[(rr, cc)] > upper) {
            continue;
        }
        let floor = v * (T::one() - tol);
        let mut members = vec![(r, c)];
        seen[(r, c)] = true;
        let mut i = 0;
        while i < members.len() {
            let (pr, pc) = members[i];
            for (rr, cc) in neighbours(pr, pc, h, w) {
                if !seen[(rr, cc)] && smooth[(rr, cc)] >= floor {
                    seen[(rr, cc)] = true;
                    members.push((rr, cc));
                }
            }
            i += 1;
        }
        let n = members.len() as f64;
        let mr = members.iter().map(|m| m.0 as f64).sum::<f64>() / n;
        let mc = members.iter().map(|m| m.1 as f64).sum::<f64>() / n;
        let rep = members
            .iter()
            .copied()
            .min_by(|a, b| {
                let da = (a.0 as f64 - mr).powi(2) + (a.1 as f64 - mc).powi(2);
                let db = (b.0 as f64 - mr).powi(2) + (b.1 as f64 - mc).powi(2);
                da.partial_cmp(&db).unwrap().then(a.cmp(b))
            })
            .unwrap();
        peaks.push((v, rep.0, rep.1, mr, mc));
    }

    let min_d2 = params.min_peak_dist * params.min_peak_dist;
    let mut chosen: Vec<(usize, usize, f64, f64)> = Vec::new();
    for &(_, r, c, mr, mc) in &peaks {
        if chosen.len() == params.k {
            break;
        }
        let far = chosen.iter().all(|&(_, _, pr, pc)| {
            let (dr, dc) = (pr - mr, pc - mc);
            dr * dr + dc * dc >= min_d2
        });
        if far {
            chosen.push((r, c, mr, mc));
        }
    }

    let wmax = T::lit(params.width_max);
    let mut poses = chosen
        .into_iter()
        .map(|(r, c, mr, mc)| {
            let theta = T::lit(0.5) * maps.sin[(r, c)].atan2(maps.cos[(r, c)]);
            let width = (maps.width[(r, c)] * wmax).max(T::zero());
            let q = maps.quality[(r, c)].max(T::zero()).min(T::one());
            GraspPose::new(T::lit(mc), T::lit(mr), theta, width, q)
        })
        .collect::<Result<Vec<_>, _>>()?;
    poses.sort_by(|a, b| {
        b.quality()
            .partial_cmp(&a.quality())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(poses)
}
