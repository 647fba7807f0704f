//! Plain-text rectangle files: one grasp per line, eight whitespace-separated
//! numbers giving the four corners as `row col` pairs, counterclockwise.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use super::{GeometryError, GraspRect, Point2};
use crate::Scalar;

pub fn parse_rects<T: Scalar>(text: &str, tolerance: T) -> Result<Vec<GraspRect<T>>, GeometryError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| GeometryError::Parse {
                    line: i + 1,
                    message: format!("bad number {t:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != 8 {
            return Err(GeometryError::Parse {
                line: i + 1,
                message: format!("expected 8 values, found {}", vals.len()),
            });
        }
        let corner = |j: usize| Point2::new(T::lit(vals[2 * j + 1]), T::lit(vals[2 * j]));
        let rect = GraspRect::from_corners_with_tolerance(
            [corner(0), corner(1), corner(2), corner(3)],
            tolerance,
        )
        .map_err(|e| GeometryError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rect);
    }
    Ok(out)
}

/// One line, `row col` per corner.
pub fn format_rect<T: Scalar>(rect: &GraspRect<T>) -> String {
    let mut s = String::new();
    for (i, p) in rect.corners().iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{} {}", p.y, p.x);
    }
    s
}

pub fn format_rects<T: Scalar>(rects: &[GraspRect<T>]) -> String {
    rects.iter().map(|r| format_rect(r) + "\n").collect()
}

/// Row/col corner array as stored in dataset manifests.
pub fn rect_to_row_col(rect: &GraspRect<f64>) -> [f64; 8] {
    let c = rect.corners();
    [c[0].y, c[0].x, c[1].y, c[1].x, c[2].y, c[2].x, c[3].y, c[3].x]
}

pub fn rect_from_row_col(v: &[f64; 8]) -> Result<GraspRect<f64>, GeometryError> {
    GraspRect::from_corners([
        Point2::new(v[1], v[0]),
        Point2::new(v[3], v[2]),
        Point2::new(v[5], v[4]),
        Point2::new(v[7], v[6]),
    ])
}

pub fn read_rect_file(path: &Path, tolerance: f64) -> Result<Vec<GraspRect<f64>>, GeometryError> {
    parse_rects(&std::fs::read_to_string(path)?, tolerance)
}

pub fn write_rect_file(path: &Path, rects: &[GraspRect<f64>]) -> Result<(), GeometryError> {
    std::fs::write(path, format_rects(rects))?;
    Ok(())
}
