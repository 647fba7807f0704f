//! Synthetic tabletop scenes: object placement, rendering and analytic grasps.

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Color, ObjectSpec, Primitive, ShapeKind, CATALOG};
use super::DatasetError;
use crate::geometry::{pose_to_rect, GraspPose, GraspRect, DEFAULT_JAW_RATIO};

/// Canvas the catalog geometry is expressed in.
pub const CANVAS: f64 = 64.0;
const TABLE_DEPTH_MM: f64 = 1000.0;
const DARK_SHADE: f64 = 0.5;
/// Free space the gripper fingers need beside an object (canvas units).
const FINGER_MARGIN: f64 = 2.0;
const CLEARANCE: f64 = 3.0;

/// One placed object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_type: String,
    pub shape: ShapeKind,
    pub color: Color,
    /// Centre in pixels `(x, y)`.
    pub position: [f64; 2],
    /// Rotation of the object's main axis, radians.
    pub orientation: f64,
    pub parts: Vec<String>,
}

impl SceneObject {
    pub fn spec(&self) -> &'static ObjectSpec {
        super::catalog::object_spec(&self.object_type).expect("catalog object")
    }

    pub fn target_name(&self) -> String {
        super::catalog::object_target_name(self.color, self.spec())
    }

    pub fn part_target_name(&self, part: usize) -> String {
        super::catalog::part_target_name(self.color, self.spec(), part)
    }
}

/// Layout of one synthetic scene; reproducible from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub background: f64,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

/// Which of the scene's pixels belong to each object and part.
#[derive(Debug, Clone)]
pub struct SceneMasks {
    /// `object index + 1` per pixel, 0 for table.
    pub object: Array2<u8>,
    /// Part index per pixel (meaningful where `object > 0`).
    pub part: Array2<u8>,
}

struct Placed<'a> {
    spec: &'a ObjectSpec,
    scale: f64,
    position: [f64; 2],
    orientation: f64,
}

impl Placed<'_> {
    fn to_local(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.orientation.sin_cos();
        let (dx, dy) = ((x - self.position[0]) / self.scale, (y - self.position[1]) / self.scale);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.orientation.sin_cos();
        [
            self.position[0] + self.scale * (c * p[0] - s * p[1]),
            self.position[1] + self.scale * (s * p[0] + c * p[1]),
        ]
    }

    /// Part index at world point, if the object covers it (inflated by `pad` canvas units).
    fn part_at(&self, x: f64, y: f64, pad: f64) -> Option<usize> {
        let l = self.to_local(x, y);
        // later primitives win so the crossbar of a T covers the end of its stem
        self.spec
            .primitives
            .iter()
            .rev()
            .find(|p| primitive_contains(p, l, pad))
            .map(|p| p.part())
    }

    fn radius(&self) -> f64 {
        let r = self
            .spec
            .primitives
            .iter()
            .map(|p| match *p {
                Primitive::Bar { a, b, thickness, .. } => {
                    a[0].hypot(a[1]).max(b[0].hypot(b[1])) + thickness
                }
                Primitive::Disk { center, radius, .. } => center[0].hypot(center[1]) + radius,
            })
            .fold(0.0, f64::max);
        r * self.scale
    }
}

fn primitive_contains(p: &Primitive, l: [f64; 2], pad: f64) -> bool {
    match *p {
        Primitive::Bar { a, b, thickness, .. } => {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            let (ux, uy) = (dx / len, dy / len);
            let (px, py) = (l[0] - a[0], l[1] - a[1]);
            let along = px * ux + py * uy;
            let across = -px * uy + py * ux;
            along >= -pad && along <= len + pad && across.abs() <= thickness / 2.0 + pad
        }
        Primitive::Disk { center, radius, .. } => {
            (l[0] - center[0]).hypot(l[1] - center[1]) <= radius + pad
        }
    }
}

impl SceneSpec {
    fn placed(&self, i: usize) -> Placed<'static> {
        let o = &self.objects[i];
        Placed {
            spec: o.spec(),
            scale: self.image_size as f64 / CANVAS,
            position: o.position,
            orientation: o.orientation,
        }
    }

    /// Randomly places `count` objects of distinct types and colours.
    pub fn generate<R: Rng>(
        rng: &mut R,
        image_size: usize,
        count: usize,
        seed: u64,
        scene_index: usize,
        max_attempts: usize,
    ) -> Result<Self, DatasetError> {
        let types = sample(rng, CATALOG.len(), count);
        let colors = sample(rng, Color::ALL.len(), count);
        let background = rng.random_range(0.32..0.46);
        let mut spec = SceneSpec {
            image_size,
            background,
            objects: Vec::with_capacity(count),
            seed,
        };
        let scale = image_size as f64 / CANVAS;
        let mut attempts = 0;
        for (t, c) in types.iter().zip(colors.iter()) {
            let o = &CATALOG[t];
            loop {
                attempts += 1;
                if attempts > max_attempts {
                    return Err(DatasetError::InfeasiblePacking { scene_index });
                }
                let candidate = SceneObject {
                    object_type: o.name.to_string(),
                    shape: o.shape,
                    color: Color::ALL[c],
                    position: [
                        rng.random_range(0.0..image_size as f64),
                        rng.random_range(0.0..image_size as f64),
                    ],
                    orientation: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    parts: o.parts.iter().map(|p| p.name.to_string()).collect(),
                };
                spec.objects.push(candidate);
                let idx = spec.objects.len() - 1;
                if spec.fits(idx, scale) {
                    break;
                }
                spec.objects.pop();
            }
        }
        Ok(spec)
    }

    /// Object `i` lies in the image with its grasps and keeps clear of earlier objects.
    fn fits(&self, i: usize, scale: f64) -> bool {
        let n = self.image_size;
        let me = self.placed(i);
        let r = me.radius();
        let margin = 1.0;
        let inside = |x: f64, y: f64| x >= margin && y >= margin && x <= n as f64 - 1.0 - margin && y <= n as f64 - 1.0 - margin;
        for row in 0..n {
            for col in 0..n {
                let (x, y) = (col as f64, row as f64);
                if (x - me.position[0]).hypot(y - me.position[1]) > r + CLEARANCE * scale {
                    continue;
                }
                if me.part_at(x, y, 0.0).is_some() && !inside(x, y) {
                    return false;
                }
                if me.part_at(x, y, CLEARANCE).is_some() {
                    for j in 0..i {
                        if self.placed(j).part_at(x, y, 0.0).is_some() {
                            return false;
                        }
                    }
                }
            }
        }
        let half = 0.5;
        let hi = n as f64 - 0.5;
        let grasps = self.object_grasps(i);
        if grasps.iter().all(|g| g.is_empty()) {
            return false;
        }
        grasps.iter().flatten().all(|g| {
            let (x0, y0, x1, y1) = g.bounds();
            x0 >= -half && y0 >= -half && x1 <= hi && y1 <= hi
        })
    }

    /// Ground-truth rectangles of object `i`, grouped by part.
    pub fn object_grasps(&self, i: usize) -> Vec<Vec<GraspRect<f64>>> {
        let me = self.placed(i);
        let s = me.scale;
        let mut out = vec![Vec::new(); me.spec.parts.len()];
        let free = |p: [f64; 2]| me.part_at(p[0], p[1], 0.5).is_none();
        for prim in me.spec.primitives {
            match *prim {
                Primitive::Bar { part, a, b, thickness } => {
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let len = dx.hypot(dy);
                    let (ux, uy) = (dx / len, dy / len);
                    let width = thickness + 2.0 * FINGER_MARGIN;
                    let step = 2.0;
                    let mut t = 1.5;
                    while t <= len - 1.5 + 1e-9 {
                        let c = [a[0] + ux * t, a[1] + uy * t];
                        // the closing axis is perpendicular to the bar
                        let fa = [c[0] - uy * width / 2.0, c[1] + ux * width / 2.0];
                        let fb = [c[0] + uy * width / 2.0, c[1] - ux * width / 2.0];
                        let wc = me.to_world(c);
                        let (wa, wb) = (me.to_world(fa), me.to_world(fb));
                        if me.part_at(wc[0], wc[1], 0.0) == Some(part) && free(wa) && free(wb) {
                            let theta = (wb[1] - wa[1]).atan2(wb[0] - wa[0]);
                            let pose = GraspPose::new(wc[0], wc[1], theta, width * s, 1.0)
                                .expect("finite pose");
                            out[part].push(pose_to_rect(&pose, DEFAULT_JAW_RATIO).expect("positive width"));
                        }
                        t += step;
                    }
                }
                Primitive::Disk { part, center, radius } => {
                    let width = 2.0 * radius + 2.0 * FINGER_MARGIN;
                    let wc = me.to_world(center);
                    for k in 0..4 {
                        let theta = me.orientation + k as f64 * std::f64::consts::FRAC_PI_4;
                        let pose = GraspPose::new(wc[0], wc[1], theta, width * s, 1.0).expect("finite pose");
                        out[part].push(pose_to_rect(&pose, DEFAULT_JAW_RATIO).expect("positive width"));
                    }
                }
            }
        }
        out
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)` of object `i` in pixels.
    pub fn object_bbox(&self, i: usize) -> [f64; 4] {
        let masks = self.masks();
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for ((row, col), &o) in masks.object.indexed_iter() {
            if o as usize == i + 1 {
                b[0] = b[0].min(col as f64);
                b[1] = b[1].min(row as f64);
                b[2] = b[2].max(col as f64);
                b[3] = b[3].max(row as f64);
            }
        }
        b
    }

    pub fn masks(&self) -> SceneMasks {
        let n = self.image_size;
        let mut object = Array2::zeros((n, n));
        let mut part = Array2::zeros((n, n));
        for i in 0..self.objects.len() {
            let p = self.placed(i);
            for row in 0..n {
                for col in 0..n {
                    if let Some(k) = p.part_at(col as f64, row as f64, 0.0) {
                        object[(row, col)] = (i + 1) as u8;
                        part[(row, col)] = k as u8;
                    }
                }
            }
        }
        SceneMasks { object, part }
    }

    /// RGB rendering with 2×2 supersampling and seeded table texture.
    pub fn render_rgb<R: Rng>(&self, rng: &mut R) -> RgbImage {
        let n = self.image_size;
        let placed: Vec<_> = (0..self.objects.len()).map(|i| self.placed(i)).collect();
        ImageBuffer::from_fn(n as u32, n as u32, |col, row| {
            let noise = rng.random_range(-0.025..0.025);
            let bg = [self.background + noise, self.background + noise * 0.8, self.background * 0.92 + noise];
            let mut acc = [0.0; 3];
            for (sy, sx) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                let (x, y) = (col as f64 + sx, row as f64 + sy);
                let mut c = bg;
                for (i, p) in placed.iter().enumerate() {
                    if let Some(k) = p.part_at(x, y, 0.0) {
                        let base = self.objects[i].color.rgb();
                        let shade = if p.spec.parts[k].dark { DARK_SHADE } else { 1.0 };
                        c = base.map(|v| v * shade);
                    }
                }
                for ch in 0..3 {
                    acc[ch] += c[ch] / 4.0;
                }
            }
            Rgb(acc.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    /// 16-bit depth in millimetres: table plane minus part height.
    pub fn render_depth(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let masks = self.masks();
        let n = self.image_size;
        ImageBuffer::from_fn(n as u32, n as u32, |col, row| {
            let o = masks.object[(row as usize, col as usize)];
            let d = if o == 0 {
                TABLE_DEPTH_MM
            } else {
                let obj = &self.objects[o as usize - 1];
                TABLE_DEPTH_MM - obj.spec().parts[masks.part[(row as usize, col as usize)] as usize].height_mm
            };
            Luma([d as u16])
        })
    }
}
