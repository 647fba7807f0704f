//! Brute-force references for the geometry kernel, written independently of
//! the polygon code: rectangles are tested point-by-point in their own frame.

#![allow(dead_code)]

/// Oriented box given by centre, closing-axis angle, opening width and jaw length.
#[derive(Debug, Clone, Copy)]
pub struct OracleBox {
    pub cx: f64,
    pub cy: f64,
    pub theta: f64,
    pub width: f64,
    pub height: f64,
}

impl OracleBox {
    pub fn new(cx: f64, cy: f64, theta: f64, width: f64, height: f64) -> Self {
        Self { cx, cy, theta, width, height }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.width / 2.0 && across.abs() <= self.height / 2.0
    }

    fn extent(&self) -> (f64, f64, f64, f64) {
        let r = 0.5 * self.width.hypot(self.height) + 1.0;
        (self.cx - r, self.cy - r, self.cx + r, self.cy + r)
    }
}

/// Area by counting samples of a `1 / supersample` grid.
pub fn mask_area(b: &OracleBox, supersample: usize) -> f64 {
    let (x0, y0, x1, y1) = b.extent();
    let step = 1.0 / supersample as f64;
    let mut n = 0usize;
    let mut y = y0 + step / 2.0;
    while y < y1 {
        let mut x = x0 + step / 2.0;
        while x < x1 {
            if b.contains(x, y) {
                n += 1;
            }
            x += step;
        }
        y += step;
    }
    n as f64 * step * step
}

/// Boolean-mask IoU on a supersampled grid.
pub fn mask_iou(a: &OracleBox, b: &OracleBox, supersample: usize) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.extent();
    let (bx0, by0, bx1, by1) = b.extent();
    let (x0, y0, x1, y1) = (ax0.min(bx0), ay0.min(by0), ax1.max(bx1), ay1.max(by1));
    let step = 1.0 / supersample as f64;
    let (mut inter, mut union) = (0usize, 0usize);
    let mut y = y0 + step / 2.0;
    while y < y1 {
        let mut x = x0 + step / 2.0;
        while x < x1 {
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
            x += step;
        }
        y += step;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Angle difference modulo π by enumeration of the three candidate shifts.
pub fn angle_delta_ref(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut best = f64::INFINITY;
    for k in -20..=20 {
        best = best.min((a - b + k as f64 * pi).abs());
    }
    best
}
