//! Rotated bird's-eye-view rectangles and their intersection-over-union.

use std::cmp::Ordering;

/// BEV rectangle: center, length along the heading, width across it, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBox {
    pub cx: f64,
    pub cy: f64,
    pub l: f64,
    pub w: f64,
    pub yaw: f64,
}

impl BevBox {
    pub fn new(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> Self {
        Self { cx, cy, l, w, yaw }
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| (self.cx + u * c - v * s, self.cy + u * s + v * c))
    }

    /// Whether `(x, y)` lies inside the rectangle grown by `tol` on every side.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= 0.5 * self.l + tol && v.abs() <= 0.5 * self.w + tol
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        [self.cx, self.cy, self.l, self.w, self.yaw]
            .iter()
            .zip([other.cx, other.cy, other.l, other.w, other.yaw].iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in != prev_in {
                let dp = cross(a, b, prev);
                let dc = cross(a, b, cur);
                let t = dp / (dp - dc);
                output.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// IoU of two rotated BEV rectangles; 0 when either has zero area. The
/// arguments are put in a canonical order first, so the result is exactly
/// symmetric.
pub fn rotated_iou(a: &BevBox, b: &BevBox) -> f64 {
    let (a, b) = if a.key_cmp(b) == Ordering::Greater { (b, a) } else { (a, b) };
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    // Cheap reject on circumscribed circles.
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    let reach = 0.5 * (a.l.hypot(a.w) + b.l.hypot(b.w));
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners())).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
