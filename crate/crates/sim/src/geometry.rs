use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Position plus heading in the world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World point → this pose's frame (x forward, y left).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.heading)
    }

    /// This pose's frame → world.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.position()
    }

    /// `other` expressed in this pose's frame.
    pub fn relative(&self, other: &Pose) -> Pose {
        let p = self.to_local(other.position());
        Pose::new(p.x, p.y, wrap_angle(other.heading - self.heading))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// Corners of an oriented rectangle centred at `pose`, counter-clockwise.
pub fn rect_corners(pose: &Pose, length: f64, width: f64) -> [Vec2; 4] {
    let (hl, hw) = (length / 2.0, width / 2.0);
    [
        pose.to_world(Vec2::new(hl, hw)),
        pose.to_world(Vec2::new(-hl, hw)),
        pose.to_world(Vec2::new(-hl, -hw)),
        pose.to_world(Vec2::new(hl, -hw)),
    ]
}

pub fn point_in_rect(p: Vec2, pose: &Pose, length: f64, width: f64) -> bool {
    let l = pose.to_local(p);
    l.x.abs() <= length / 2.0 && l.y.abs() <= width / 2.0
}

/// Separating-axis overlap test for two convex polygons.
pub fn convex_overlap(a: &[Vec2], b: &[Vec2]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let axis = (poly[(i + 1) % poly.len()] - poly[i]).perp();
            let proj = |pts: &[Vec2]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let d = p.dot(axis);
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

/// Distance from `p` to the segment `a`–`b` and the clamped parameter along it.
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.dist(a + ab * t), t)
}

/// Polyline with cumulative arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pts: Vec<Vec2>,
    arc: Vec<f64>,
}

/// Projection of a point onto a [`Polyline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length at the foot point.
    pub s: f64,
    /// Signed lateral offset, positive on the left.
    pub lateral: f64,
    /// Index of the segment containing the foot point.
    pub segment: usize,
}

impl Polyline {
    pub fn new(pts: Vec<Vec2>) -> Self {
        let mut arc = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                s += p.dist(pts[i - 1]);
            }
            arc.push(s);
        }
        Polyline { pts, arc }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.pts
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.pts.len();
        match self.arc.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arc length `s`; extrapolates linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.pts.len() == 1 {
            return self.pts[0];
        }
        let i = self.segment_at(s);
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let seg = self.arc[i + 1] - self.arc[i];
        if seg <= 0.0 {
            return a;
        }
        a.lerp(b, (s - self.arc[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        if self.pts.len() < 2 {
            return 0.0;
        }
        let i = self.segment_at(s.clamp(0.0, self.length()));
        (self.pts[i + 1] - self.pts[i]).angle()
    }

    /// Closest point, searching segments whose start arc lies in `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Vec2, s_lo: f64, s_hi: f64) -> Projection {
        let n = self.pts.len();
        let mut best = (f64::INFINITY, 0usize, 0.0);
        let start = self.segment_at(s_lo.max(0.0));
        for i in start..n.saturating_sub(1) {
            if self.arc[i] > s_hi {
                break;
            }
            let (d, t) = segment_distance(p, self.pts[i], self.pts[i + 1]);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        if n < 2 {
            return Projection {
                s: 0.0,
                lateral: p.dist(self.pts[0]),
                segment: 0,
            };
        }
        let (_, i, t) = best;
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let dir = b - a;
        let foot = a + dir * t;
        let side = dir.cross(p - a).signum();
        let mut lateral = p.dist(foot) * side;
        let mut s = self.arc[i] + (self.arc[i + 1] - self.arc[i]) * t;
        // Extend along the end tangents so progress keeps growing past the ends.
        if (i == n - 2 && t >= 1.0) || (i == 0 && t <= 0.0) {
            let u = dir * (1.0 / dir.norm().max(1e-12));
            let along = (p - foot).dot(u);
            s += along;
            lateral = u.cross(p - foot);
        }
        Projection { s, lateral, segment: i }
    }

    pub fn project(&self, p: Vec2) -> Projection {
        self.project_window(p, 0.0, f64::INFINITY)
    }

    /// Minimum distance from `p` to the polyline.
    pub fn distance(&self, p: Vec2) -> f64 {
        if self.pts.len() == 1 {
            return p.dist(self.pts[0]);
        }
        self.pts
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]).0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Resamples at (at most) `spacing` metres, keeping both endpoints.
    pub fn resampled(&self, spacing: f64) -> Polyline {
        let len = self.length();
        let n = (len / spacing).ceil().max(1.0) as usize;
        Polyline::new((0..=n).map(|k| self.point_at(len * k as f64 / n as f64)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn relative_pose_roundtrip() {
        let a = Pose::new(3.0, -2.0, 0.7);
        let b = Pose::new(-1.0, 5.0, -2.9);
        let r = a.relative(&b);
        let back = a.to_world(Vec2::new(r.x, r.y));
        assert!(back.dist(b.position()) < 1e-12);
        assert!((wrap_angle(a.heading + r.heading - b.heading)).abs() < 1e-12);
    }

    #[test]
    fn sat_overlap() {
        let a = rect_corners(&Pose::new(0.0, 0.0, 0.0), 4.0, 2.0);
        let b = rect_corners(&Pose::new(3.9, 0.0, 0.0), 4.0, 2.0);
        let c = rect_corners(&Pose::new(4.1, 0.0, 0.0), 4.0, 2.0);
        let d = rect_corners(&Pose::new(2.5, 2.5, PI / 4.0), 4.0, 2.0);
        assert!(convex_overlap(&a, &b));
        assert!(!convex_overlap(&a, &c));
        assert!(convex_overlap(&a, &d));
    }

    #[test]
    fn polyline_projection_and_extrapolation() {
        let pl = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]);
        assert_eq!(pl.length(), 20.0);
        let p = pl.project(Vec2::new(4.0, 1.5));
        assert!((p.s - 4.0).abs() < 1e-12 && (p.lateral - 1.5).abs() < 1e-12);
        let q = pl.project(Vec2::new(10.0, 13.0));
        assert!((q.s - 23.0).abs() < 1e-12);
        assert!((pl.point_at(15.0).y - 5.0).abs() < 1e-12);
    }
}
