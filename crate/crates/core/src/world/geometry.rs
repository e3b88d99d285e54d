use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(r: f64, angle: f64) -> Self {
        Self { x: r * angle.cos(), y: r * angle.sin() }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c * self.x - s * self.y, y: s * self.x + c * self.y }
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
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

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Oriented rectangle in the ground plane.
///
/// `half_width` is the extent along the rectangle's local y axis (lateral when
/// `yaw = 0`), `half_depth` along its local x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub center_x: f64,
    pub center_y: f64,
    pub half_width: f64,
    pub half_depth: f64,
    pub yaw: f64,
}

impl ObstacleBox {
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.center_x, self.center_y)
    }

    /// Point expressed in the box frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center()).rotate(-self.yaw)
    }

    pub fn from_local(&self, p: Vec2) -> Vec2 {
        p.rotate(self.yaw) + self.center()
    }

    /// Euclidean distance from `p` to the rectangle (zero inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half_depth).max(0.0);
        let dy = (l.y.abs() - self.half_width).max(0.0);
        dx.hypot(dy)
    }

    pub fn overlaps_disc(&self, p: Vec2, radius: f64) -> bool {
        self.distance_to(p) <= radius
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (d, w) = (self.half_depth, self.half_width);
        [Vec2::new(d, w), Vec2::new(-d, w), Vec2::new(-d, -w), Vec2::new(d, -w)].map(|c| self.from_local(c))
    }

    /// Largest |y| reached by the rectangle.
    pub fn lateral_extent(&self) -> f64 {
        self.corners().iter().map(|c| c.y.abs()).fold(0.0, f64::max)
    }

    /// Distance between the segment `a→b` and the rectangle.
    pub fn distance_to_segment(&self, a: Vec2, b: Vec2) -> f64 {
        let (la, lb) = (self.to_local(a), self.to_local(b));
        let (d, w) = (self.half_depth, self.half_width);
        if segment_hits_aabb(la, lb, d, w) {
            return 0.0;
        }
        let local = ObstacleBox { center_x: 0.0, center_y: 0.0, half_width: w, half_depth: d, yaw: 0.0 };
        let mut best = local.distance_to(la).min(local.distance_to(lb));
        for c in [Vec2::new(d, w), Vec2::new(-d, w), Vec2::new(-d, -w), Vec2::new(d, -w)] {
            best = best.min(point_segment_distance(c, la, lb));
        }
        best
    }
}

fn segment_hits_aabb(a: Vec2, b: Vec2, hx: f64, hy: f64) -> bool {
    let dir = b - a;
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (p, dp, h) in [(a.x, dir.x, hx), (a.y, dir.y, hy)] {
        if dp.abs() < 1e-15 {
            if p.abs() > h {
                return false;
            }
        } else {
            let ta = (-h - p) / dp;
            let tb = (h - p) / dp;
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}
