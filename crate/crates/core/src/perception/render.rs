use serde::{Deserialize, Serialize};

use super::{DepthMap, DepthUnits, PerceptionConfig, Resolution, RgbImage};
use crate::error::Result;
use crate::seed;
use crate::world::{CourseConfig, ObstacleBox, Vec2, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }
}

impl From<&VehicleState> for Pose {
    fn from(s: &VehicleState) -> Self {
        Self { x: s.position.x, y: s.position.y, yaw: s.yaw }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Obstacle(usize),
    Wall,
    Ground,
    Sky,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Face {
    Front,
    Side,
    Top,
}

/// A vertical prism crossed by one column's ray over `[s_in, s_out]`, where
/// `s` is forward distance along the camera axis.
#[derive(Clone, Copy)]
struct Span {
    s_in: f64,
    s_out: f64,
    top: f64,
    surface: Surface,
    face: Face,
}

struct Column {
    spans: Vec<Span>,
    /// Euclidean length per unit `s` excluding the vertical component.
    planar_scale2: f64,
}

fn slab(o: Vec2, d: Vec2, hx: f64, hy: f64) -> Option<(f64, f64, Face)> {
    let (mut t0, mut t1) = (0.0_f64, f64::INFINITY);
    let mut face = Face::Front;
    for (axis, (p, dp, h)) in [(o.x, d.x, hx), (o.y, d.y, hy)].into_iter().enumerate() {
        if dp.abs() < 1e-15 {
            if p.abs() > h {
                return None;
            }
            continue;
        }
        let ta = (-h - p) / dp;
        let tb = (h - p) / dp;
        let near = ta.min(tb);
        if near > t0 {
            t0 = near;
            face = if axis == 0 { Face::Front } else { Face::Side };
        }
        t1 = t1.min(ta.max(tb));
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1, face))
}

fn columns(pose: &Pose, obstacles: &[ObstacleBox], course: &CourseConfig, config: &PerceptionConfig) -> Vec<Column> {
    let cam = &config.camera;
    let f = cam.focal();
    let origin = Vec2::new(pose.x, pose.y);
    let wall_y = course.half_width + config.wall_margin;
    (0..cam.width)
        .map(|c| {
            let a = (c as f64 + 0.5 - 0.5 * cam.width as f64) / f;
            let dir = Vec2::new(1.0, -a).rotate(pose.yaw);
            let mut spans = Vec::with_capacity(obstacles.len() + 1);
            for (i, b) in obstacles.iter().enumerate() {
                let o = b.to_local(origin);
                let d = dir.rotate(-b.yaw);
                if let Some((s_in, s_out, face)) = slab(o, d, b.half_depth, b.half_width) {
                    spans.push(Span { s_in, s_out, top: course.obstacle_height, surface: Surface::Obstacle(i), face });
                }
            }
            if config.walls && dir.y.abs() > 1e-15 {
                let target = if dir.y > 0.0 { wall_y } else { -wall_y };
                let s = (target - origin.y) / dir.y;
                if s >= 0.0 {
                    spans.push(Span {
                        s_in: s,
                        s_out: f64::INFINITY,
                        top: config.wall_height,
                        surface: Surface::Wall,
                        face: Face::Side,
                    });
                }
            }
            spans.sort_by(|p, q| p.s_in.total_cmp(&q.s_in));
            Column { spans, planar_scale2: 1.0 + a * a }
        })
        .collect()
}

/// First surface along the ray with vertical slope `-b` per unit `s` from
/// altitude `alt`; returns `(s, surface, face)`.
fn trace(col: &Column, alt: f64, b: f64) -> (f64, Surface, Face) {
    let ground = if b > 0.0 { alt / b } else { f64::INFINITY };
    let mut best = (ground, if ground.is_finite() { Surface::Ground } else { Surface::Sky }, Face::Top);
    for sp in &col.spans {
        if sp.s_in >= best.0 {
            break;
        }
        let z_in = alt - b * sp.s_in;
        if z_in < 0.0 {
            continue;
        }
        if z_in <= sp.top {
            best = (sp.s_in, sp.surface, sp.face);
            break;
        }
        if b > 0.0 {
            let s_top = (alt - sp.top) / b;
            if s_top <= sp.s_out && s_top < best.0 {
                best = (s_top, sp.surface, Face::Top);
            }
        }
    }
    best
}

fn for_each_pixel(
    pose: &Pose,
    obstacles: &[ObstacleBox],
    course: &CourseConfig,
    config: &PerceptionConfig,
    mut f: impl FnMut(usize, usize, f64, Surface, Face),
) -> Result<()> {
    config.camera.validate()?;
    let cam = &config.camera;
    let focal = cam.focal();
    let alt = course.flight_altitude();
    let cols = columns(pose, obstacles, course, config);
    for r in 0..cam.height {
        let b = (r as f64 + 0.5 - 0.5 * cam.height as f64) / focal;
        for (c, col) in cols.iter().enumerate() {
            let (s, surface, face) = trace(col, alt, b);
            let dist = s * (col.planar_scale2 + b * b).sqrt();
            f(r, c, dist, surface, face);
        }
    }
    Ok(())
}

/// Euclidean range per pixel, clipped to the far plane.
pub fn render_depth_full(
    pose: &Pose,
    obstacles: &[ObstacleBox],
    course: &CourseConfig,
    config: &PerceptionConfig,
) -> Result<DepthMap> {
    let cam = &config.camera;
    let far = cam.far_clip;
    let mut values = vec![far; cam.height * cam.width];
    for_each_pixel(pose, obstacles, course, config, |r, c, dist, surface, _| {
        let visible = match surface {
            Surface::Sky => false,
            Surface::Ground => config.ground_in_depth,
            _ => true,
        };
        if visible {
            values[r * cam.width + c] = dist.min(far);
        }
    })?;
    Ok(DepthMap { rows: cam.height, cols: cam.width, values, resolution: Resolution::Full, units: DepthUnits::Meters })
}

const SKY: [f32; 3] = [0.55, 0.72, 0.92];
const GROUND: [f32; 3] = [0.36, 0.34, 0.30];
const WALL: [f32; 3] = [0.62, 0.60, 0.58];

/// Seed-stable body colour for obstacle `i`.
pub fn obstacle_color(color_seed: u64, i: usize) -> [f32; 3] {
    let h = seed::derive(color_seed, i as u64);
    let hue = (h % 3600) as f32 / 3600.0;
    let (s, v) = (0.75_f32, 0.85_f32);
    let k = |n: f32| {
        let k = (n + hue * 6.0) % 6.0;
        v - v * s * (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [k(5.0), k(3.0), k(1.0)]
}

pub fn render_rgb(
    pose: &Pose,
    obstacles: &[ObstacleBox],
    course: &CourseConfig,
    config: &PerceptionConfig,
) -> Result<RgbImage> {
    let cam = &config.camera;
    let mut data = vec![0.0_f32; cam.height * cam.width * 3];
    for_each_pixel(pose, obstacles, course, config, |r, c, dist, surface, face| {
        let base = match surface {
            Surface::Sky => SKY,
            Surface::Ground => GROUND,
            Surface::Wall => WALL,
            Surface::Obstacle(i) => obstacle_color(config.color_seed, i),
        };
        let shade = match (surface, face) {
            (Surface::Sky, _) => 1.0,
            (_, Face::Front) => 1.0,
            (_, Face::Side) => 0.8,
            (_, Face::Top) => 1.1,
        };
        let atten = if surface == Surface::Sky { 1.0 } else { 0.3 + 0.7 * (-dist / 35.0).exp() as f32 };
        let i = (r * cam.width + c) * 3;
        for k in 0..3 {
            data[i + k] = (base[k] * shade * atten).clamp(0.0, 1.0);
        }
    })?;
    Ok(RgbImage { height: cam.height, width: cam.width, data })
}
