#![allow(dead_code)]

use std::collections::{BinaryHeap, HashMap};

use hybrid_avoid::contingency::*;
use hybrid_avoid::perception::Pose;
use hybrid_avoid::seed;
use hybrid_avoid::world::Vec2;
use rand::Rng;

pub fn square(origin: &Pose, near: f64, lateral: f64, side: f64) -> ObstacleSquare {
    let center = Vec2::new(origin.x, origin.y) + Vec2::new(near + side / 2.0, lateral).rotate(origin.yaw);
    ObstacleSquare { near, lateral, side, yaw: origin.yaw, center }
}

/// Independent uniform-cost search over the same lattice rules.
pub fn oracle_cost(a: &PlanningArena) -> Option<f64> {
    let (c, s) = (a.origin.yaw.cos(), a.origin.yaw.sin());
    let point = |i: i32, j: i32| Vec2::new(a.origin.x + i as f64 * c - j as f64 * s, a.origin.y + i as f64 * s + j as f64 * c);
    let ok = |i: i32, j: i32| {
        if (i, j) == (0, 0) {
            return true;
        }
        let p = point(i, j);
        (j.abs() as f64) <= i as f64 * a.tan_fov + 1e-9
            && p.y.abs() <= a.half_width - a.boundary_margin + 1e-9
            && p.x - a.origin.x >= -1e-9
            && a.squares.iter().all(|q| q.as_box().distance_to(p) > a.inflation)
    };
    let mut dist: HashMap<(i32, i32), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push((std::cmp::Reverse(Ord(0.0)), (0, 0)));
    dist.insert((0, 0), 0.0);
    while let Some((std::cmp::Reverse(Ord(d)), (i, j))) = heap.pop() {
        if d > dist[&(i, j)] {
            continue;
        }
        if point(i, j).x - a.origin.x >= a.depth {
            return Some(d);
        }
        for di in -1..=1 {
            for dj in -1..=1 {
                if (di, dj) == (0, 0) {
                    continue;
                }
                let (ni, nj) = (i + di, j + dj);
                if !ok(ni, nj) || !a.squares.iter().all(|q| q.as_box().distance_to_segment(point(i, j), point(ni, nj)) > a.inflation) {
                    continue;
                }
                let nd = d + if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                if dist.get(&(ni, nj)).is_none_or(|&old| nd < old - 1e-12) {
                    dist.insert((ni, nj), nd);
                    heap.push((std::cmp::Reverse(Ord(nd)), (ni, nj)));
                }
            }
        }
    }
    None
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
struct Ord(f64);
impl Eq for Ord {}
impl std::cmp::Ord for Ord {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

pub fn random_arena(rng: &mut seed::Rng, cfg: &ContingencyConfig) -> PlanningArena {
    let origin = Pose::new(rng.random_range(0.0..50.0), rng.random_range(-4.5..4.5), rng.random_range(-0.6..0.6));
    let n = rng.random_range(1..=4);
    let squares = (0..n)
        .map(|_| square(&origin, rng.random_range(1.5..9.0), rng.random_range(-6.0..6.0), rng.random_range(0.5..5.0)))
        .collect();
    PlanningArena::new(origin, squares, 6.0, cfg)
}

/// Lattice moves, clear edges, wedge and rectangle membership, and inflated
/// clearance at every waypoint.
pub fn path_is_safe(a: &PlanningArena, path: &PlannedPath) -> bool {
    path.cells.first() == Some(&(0, 0))
        && path.cells.last().is_some_and(|&c| a.is_goal(c))
        && path.cells.windows(2).all(|w| MOVES.contains(&(w[1].0 - w[0].0, w[1].1 - w[0].1)) && a.edge_clear(w[0], w[1]))
        && path.cells.iter().enumerate().skip(1).all(|(k, &c)| {
            let p = path.waypoints[k];
            a.in_wedge(c) && a.in_rectangle(c) && a.squares.iter().all(|s| s.as_box().distance_to(p) > a.inflation)
        })
}

/// Frame `t` is positive iff some step in `(t, t + horizon]` collided.
pub fn brute_force_labels(collided_at: &[bool], frames: usize, horizon: usize) -> Vec<bool> {
    (0..frames).map(|t| (t + 1..=t + horizon).any(|s| collided_at.get(s).copied().unwrap_or(false))).collect()
}
