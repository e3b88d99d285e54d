//! Contingency pilots: the expert lateral-escape rules and the A* planner
//! with its occupancy row, obstacle squares and retry ladder.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observe::Observer;
use crate::perception::{denormalize, DepthMap, Pose, REDUCED_COLS, REDUCED_ROWS};
use crate::seed;
use crate::world::{wrap_angle, Command, ObstacleBox, StepOutcome, Vec2, VehicleState, World, YawMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContingencyKind {
    None,
    Expert,
    Astar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContingencyConfig {
    /// Cells closer than this (m) mark their column occupied.
    pub occupancy_threshold: f64,
    pub fov_half_angle_deg: f64,
    pub min_arena_depth: f64,
    pub boundary_margin: f64,
    /// Clearance added around each obstacle square while planning.
    pub inflation: f64,
    /// Plan against the bare squares, ignoring `inflation`.
    pub raw_squares: bool,
    pub speed: f64,
    pub position_gain: f64,
    pub arrival_tolerance: f64,
    pub pass_through_tolerance: f64,
    pub stop_speed: f64,
    pub yaw_tolerance: f64,
    pub clear_forward_distance: f64,
    pub rotate_deg: f64,
    pub reverse_distance: f64,
    pub ladder_passes: usize,
    pub step_budget: u32,
    pub max_expansions: usize,
}

impl Default for ContingencyConfig {
    fn default() -> Self {
        Self {
            occupancy_threshold: 10.0,
            fov_half_angle_deg: 45.0,
            min_arena_depth: 5.0,
            boundary_margin: 0.5,
            inflation: 0.3,
            raw_squares: false,
            speed: 1.5,
            position_gain: 1.5,
            arrival_tolerance: 0.1,
            pass_through_tolerance: 0.5,
            stop_speed: 0.05,
            yaw_tolerance: 0.01,
            clear_forward_distance: 4.0,
            rotate_deg: 30.0,
            reverse_distance: 1.0,
            ladder_passes: 2,
            step_budget: 200,
            max_expansions: 200_000,
        }
    }
}

impl ContingencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.position_gain > 0.0 && self.arrival_tolerance > 0.0) {
            return Err(Error::config("contingency speed, gain and tolerance must be positive"));
        }
        if !(self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg < 90.0) {
            return Err(Error::config("field-of-view half angle must lie in (0, 90) degrees"));
        }
        if self.step_budget == 0 || self.ladder_passes == 0 {
            return Err(Error::config("contingency needs a step budget and at least one ladder pass"));
        }
        Ok(())
    }

    pub fn planning_inflation(&self) -> f64 {
        if self.raw_squares {
            0.0
        } else {
            self.inflation
        }
    }

    fn tan_fov(&self) -> f64 {
        self.fov_half_angle_deg.to_radians().tan()
    }
}

/// One flag per reduced-map column, true when occupied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyRow(pub [bool; REDUCED_COLS]);

impl OccupancyRow {
    pub fn any(&self) -> bool {
        self.0.iter().any(|&c| c)
    }

    /// Inclusive column ranges of contiguous occupied cells.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (j, &occ) in self.0.iter().chain(std::iter::once(&false)).enumerate() {
            match (occ, start) {
                (true, None) => start = Some(j),
                (false, Some(s)) => {
                    out.push((s, j - 1));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }
}

/// Rows 3, 4 and 5 of the nine.
pub fn middle_rows() -> std::ops::RangeInclusive<usize> {
    REDUCED_ROWS / 2 - 1..=REDUCED_ROWS / 2 + 1
}

fn check_reduced(map: &DepthMap) -> Result<()> {
    if (map.rows, map.cols) != (REDUCED_ROWS, REDUCED_COLS) {
        return Err(Error::config(format!(
            "expected a {REDUCED_ROWS}x{REDUCED_COLS} depth map, got {}x{}",
            map.rows, map.cols
        )));
    }
    Ok(())
}

fn column_min(map: &DepthMap, c: usize) -> f64 {
    middle_rows().map(|r| map.get(r, c)).fold(f64::INFINITY, f64::min)
}

/// `map` in meters.
pub fn build_occupancy(map: &DepthMap, threshold: f64) -> Result<OccupancyRow> {
    check_reduced(map)?;
    let mut row = [false; REDUCED_COLS];
    for (c, cell) in row.iter_mut().enumerate() {
        *cell = column_min(map, c) < threshold;
    }
    Ok(OccupancyRow(row))
}

/// Planar square standing in for a detected obstacle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSquare {
    /// Distance to the near face along the sensing heading.
    pub near: f64,
    /// Lateral offset of the center, positive to the left of the heading.
    pub lateral: f64,
    pub side: f64,
    pub yaw: f64,
    pub center: Vec2,
}

impl ObstacleSquare {
    pub fn as_box(&self) -> ObstacleBox {
        ObstacleBox {
            center_x: self.center.x,
            center_y: self.center.y,
            half_width: self.side / 2.0,
            half_depth: self.side / 2.0,
            yaw: self.yaw,
        }
    }
}

/// One square per contiguous occupied block. Column 0 is the leftmost.
pub fn build_obstacle_map(
    occupancy: &OccupancyRow,
    map: &DepthMap,
    pose: &Pose,
    fov_half_angle_deg: f64,
) -> Result<Vec<ObstacleSquare>> {
    check_reduced(map)?;
    let tan = fov_half_angle_deg.to_radians().tan();
    let n = REDUCED_COLS as f64;
    let origin = Vec2::new(pose.x, pose.y);
    Ok(occupancy
        .blocks()
        .into_iter()
        .map(|(a, b)| {
            let d = (a..=b).map(|c| column_min(map, c)).fold(f64::INFINITY, f64::min);
            let cell = 2.0 * d * tan / n;
            let side = (b - a + 1) as f64 * cell;
            let left_edge = d * tan * (1.0 - 2.0 * a as f64 / n);
            let lateral = left_edge - side / 2.0;
            let center = origin + Vec2::new(d + side / 2.0, lateral).rotate(pose.yaw);
            ObstacleSquare { near: d, lateral, side, yaw: pose.yaw, center }
        })
        .collect())
}

/// Planning region: track-aligned rectangle ahead of the origin intersected
/// with the camera wedge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningArena {
    pub origin: Pose,
    pub half_width: f64,
    pub boundary_margin: f64,
    pub depth: f64,
    pub tan_fov: f64,
    pub inflation: f64,
    pub squares: Vec<ObstacleSquare>,
}

pub type Cell = (i32, i32);

pub const MOVES: [Cell; 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

impl PlanningArena {
    pub fn new(origin: Pose, squares: Vec<ObstacleSquare>, half_width: f64, cfg: &ContingencyConfig) -> Self {
        let far = squares
            .iter()
            .flat_map(|s| s.as_box().corners())
            .map(|c| c.x - origin.x)
            .fold(0.0, f64::max);
        Self {
            origin,
            half_width,
            boundary_margin: cfg.boundary_margin,
            depth: far.max(cfg.min_arena_depth),
            tan_fov: cfg.tan_fov(),
            inflation: cfg.planning_inflation(),
            squares,
        }
    }

    /// World position of lattice cell (forward, left) in heading units.
    pub fn point(&self, c: Cell) -> Vec2 {
        Vec2::new(self.origin.x, self.origin.y) + Vec2::new(c.0 as f64, c.1 as f64).rotate(self.origin.yaw)
    }

    pub fn progress(&self, c: Cell) -> f64 {
        self.point(c).x - self.origin.x
    }

    pub fn is_goal(&self, c: Cell) -> bool {
        self.progress(c) >= self.depth
    }

    /// Lower bound on the remaining cost.
    pub fn heuristic(&self, c: Cell) -> f64 {
        (self.depth - self.progress(c)).max(0.0)
    }

    pub fn in_wedge(&self, c: Cell) -> bool {
        (c.1 as f64).abs() <= c.0 as f64 * self.tan_fov + 1e-9
    }

    /// Inside the side walls and not behind the start edge; the goal side may
    /// be crossed.
    pub fn in_rectangle(&self, c: Cell) -> bool {
        let p = self.point(c);
        p.y.abs() <= self.half_width - self.boundary_margin + 1e-9 && self.progress(c) >= -1e-9
    }

    pub fn clear_of_squares(&self, c: Cell) -> bool {
        let p = self.point(c);
        self.squares.iter().all(|s| s.as_box().distance_to(p) > self.inflation)
    }

    pub fn admissible(&self, c: Cell) -> bool {
        c == (0, 0) || (self.in_wedge(c) && self.in_rectangle(c) && self.clear_of_squares(c))
    }

    pub fn edge_clear(&self, a: Cell, b: Cell) -> bool {
        let (pa, pb) = (self.point(a), self.point(b));
        self.squares.iter().all(|s| s.as_box().distance_to_segment(pa, pb) > self.inflation)
    }

    /// Successors of `c` with their diagonal flag.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
        MOVES.iter().filter_map(move |&(di, dj)| {
            let n = (c.0 + di, c.1 + dj);
            (self.admissible(n) && self.edge_clear(c, n)).then_some((n, di != 0 && dj != 0))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub cells: Vec<Cell>,
    pub waypoints: Vec<Vec2>,
    pub cardinal_steps: usize,
    pub diagonal_steps: usize,
}

impl PlannedPath {
    pub fn cost(&self) -> f64 {
        step_cost(self.cardinal_steps, self.diagonal_steps)
    }
}

pub fn step_cost(cardinal: usize, diagonal: usize) -> f64 {
    cardinal as f64 + diagonal as f64 * std::f64::consts::SQRT_2
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    seq: u64,
    cell: Cell,
    g: (usize, usize),
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(o.h.total_cmp(&self.h)).then(o.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub explored: Vec<Cell>,
    pub path: Option<PlannedPath>,
}

pub fn astar_plan(arena: &PlanningArena) -> Option<PlannedPath> {
    astar_search(arena, usize::MAX).path
}

/// A* over the 8-move lattice with unit and √2 step costs.
pub fn astar_search(arena: &PlanningArena, max_expansions: usize) -> SearchTrace {
    let start = (0, 0);
    let mut best: HashMap<Cell, (usize, usize)> = HashMap::new();
    let mut parent: HashMap<Cell, Cell> = HashMap::new();
    let mut closed: HashMap<Cell, ()> = HashMap::new();
    let mut open = BinaryHeap::new();
    let mut seq = 0;
    let h0 = arena.heuristic(start);
    open.push(Open { f: h0, h: h0, seq, cell: start, g: (0, 0) });
    best.insert(start, (0, 0));
    let mut trace = SearchTrace::default();
    while let Some(node) = open.pop() {
        if closed.insert(node.cell, ()).is_some() {
            continue;
        }
        trace.explored.push(node.cell);
        if arena.is_goal(node.cell) {
            let mut cells = vec![node.cell];
            while let Some(&p) = parent.get(cells.last().unwrap()) {
                cells.push(p);
            }
            cells.reverse();
            trace.path = Some(PlannedPath {
                waypoints: cells.iter().map(|&c| arena.point(c)).collect(),
                cells,
                cardinal_steps: node.g.0,
                diagonal_steps: node.g.1,
            });
            return trace;
        }
        if trace.explored.len() >= max_expansions {
            break;
        }
        for (n, diagonal) in arena.neighbors(node.cell) {
            if closed.contains_key(&n) {
                continue;
            }
            let g = if diagonal { (node.g.0, node.g.1 + 1) } else { (node.g.0 + 1, node.g.1) };
            let cost = step_cost(g.0, g.1);
            if best.get(&n).is_some_and(|&b| step_cost(b.0, b.1) <= cost) {
                continue;
            }
            best.insert(n, g);
            parent.insert(n, node.cell);
            seq += 1;
            let h = arena.heuristic(n);
            open.push(Open { f: cost + h, h, seq, cell: n, g });
        }
    }
    trace
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "result")]
pub enum ProcedureResult {
    NoObstacle,
    Path { path: PlannedPath },
    NoPath,
}

/// Everything one planning attempt saw and produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerDump {
    pub pose: Pose,
    pub occupancy: OccupancyRow,
    pub arena: Option<PlanningArena>,
    pub explored: Vec<Cell>,
    pub result: ProcedureResult,
}

/// Sense, build occupancy and squares, then search. `depth` is in meters.
pub fn procedure_a(pose: &Pose, depth: &DepthMap, half_width: f64, cfg: &ContingencyConfig) -> Result<PlannerDump> {
    let occupancy = build_occupancy(depth, cfg.occupancy_threshold)?;
    if !occupancy.any() {
        return Ok(PlannerDump { pose: *pose, occupancy, arena: None, explored: vec![], result: ProcedureResult::NoObstacle });
    }
    let squares = build_obstacle_map(&occupancy, depth, pose, cfg.fov_half_angle_deg)?;
    let arena = PlanningArena::new(*pose, squares, half_width, cfg);
    let trace = astar_search(&arena, cfg.max_expansions);
    let result = match trace.path {
        Some(path) => ProcedureResult::Path { path },
        None => ProcedureResult::NoPath,
    };
    Ok(PlannerDump { pose: *pose, occupancy, arena: Some(arena), explored: trace.explored, result })
}

/// Source of metric depth maps for the contingency pilots.
pub trait DepthSensor {
    fn sense(&mut self, world: &World) -> Result<DepthMap>;
}

impl<F: FnMut(&World) -> Result<DepthMap>> DepthSensor for F {
    fn sense(&mut self, world: &World) -> Result<DepthMap> {
        self(world)
    }
}

/// Wraps an observer; each reading draws noise from `seed` and the world step.
pub struct ObserverSensor<'a> {
    pub observer: &'a Observer,
    pub seed: u64,
    calls: u64,
}

impl<'a> ObserverSensor<'a> {
    pub fn new(observer: &'a Observer, seed: u64) -> Self {
        Self { observer, seed, calls: 0 }
    }
}

impl DepthSensor for ObserverSensor<'_> {
    fn sense(&mut self, world: &World) -> Result<DepthMap> {
        self.calls += 1;
        let s = seed::derive(seed::derive(self.seed, world.step_index() as u64), self.calls);
        let map = self.observer.sense_depth(world, s)?;
        denormalize(&map, self.observer.far_clip())
    }
}

/// One simulator step taken under contingency control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentStep {
    pub command: Command,
    pub state: VehicleState,
    pub outcome: StepOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lateral {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyLog {
    pub kind: ContingencyKind,
    pub steps: Vec<SegmentStep>,
    pub attempts: Vec<PlannerDump>,
    pub expert_direction: Option<Lateral>,
    pub budget_exhausted: bool,
}

impl ContingencyLog {
    fn new(kind: ContingencyKind) -> Self {
        Self { kind, steps: vec![], attempts: vec![], expert_direction: None, budget_exhausted: false }
    }
}

struct Pilot<'a> {
    world: &'a mut World,
    cfg: &'a ContingencyConfig,
    log: ContingencyLog,
}

impl Pilot<'_> {
    /// False once the world has terminated or the budget is spent.
    fn command(&mut self, command: Command) -> Result<bool> {
        if !self.world.is_running() {
            return Ok(false);
        }
        if self.log.steps.len() as u32 >= self.cfg.step_budget {
            self.log.budget_exhausted = true;
            return Ok(false);
        }
        let outcome = self.world.step(&command)?;
        self.log.steps.push(SegmentStep { command, state: *self.world.state(), outcome });
        Ok(self.world.is_running())
    }

    /// Always spends at least one step, so every engagement advances time.
    fn stop(&mut self) -> Result<bool> {
        loop {
            if !self.command(Command::HOVER)? {
                return Ok(false);
            }
            if self.world.state().speed() < self.cfg.stop_speed {
                return Ok(true);
            }
        }
    }

    fn rotate_to(&mut self, yaw: f64) -> Result<bool> {
        while wrap_angle(self.world.state().yaw - yaw).abs() >= self.cfg.yaw_tolerance
            || self.world.state().speed() >= self.cfg.stop_speed
        {
            if !self.command(Command { velocity: Vec2::ZERO, yaw: YawMode::Target(yaw) })? {
                return Ok(false);
            }
        }
        Ok(self.world.is_running())
    }

    fn track(&self, target: Vec2, slow_down: bool) -> Command {
        let delta = target - self.world.state().position;
        let dist = delta.norm();
        let speed = if slow_down { self.cfg.speed.min(self.cfg.position_gain * dist) } else { self.cfg.speed };
        let velocity = if dist > 1e-12 { delta * (speed / dist) } else { Vec2::ZERO };
        Command::hold(velocity)
    }

    fn fly_to(&mut self, target: Vec2, tolerance: f64, slow_down: bool) -> Result<bool> {
        while (target - self.world.state().position).norm() >= tolerance {
            let cmd = self.track(target, slow_down);
            if !self.command(cmd)? {
                return Ok(false);
            }
        }
        Ok(self.world.is_running())
    }

    fn fly_path(&mut self, waypoints: &[Vec2]) -> Result<bool> {
        let n = waypoints.len();
        for (k, &w) in waypoints.iter().enumerate().skip(1) {
            let last = k + 1 == n;
            let tol = if last { self.cfg.arrival_tolerance } else { self.cfg.pass_through_tolerance };
            if !self.fly_to(w, tol, last)? {
                return Ok(false);
            }
        }
        Ok(self.world.is_running())
    }

    /// Lateral flight to `y` with no commanded forward motion.
    fn slide_to(&mut self, y: f64) -> Result<bool> {
        loop {
            let dy = y - self.world.state().position.y;
            if dy.abs() < self.cfg.arrival_tolerance {
                return Ok(self.world.is_running());
            }
            let vy = dy.signum() * self.cfg.speed.min(self.cfg.position_gain * dy.abs());
            if !self.command(Command::hold(Vec2::new(0.0, vy)))? {
                return Ok(false);
            }
        }
    }

    fn pose(&self) -> Pose {
        Pose::from(self.world.state())
    }
}

/// Point `distance` ahead along `yaw`, shortened to stay `margin` inside the
/// track edges.
pub fn capped_forward_target(from: Vec2, yaw: f64, distance: f64, half_width: f64, margin: f64) -> Vec2 {
    let dir = Vec2::from_polar(1.0, yaw);
    let limit = (half_width - margin).max(0.0);
    let mut t = distance;
    if dir.y.abs() > 1e-12 {
        let edge = if dir.y > 0.0 { limit } else { -limit };
        t = t.min(((edge - from.y) / dir.y).max(0.0));
    }
    from + dir * t
}

/// Lateral direction chosen by the expert rules. `y` is the vehicle's
/// lateral track position (positive to the left); `depth` is in meters.
pub fn expert_direction(y: f64, depth: &DepthMap, threshold: f64) -> Result<Lateral> {
    check_reduced(depth)?;
    let half = REDUCED_COLS / 2;
    let clear = |cols: std::ops::Range<usize>| cols.into_iter().all(|c| column_min(depth, c) >= threshold);
    Ok(if y < 0.0 {
        if clear(0..half) {
            Lateral::Right
        } else {
            Lateral::Left
        }
    } else if clear(half..REDUCED_COLS) {
        Lateral::Left
    } else {
        Lateral::Right
    })
}

pub fn run_expert_policy(world: &mut World, sensor: &mut dyn DepthSensor, cfg: &ContingencyConfig) -> Result<ContingencyLog> {
    let mut p = Pilot { world, cfg, log: ContingencyLog::new(ContingencyKind::Expert) };
    if p.stop()? {
        let depth = sensor.sense(p.world)?;
        let dir = expert_direction(p.world.state().position.y, &depth, cfg.occupancy_threshold)?;
        p.log.expert_direction = Some(dir);
        let edge = p.world.course.half_width - cfg.boundary_margin;
        p.slide_to(if dir == Lateral::Left { edge } else { -edge })?;
    }
    Ok(p.log)
}

pub fn run_astar_policy(world: &mut World, sensor: &mut dyn DepthSensor, cfg: &ContingencyConfig) -> Result<ContingencyLog> {
    let mut p = Pilot { world, cfg, log: ContingencyLog::new(ContingencyKind::Astar) };
    if !p.stop()? {
        return Ok(p.log);
    }
    let heading = p.world.state().yaw;
    let turn = cfg.rotate_deg.to_radians();
    let half_width = p.world.course.half_width;
    for pass in 0..cfg.ladder_passes {
        if pass > 0 {
            let back = p.world.state().position - Vec2::from_polar(cfg.reverse_distance, heading);
            if !p.fly_to(back, cfg.arrival_tolerance, true)? || !p.stop()? {
                return Ok(p.log);
            }
        }
        for offset in [0.0, -turn, turn] {
            if offset != 0.0 && !p.rotate_to(wrap_angle(heading + offset))? {
                return Ok(p.log);
            }
            let depth = sensor.sense(p.world)?;
            let dump = procedure_a(&p.pose(), &depth, half_width, cfg)?;
            let result = dump.result.clone();
            p.log.attempts.push(dump);
            match result {
                ProcedureResult::NoObstacle => {
                    let s = p.world.state();
                    let target =
                        capped_forward_target(s.position, s.yaw, cfg.clear_forward_distance, half_width, cfg.boundary_margin);
                    p.fly_to(target, cfg.arrival_tolerance, true)?;
                    return Ok(p.log);
                }
                ProcedureResult::Path { path } => {
                    p.fly_path(&path.waypoints)?;
                    return Ok(p.log);
                }
                ProcedureResult::NoPath => {
                    if offset != 0.0 && !p.rotate_to(heading)? {
                        return Ok(p.log);
                    }
                }
            }
        }
    }
    Ok(p.log)
}
