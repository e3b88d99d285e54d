//! Deterministic 2D flight world: course generation, first-order velocity
//! dynamics, termination classification and noisy kinematic estimates.

mod geometry;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use geometry::{point_segment_distance, wrap_angle, ObstacleBox, Vec2};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourseConfig {
    pub length: f64,
    pub half_width: f64,
    pub obstacle_count: usize,
    pub first_obstacle_x: f64,
    pub spacing: f64,
    /// Lateral size of an obstacle footprint.
    pub obstacle_width: f64,
    /// Longitudinal size of an obstacle footprint.
    pub obstacle_depth: f64,
    pub obstacle_height: f64,
    pub seed: u64,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            length: 100.0,
            half_width: 6.0,
            obstacle_count: 6,
            first_obstacle_x: 20.0,
            spacing: 15.0,
            obstacle_width: 2.0,
            obstacle_depth: 4.5,
            obstacle_height: 1.5,
            seed: 0,
        }
    }
}

impl CourseConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.length,
            self.half_width,
            self.obstacle_width,
            self.obstacle_depth,
            self.obstacle_height,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) || self.spacing < 0.0 {
            return Err(Error::config("course dimensions must be positive and finite"));
        }
        if self.obstacle_count > 0 {
            let last = self.first_obstacle_x + (self.obstacle_count - 1) as f64 * self.spacing;
            if last > self.length {
                return Err(Error::config(format!(
                    "last obstacle at x = {last} lies beyond course length {}",
                    self.length
                )));
            }
        }
        if self.obstacle_width > 2.0 * self.half_width {
            return Err(Error::config("obstacle footprint is wider than the track"));
        }
        Ok(())
    }

    /// Camera altitude: half the obstacle height.
    pub fn flight_altitude(&self) -> f64 {
        0.5 * self.obstacle_height
    }
}

/// Places `obstacle_count` boxes at `first + k·spacing` with uniformly drawn
/// lateral centers that keep every box inside the track.
pub fn generate_course(config: &CourseConfig) -> Result<Vec<ObstacleBox>> {
    config.validate()?;
    let mut rng = seed::rng_for(config.seed, "course");
    let half_w = 0.5 * config.obstacle_width;
    let max_offset = config.half_width - half_w;
    let lateral = Uniform::new_inclusive(-max_offset, max_offset)
        .map_err(|e| Error::config(format!("lateral range: {e}")))?;
    Ok((0..config.obstacle_count)
        .map(|k| ObstacleBox {
            center_x: config.first_obstacle_x + k as f64 * config.spacing,
            center_y: lateral.sample(&mut rng),
            half_width: half_w,
            half_depth: 0.5 * config.obstacle_depth,
            yaw: 0.0,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Forward,
    Right,
    Reverse,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Forward, Action::Right, Action::Reverse];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

/// Commanded cruise speed of the discrete actions.
pub const CRUISE_SPEED: f64 = 3.0;
pub const REVERSE_SPEED: f64 = -0.5;
pub const TURN_OFFSET_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum YawMode {
    /// Relax toward the heading of the commanded velocity.
    FollowVelocity,
    Hold,
    Target(f64),
}

/// Input to the low-level velocity controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub velocity: Vec2,
    pub yaw: YawMode,
}

impl Command {
    pub const HOVER: Command = Command { velocity: Vec2::ZERO, yaw: YawMode::Hold };

    pub fn hold(velocity: Vec2) -> Self {
        Self { velocity, yaw: YawMode::Hold }
    }
}

/// World-frame velocity command for a discrete action at the current yaw.
/// Left is counter-clockwise (toward +y).
pub fn apply_action(action: Action, state: &VehicleState) -> Command {
    let off = TURN_OFFSET_DEG.to_radians();
    match action {
        Action::Forward => Command {
            velocity: Vec2::from_polar(CRUISE_SPEED, state.yaw),
            yaw: YawMode::FollowVelocity,
        },
        Action::Left => Command {
            velocity: Vec2::from_polar(CRUISE_SPEED, state.yaw + off),
            yaw: YawMode::FollowVelocity,
        },
        Action::Right => Command {
            velocity: Vec2::from_polar(CRUISE_SPEED, state.yaw - off),
            yaw: YawMode::FollowVelocity,
        },
        Action::Reverse => Command::hold(Vec2::from_polar(REVERSE_SPEED, state.yaw)),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_acceleration: f64,
    pub commanded_velocity: Vec2,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, yaw: f64) -> Self {
        Self { position: Vec2::new(x, y), yaw: wrap_angle(yaw), ..Self::default() }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Running,
    Completed,
    Collision,
    OutOfBounds,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Outcome::Collision | Outcome::OutOfBounds)
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Completed => "completed",
            Outcome::Collision => "collision",
            Outcome::OutOfBounds => "out-of-bounds",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub classification: Outcome,
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub dt: f64,
    /// Time constant of the first-order velocity and yaw tracking.
    pub tau: f64,
    pub vehicle_radius: f64,
    pub max_steps: u32,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { dt: 0.1, tau: 0.3, vehicle_radius: 0.3, max_steps: 600 }
    }
}

/// Advances the vehicle by one control period.
pub fn step_dynamics(state: &VehicleState, command: &Command, dynamics: &DynamicsConfig) -> VehicleState {
    let dt = dynamics.dt;
    let gain = (dt / dynamics.tau).min(1.0);
    let v_cmd = command.velocity;
    let velocity = state.velocity + (v_cmd - state.velocity) * gain;
    let target_yaw = match command.yaw {
        YawMode::FollowVelocity if v_cmd.norm() > 1e-9 => Some(v_cmd.angle()),
        YawMode::Target(t) => Some(t),
        _ => None,
    };
    let yaw = match target_yaw {
        Some(t) => wrap_angle(state.yaw + gain * wrap_angle(t - state.yaw)),
        None => state.yaw,
    };
    let yaw_rate = wrap_angle(yaw - state.yaw) / dt;
    VehicleState {
        position: state.position + velocity * dt,
        acceleration: (velocity - state.velocity) * (1.0 / dt),
        velocity,
        yaw,
        yaw_rate,
        yaw_acceleration: (yaw_rate - state.yaw_rate) / dt,
        commanded_velocity: v_cmd,
    }
}

/// Termination test; collision takes precedence over out-of-bounds, which
/// takes precedence over completion and timeout.
pub fn classify(
    state: &VehicleState,
    obstacles: &[ObstacleBox],
    course: &CourseConfig,
    dynamics: &DynamicsConfig,
    step: u32,
) -> Outcome {
    let p = state.position;
    if obstacles.iter().any(|o| o.overlaps_disc(p, dynamics.vehicle_radius)) {
        Outcome::Collision
    } else if p.y.abs() > course.half_width {
        Outcome::OutOfBounds
    } else if p.x >= course.length {
        Outcome::Completed
    } else if step >= dynamics.max_steps {
        Outcome::Timeout
    } else {
        Outcome::Running
    }
}

/// One step of the world: dynamics then classification at the new step index.
pub fn step(
    state: &VehicleState,
    command: &Command,
    obstacles: &[ObstacleBox],
    course: &CourseConfig,
    dynamics: &DynamicsConfig,
    step_index: u32,
) -> (VehicleState, StepOutcome) {
    let next = step_dynamics(state, command, dynamics);
    let index = step_index + 1;
    let classification = classify(&next, obstacles, course, dynamics, index);
    (next, StepOutcome { classification, step: index })
}

/// A course instance with its vehicle.
#[derive(Clone, Debug)]
pub struct World {
    pub course: CourseConfig,
    pub dynamics: DynamicsConfig,
    obstacles: Vec<ObstacleBox>,
    state: VehicleState,
    step: u32,
    outcome: Outcome,
}

impl World {
    /// Fresh course from `course.seed` with the vehicle at the origin facing +x.
    pub fn new(course: CourseConfig, dynamics: DynamicsConfig) -> Result<Self> {
        let obstacles = generate_course(&course)?;
        Ok(Self::with_obstacles(course, dynamics, obstacles, VehicleState::default()))
    }

    pub fn with_obstacles(
        course: CourseConfig,
        dynamics: DynamicsConfig,
        obstacles: Vec<ObstacleBox>,
        state: VehicleState,
    ) -> Self {
        let outcome = classify(&state, &obstacles, &course, &dynamics, 0);
        Self { course, dynamics, obstacles, state, step: 0, outcome }
    }

    pub fn obstacles(&self) -> &[ObstacleBox] {
        &self.obstacles
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn step_index(&self) -> u32 {
        self.step
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_running(&self) -> bool {
        self.outcome == Outcome::Running
    }

    pub fn step(&mut self, command: &Command) -> Result<StepOutcome> {
        if self.outcome.is_terminal() {
            return Err(Error::Terminated(self.outcome.label().to_string()));
        }
        let (next, out) = step(&self.state, command, &self.obstacles, &self.course, &self.dynamics, self.step);
        self.state = next;
        self.step = out.step;
        self.outcome = out.classification;
        Ok(out)
    }

    pub fn step_action(&mut self, action: Action) -> Result<StepOutcome> {
        let cmd = apply_action(action, &self.state);
        self.step(&cmd)
    }
}

pub const KINEMATIC_LEN: usize = 16;

/// `(p_y, v_x, v_y, v_z, a_x, a_y, a_z, roll, pitch, yaw, roll rate, pitch
/// rate, yaw rate, roll accel, pitch accel, yaw accel)`. Altitude is fixed so
/// the vertical and roll/pitch channels are zero before noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicEstimate(pub [f64; KINEMATIC_LEN]);

impl KinematicEstimate {
    pub fn exact(state: &VehicleState) -> Self {
        let mut k = [0.0; KINEMATIC_LEN];
        k[0] = state.position.y;
        k[1] = state.velocity.x;
        k[2] = state.velocity.y;
        k[4] = state.acceleration.x;
        k[5] = state.acceleration.y;
        k[9] = state.yaw;
        k[12] = state.yaw_rate;
        k[15] = state.yaw_acceleration;
        Self(k)
    }
}

/// Per-channel standard deviation of additive kinematic noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicNoise {
    pub sigma: [f64; KINEMATIC_LEN],
}

impl KinematicNoise {
    pub fn uniform(sigma: f64) -> Self {
        Self { sigma: [sigma; KINEMATIC_LEN] }
    }

    pub fn none() -> Self {
        Self::uniform(0.0)
    }
}

impl Default for KinematicNoise {
    fn default() -> Self {
        Self::uniform(0.01)
    }
}

pub fn kinematic_estimate(state: &VehicleState, noise: &KinematicNoise, rng: &mut Rng) -> KinematicEstimate {
    let mut k = KinematicEstimate::exact(state);
    for (v, &s) in k.0.iter_mut().zip(&noise.sigma) {
        if s > 0.0 {
            *v += Normal::new(0.0, s).expect("finite sigma").sample(rng);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_course_is_rejected() {
        let cfg = CourseConfig { obstacle_count: 7, ..CourseConfig::default() };
        assert!(matches!(generate_course(&cfg), Err(Error::Config(_))));
        let cfg = CourseConfig { obstacle_width: 13.0, ..CourseConfig::default() };
        assert!(generate_course(&cfg).is_err());
    }

    #[test]
    fn terminal_world_rejects_steps() {
        let course = CourseConfig { obstacle_count: 0, ..CourseConfig::default() };
        let mut w = World::with_obstacles(course, DynamicsConfig::default(), vec![], VehicleState::at(0.0, 5.95, 0.0));
        let out = w.step(&Command::hold(Vec2::new(0.0, 3.0))).unwrap();
        assert_eq!(out.classification, Outcome::OutOfBounds);
        assert!(matches!(w.step(&Command::HOVER), Err(Error::Terminated(_))));
    }

    #[test]
    fn reverse_holds_yaw() {
        let s = VehicleState::at(0.0, 0.0, 0.4);
        let next = step_dynamics(&s, &apply_action(Action::Reverse, &s), &DynamicsConfig::default());
        assert_eq!(next.yaw, s.yaw);
    }
}
