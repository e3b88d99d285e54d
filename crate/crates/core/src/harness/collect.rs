use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::config::Config;
use super::episode::episode_course;
use crate::collision_net::{label_dataset, CollisionDataset, CollisionSample, LoggedFrame};
use crate::error::Result;
use crate::observe::Observer;
use crate::par;
use crate::perception::{observe_reduced, render_rgb, DepthDataset, Pose};
use crate::policy_net::QNetwork;
use crate::seed;
use crate::world::{generate_course, Action, Outcome, Vec2, VehicleState, World};

/// Pose of the scripted meander pilot: a sinusoidal lateral weave whose
/// heading follows the path tangent plus a little jitter.
pub fn meander_pose(rng: &mut seed::Rng, length: f64, half_width: f64) -> Pose {
    let amp = rng.random_range(0.5..half_width - 0.5);
    let wavelength = rng.random_range(15.0..45.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let x = rng.random_range(0.0..length - 5.0);
    let k = std::f64::consts::TAU / wavelength;
    let y = amp * (k * x + phase).sin();
    let slope = amp * k * (k * x + phase).cos();
    let jitter = Normal::new(0.0, 0.1).expect("valid sigma").sample(rng);
    Pose::new(x, y, slope.atan() + jitter)
}

/// RGB frames paired with clean reduced depth, sampled along meander flights.
pub fn collect_depth_data(config: &Config) -> Result<DepthDataset> {
    let d = &config.depth;
    let cam = &config.observation.perception.camera;
    let (rows, cols) = cam.reduced_shape();
    let radius = config.dynamics.vehicle_radius;
    let pairs = par::map_indexed(d.pairs, |k| -> Result<_> {
        let course_seed = seed::derive(d.data_seed, (k / d.poses_per_course.max(1)) as u64);
        let course = episode_course(config, course_seed);
        let obstacles = generate_course(&course)?;
        let mut rng = seed::rng_for(seed::derive(d.data_seed, k as u64), "meander");
        let pose = loop {
            let p = meander_pose(&mut rng, course.length, course.half_width);
            if obstacles.iter().all(|o| o.distance_to(Vec2::new(p.x, p.y)) > radius) {
                break p;
            }
        };
        let p = &config.observation.perception;
        Ok((render_rgb(&pose, &obstacles, &course, p)?, observe_reduced(&pose, &obstacles, &course, p)?))
    });
    let mut ds = DepthDataset::new(cam.height, cam.width, rows, cols, cam.far_clip, d.data_seed);
    for pair in pairs {
        let (img, map) = pair?;
        ds.push(&img, &map)?;
    }
    Ok(ds)
}

/// Runs one episode under `choose(obs, step)` and returns the logged frames,
/// the outcome and the final step index.
pub fn rollout(
    world: &mut World,
    observer: &Observer,
    noise_seed: u64,
    mut choose: impl FnMut(&[f64], u32) -> Result<usize>,
) -> Result<(Vec<LoggedFrame>, Outcome, u32)> {
    let mut frames = Vec::new();
    while world.is_running() {
        let step = world.step_index();
        let obs = observer.observe(world, seed::derive(noise_seed, step as u64))?;
        let action = choose(&obs.vector, step)?;
        world.step_action(Action::from_index(action).expect("policy returns a valid index"))?;
        frames.push(LoggedFrame { obs: obs.vector, action });
    }
    Ok((frames, world.outcome(), world.step_index()))
}

/// Greedy rating used for policy selection: completed held-out courses plus
/// the mean fraction of course length covered.
pub fn selection_score(config: &Config, observer: &Observer, policy: &QNetwork) -> Result<f64> {
    let p = &config.policy;
    let runs = par::map_indexed(p.select_episodes, |e| -> Result<(bool, f64)> {
        let s = seed::derive(p.select_seed, e as u64);
        let mut world = World::new(episode_course(config, s), config.dynamics.clone())?;
        let (_, outcome, _) = rollout(&mut world, observer, s, |obs, _| policy.act(obs, None))?;
        Ok((outcome == Outcome::Completed, (world.state().position.x / config.course.length).clamp(0.0, 1.0)))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let n = runs.len().max(1) as f64;
    Ok(runs.iter().map(|r| r.0 as u32 as f64).sum::<f64>() + runs.iter().map(|r| r.1).sum::<f64>() / n)
}

fn labeled(frames: Vec<LoggedFrame>, outcome: Outcome, last: u32, horizon: usize) -> Vec<CollisionSample> {
    let k = (outcome == Outcome::Collision).then_some(last as usize);
    label_dataset(&frames, k, horizon)
}

/// Policy rollouts without arbitration. The policy keeps its exploration
/// noise on so the log covers near-misses as well as clean runs.
pub fn collect_policy_collision_data(config: &Config, policy: &QNetwork) -> Result<CollisionDataset> {
    let c = &config.collision;
    let observer = Observer::new(config.observation.clone(), None)?;
    let episodes = par::map_indexed(c.episodes, |e| -> Result<_> {
        let s = seed::derive_str(seed::derive(c.data_seed, e as u64), "policy-rollout");
        let mut world = World::new(episode_course(config, s), config.dynamics.clone())?;
        let (frames, outcome, last) =
            rollout(&mut world, &observer, s, |obs, step| policy.act(obs, Some(seed::derive(s ^ 0x5eed, step as u64))))?;
        Ok(labeled(frames, outcome, last, c.net.horizon))
    });
    gather(episodes, c.net.horizon, "policy rollouts with exploration noise")
}

/// Straight-ahead flights from random lateral starts, for the expert-only
/// gate.
pub fn collect_straight_collision_data(config: &Config) -> Result<CollisionDataset> {
    let c = &config.collision;
    let observer = Observer::new(config.observation.clone(), None)?;
    let forward = Action::Forward.index();
    let episodes = par::map_indexed(c.straight_episodes, |e| -> Result<_> {
        let s = seed::derive_str(seed::derive(c.data_seed, e as u64), "straight-rollout");
        let course = episode_course(config, s);
        let obstacles = generate_course(&course)?;
        let lim = course.half_width - config.contingency.boundary_margin;
        let y = seed::rng(s).random_range(-lim..=lim);
        let start = VehicleState::at(0.0, y, 0.0);
        let mut world = World::with_obstacles(course, config.dynamics.clone(), obstacles, start);
        let (frames, outcome, last) = rollout(&mut world, &observer, s, |_, _| Ok(forward))?;
        Ok(labeled(frames, outcome, last, c.net.horizon))
    });
    gather(episodes, c.net.horizon, "straight-line flights from random lateral starts")
}

fn gather(episodes: Vec<Result<Vec<CollisionSample>>>, horizon: usize, provenance: &str) -> Result<CollisionDataset> {
    let mut ds = CollisionDataset { horizon, provenance: provenance.to_string(), ..CollisionDataset::default() };
    for (e, samples) in episodes.into_iter().enumerate() {
        ds.push_episode(e as u32, samples?);
    }
    Ok(ds)
}
