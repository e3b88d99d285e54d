//! Switching between the learned policy and a contingency pilot.

use serde::{Deserialize, Serialize};

use crate::collision_net::{triggers, CollisionNet};
use crate::contingency::{
    run_astar_policy, run_expert_policy, ContingencyConfig, ContingencyKind, ContingencyLog, DepthSensor, ObserverSensor,
};
use crate::error::{Error, Result};
use crate::observe::Observer;
use crate::policy_net::QNetwork;
use crate::record::{ActionSource, EngagementEvent, EpisodeRecord, StepRecord};
use crate::seed;
use crate::world::{apply_action, Action, StepOutcome, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbiterConfig {
    pub threshold: f64,
    /// Policy steps after a contingency returns during which the gate is
    /// not consulted.
    pub cooldown_steps: u32,
}

impl Default for ArbiterConfig {
    fn default() -> Self {
        Self { threshold: 0.5, cooldown_steps: 0 }
    }
}

impl ArbiterConfig {
    /// A threshold of 1 disables the gate.
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config("arbiter threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rl,
    ContingencyActive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbiterState {
    pub mode: Mode,
    pub threshold: f64,
    pub kind: ContingencyKind,
    pub engagements: u32,
    pub cooldown: u32,
    cooldown_steps: u32,
}

impl ArbiterState {
    pub fn new(config: &ArbiterConfig, kind: ContingencyKind) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            mode: Mode::Rl,
            threshold: config.threshold,
            kind,
            engagements: 0,
            cooldown: 0,
            cooldown_steps: config.cooldown_steps,
        })
    }
}

/// Chooses a discrete action from an observation vector.
pub trait ActionPolicy {
    fn choose(&self, obs: &[f64]) -> Result<usize>;
}

impl ActionPolicy for QNetwork {
    fn choose(&self, obs: &[f64]) -> Result<usize> {
        self.act(obs, None)
    }
}

/// Always flies straight ahead.
#[derive(Clone, Copy, Debug, Default)]
pub struct StraightLine;

impl ActionPolicy for StraightLine {
    fn choose(&self, _: &[f64]) -> Result<usize> {
        Ok(Action::Forward.index())
    }
}

/// Collision probability for an observation and the action about to be taken.
pub trait CollisionGate {
    fn probability(&self, obs: &[f64], action: usize) -> Result<f64>;
}

impl CollisionGate for CollisionNet {
    fn probability(&self, obs: &[f64], action: usize) -> Result<f64> {
        self.predict_collision(obs, action)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantGate(pub f64);

impl CollisionGate for ConstantGate {
    fn probability(&self, _: &[f64], _: usize) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: usize,
    pub probability: Option<f64>,
    pub engage: bool,
}

pub fn decide(obs: &[f64], policy: &dyn ActionPolicy, gate: Option<&dyn CollisionGate>, state: &ArbiterState) -> Result<Decision> {
    if state.mode != Mode::Rl {
        return Err(Error::config("decide called while a contingency holds control"));
    }
    let action = policy.choose(obs)?;
    let Some(gate) = gate.filter(|_| state.kind != ContingencyKind::None && state.cooldown == 0) else {
        return Ok(Decision { action, probability: None, engage: false });
    };
    let p = gate.probability(obs, action)?;
    Ok(Decision { action, probability: Some(p), engage: triggers(p, state.threshold) })
}

/// Hands the world to the configured contingency and takes it back.
pub fn run_contingency(
    world: &mut World,
    sensor: &mut dyn DepthSensor,
    config: &ContingencyConfig,
    state: &mut ArbiterState,
) -> Result<ContingencyLog> {
    state.mode = Mode::ContingencyActive;
    state.engagements += 1;
    let log = match state.kind {
        ContingencyKind::Expert => run_expert_policy(world, sensor, config),
        ContingencyKind::Astar => run_astar_policy(world, sensor, config),
        ContingencyKind::None => Err(Error::config("no contingency configured")),
    };
    state.mode = Mode::Rl;
    state.cooldown = state.cooldown_steps;
    log
}

/// Bookkeeping after a policy step.
pub fn policy_step_taken(state: &mut ArbiterState) {
    state.cooldown = state.cooldown.saturating_sub(1);
}

/// Everything one arbitration step needs besides the world and state.
pub struct Stack<'a> {
    pub observer: &'a Observer,
    pub policy: &'a dyn ActionPolicy,
    pub policy_source: ActionSource,
    pub gate: Option<&'a dyn CollisionGate>,
    pub contingency: &'a ContingencyConfig,
    pub log_observations: bool,
}

/// One arbitration point: a single policy step, or a whole contingency
/// segment when the gate fires. Observation noise is keyed by `seed` and the
/// step index, so equal seeds give equal observations across controllers.
pub fn episode_step(world: &mut World, stack: &Stack, state: &mut ArbiterState, record: &mut EpisodeRecord, seed_: u64) -> Result<StepOutcome> {
    let obs = stack.observer.observe(world, seed::derive(seed_, world.step_index() as u64))?;
    let d = decide(&obs.vector, stack.policy, stack.gate, state)?;
    if d.engage {
        let start = world.step_index();
        let mut sensor = ObserverSensor::new(stack.observer, seed::derive_str(seed_, "contingency"));
        let log = run_contingency(world, &mut sensor, stack.contingency, state)?;
        let source = ActionSource::of_contingency(log.kind).expect("engaged contingency has a kind");
        record.steps.extend(log.steps.iter().map(|s| StepRecord {
            step: s.outcome.step,
            source,
            action: None,
            command: s.command,
            probability: None,
            state: s.state,
            observation: None,
        }));
        record.engagements.push(EngagementEvent {
            step: start,
            probability: d.probability.unwrap_or(1.0),
            action: d.action,
            kind: log.kind,
            duration: world.step_index() - start,
            expert_direction: log.expert_direction,
            plans: log.attempts,
            budget_exhausted: log.budget_exhausted,
        });
    } else {
        let action = Action::from_index(d.action).ok_or_else(|| Error::data("policy chose an invalid action"))?;
        let command = apply_action(action, world.state());
        let out = world.step(&command)?;
        record.steps.push(StepRecord {
            step: out.step,
            source: stack.policy_source,
            action: Some(d.action),
            command,
            probability: d.probability,
            state: *world.state(),
            observation: stack.log_observations.then(|| obs.vector.clone()),
        });
        policy_step_taken(state);
    }
    record.outcome = world.outcome();
    record.step_count = world.step_index();
    Ok(StepOutcome { classification: world.outcome(), step: world.step_index() })
}
