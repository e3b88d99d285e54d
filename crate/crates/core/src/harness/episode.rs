use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::arbiter::{episode_step, ActionPolicy, ArbiterState, CollisionGate, Stack, StraightLine};
use crate::collision_net::CollisionNet;
use crate::contingency::ContingencyKind;
use crate::depth_net::DepthNet;
use crate::error::{Error, Result};
use crate::observe::{DepthSource, Observer};
use crate::policy_net::QNetwork;
use crate::record::{ActionSource, EpisodeRecord};
use crate::world::{CourseConfig, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerSpec {
    HybridAstar,
    HybridExpert,
    RlOnly,
    ExpertOnly,
}

impl ControllerSpec {
    pub const ALL: [ControllerSpec; 4] =
        [ControllerSpec::HybridAstar, ControllerSpec::HybridExpert, ControllerSpec::RlOnly, ControllerSpec::ExpertOnly];

    pub fn label(self) -> &'static str {
        match self {
            ControllerSpec::HybridAstar => "hybrid-astar",
            ControllerSpec::HybridExpert => "hybrid-expert",
            ControllerSpec::RlOnly => "rl-only",
            ControllerSpec::ExpertOnly => "expert-only",
        }
    }

    /// Column heading in the results table.
    pub fn title(self) -> &'static str {
        match self {
            ControllerSpec::HybridAstar => "Hybrid (A*)",
            ControllerSpec::HybridExpert => "Hybrid (expert)",
            ControllerSpec::RlOnly => "RL policy",
            ControllerSpec::ExpertOnly => "Expert Only",
        }
    }

    pub fn contingency(self) -> ContingencyKind {
        match self {
            ControllerSpec::HybridAstar => ContingencyKind::Astar,
            ControllerSpec::HybridExpert | ControllerSpec::ExpertOnly => ContingencyKind::Expert,
            ControllerSpec::RlOnly => ContingencyKind::None,
        }
    }

    pub fn uses_policy(self) -> bool {
        self != ControllerSpec::ExpertOnly
    }
}

impl fmt::Display for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ControllerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::config(format!("unknown controller '{s}' (expected hybrid-expert, hybrid-astar, rl-only or expert-only)")))
    }
}

/// Trained networks available to the controllers.
#[derive(Clone, Default)]
pub struct Networks {
    pub depth: Option<Arc<DepthNet>>,
    pub policy: Option<Arc<QNetwork>>,
    pub collision: Option<Arc<CollisionNet>>,
    pub straight_collision: Option<Arc<CollisionNet>>,
}

impl Networks {
    /// Loads what `spec` needs from the configured checkpoint paths under `out`.
    pub fn load_for(spec: ControllerSpec, config: &Config, out: &std::path::Path) -> Result<Self> {
        let p = &config.paths;
        let mut nets = Networks::default();
        if config.observation.depth_source == DepthSource::Network {
            nets.depth = Some(Arc::new(DepthNet::load(config.depth.net.clone(), &out.join(&p.depth_checkpoint))?));
        }
        if spec.uses_policy() {
            nets.policy = Some(Arc::new(QNetwork::load(config.policy.net.clone(), &out.join(&p.policy_checkpoint))?));
        }
        match spec {
            ControllerSpec::HybridAstar | ControllerSpec::HybridExpert => {
                nets.collision =
                    Some(Arc::new(CollisionNet::load(config.collision.net.clone(), &out.join(&p.collision_checkpoint))?));
            }
            ControllerSpec::ExpertOnly => {
                let path = out.join(&p.straight_collision_checkpoint);
                nets.straight_collision = Some(Arc::new(CollisionNet::load(config.collision.net.clone(), &path)?));
            }
            ControllerSpec::RlOnly => {}
        }
        Ok(nets)
    }

    pub fn observer(&self, config: &Config) -> Result<Observer> {
        Observer::new(config.observation.clone(), self.depth.clone())
    }
}

/// Per-episode switches beyond the controller choice.
#[derive(Clone, Copy, Default)]
pub struct EpisodeOptions<'a> {
    /// Replaces the trained collision network.
    pub gate: Option<&'a (dyn CollisionGate + Sync)>,
    pub log_observations: bool,
}

pub fn episode_course(config: &Config, seed: u64) -> CourseConfig {
    CourseConfig { seed, ..config.course.clone() }
}

/// Fresh course from `seed`, vehicle at the origin, run to termination.
pub fn run_episode(spec: ControllerSpec, seed: u64, config: &Config, nets: &Networks, opts: EpisodeOptions) -> Result<EpisodeRecord> {
    let observer = nets.observer(config)?;
    let missing = |what: &str| Error::config(format!("{what} is required by {spec}"));
    let straight = StraightLine;
    let (policy, source): (&dyn ActionPolicy, ActionSource) = if spec.uses_policy() {
        (nets.policy.as_deref().ok_or_else(|| missing("a policy network"))?, ActionSource::Rl)
    } else {
        (&straight, ActionSource::StraightLine)
    };
    let gate: Option<&dyn CollisionGate> = match (opts.gate, spec) {
        (Some(g), _) => Some(g as &dyn CollisionGate),
        (None, ControllerSpec::RlOnly) => None,
        (None, ControllerSpec::ExpertOnly) => {
            Some(nets.straight_collision.as_deref().ok_or_else(|| missing("a straight-line collision network"))?)
        }
        (None, _) => Some(nets.collision.as_deref().ok_or_else(|| missing("a collision network"))?),
    };
    let stack = Stack {
        observer: &observer,
        policy,
        policy_source: source,
        gate,
        contingency: &config.contingency,
        log_observations: opts.log_observations,
    };
    let course = episode_course(config, seed);
    let mut world = World::new(course.clone(), config.dynamics.clone())?;
    let mut state = ArbiterState::new(&config.arbiter, spec.contingency())?;
    let mut record = EpisodeRecord::new(spec.label(), seed, course, *world.state());
    record.outcome = world.outcome();
    while world.is_running() {
        episode_step(&mut world, &stack, &mut state, &mut record, seed)?;
    }
    Ok(record)
}
