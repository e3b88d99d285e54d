//! Per-episode logs shared by the arbiter and the evaluation harness.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contingency::{ContingencyKind, PlannerDump};
use crate::error::Result;
use crate::contingency::Lateral;
use crate::world::{Command, CourseConfig, Outcome, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSource {
    Rl,
    StraightLine,
    Expert,
    Astar,
}

impl ActionSource {
    pub fn is_contingency(self) -> bool {
        matches!(self, ActionSource::Expert | ActionSource::Astar)
    }

    pub fn of_contingency(kind: ContingencyKind) -> Option<Self> {
        match kind {
            ContingencyKind::Expert => Some(ActionSource::Expert),
            ContingencyKind::Astar => Some(ActionSource::Astar),
            ContingencyKind::None => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ActionSource::Rl => "rl",
            ActionSource::StraightLine => "straight-line",
            ActionSource::Expert => "expert",
            ActionSource::Astar => "astar",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step index after the command was applied.
    pub step: u32,
    pub source: ActionSource,
    pub action: Option<usize>,
    pub command: Command,
    pub probability: Option<f64>,
    pub state: VehicleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    /// Step index at which control was handed over.
    pub step: u32,
    pub probability: f64,
    pub action: usize,
    pub kind: ContingencyKind,
    pub duration: u32,
    pub expert_direction: Option<Lateral>,
    pub plans: Vec<PlannerDump>,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub controller: String,
    pub seed: u64,
    pub course: CourseConfig,
    pub initial: VehicleState,
    pub steps: Vec<StepRecord>,
    pub engagements: Vec<EngagementEvent>,
    pub outcome: Outcome,
    pub step_count: u32,
}

impl EpisodeRecord {
    pub fn new(controller: &str, seed: u64, course: CourseConfig, initial: VehicleState) -> Self {
        Self {
            controller: controller.to_string(),
            seed,
            course,
            initial,
            steps: vec![],
            engagements: vec![],
            outcome: Outcome::Running,
            step_count: 0,
        }
    }

    /// Source of the command whose step ended in a collision.
    pub fn collision_source(&self) -> Option<ActionSource> {
        if self.outcome != Outcome::Collision {
            return None;
        }
        self.steps.last().map(|s| s.source)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_json()?.as_bytes())))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
