use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arbiter::ArbiterConfig;
use crate::collision_net::{CollisionNetConfig, CollisionSchedule};
use crate::contingency::ContingencyConfig;
use crate::depth_net::{DepthNetConfig, DepthSchedule};
use crate::error::{Error, Result};
use crate::observe::ObservationConfig;
use crate::policy_net::{DqnConfig, PolicyNetConfig};
use crate::record::hex;
use crate::world::{CourseConfig, DynamicsConfig};

/// Environment variable naming the output directory.
pub const OUTPUT_DIR_VAR: &str = "HYBRID_AVOID_OUT";

pub fn output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_VAR).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthSection {
    pub net: DepthNetConfig,
    pub schedule: DepthSchedule,
    pub pairs: usize,
    pub data_seed: u64,
    /// Poses sampled per course by the meander pilot.
    pub poses_per_course: usize,
}

impl Default for DepthSection {
    fn default() -> Self {
        Self {
            net: DepthNetConfig::default(),
            schedule: DepthSchedule::default(),
            pairs: 2000,
            data_seed: 101,
            poses_per_course: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub net: PolicyNetConfig,
    pub dqn: DqnConfig,
    pub init_seed: u64,
    pub course_seed: u64,
    pub noise_seed: u64,
    /// Held-out courses rated at each selection point.
    pub select_episodes: usize,
    pub select_seed: u64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            net: PolicyNetConfig::default(),
            dqn: DqnConfig { select_every: 10_000, ..DqnConfig::default() },
            init_seed: 0,
            course_seed: 0,
            noise_seed: 0,
            select_episodes: 30,
            select_seed: 303,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionSection {
    pub net: CollisionNetConfig,
    pub schedule: CollisionSchedule,
    /// Policy rollouts logged for the hybrid gate.
    pub episodes: usize,
    /// Straight-line flights logged for the expert-only gate.
    pub straight_episodes: usize,
    pub data_seed: u64,
    pub init_seed: u64,
    pub validation_batches: usize,
    pub min_frames: usize,
}

impl Default for CollisionSection {
    fn default() -> Self {
        Self {
            net: CollisionNetConfig::default(),
            schedule: CollisionSchedule::default(),
            episodes: 1000,
            straight_episodes: 400,
            data_seed: 202,
            init_seed: 5,
            validation_batches: 200,
            min_frames: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub episodes: usize,
    pub base_seed: u64,
    /// Full episode records kept per controller for plots and replay.
    pub keep_records: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { episodes: 300, base_seed: 1_000_000, keep_records: 12 }
    }
}

/// Artifact locations relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub depth_data: PathBuf,
    pub depth_checkpoint: PathBuf,
    pub policy_checkpoint: PathBuf,
    pub collision_data: PathBuf,
    pub collision_checkpoint: PathBuf,
    pub straight_collision_data: PathBuf,
    pub straight_collision_checkpoint: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            depth_data: "depth/data".into(),
            depth_checkpoint: "depth/net.bin".into(),
            policy_checkpoint: "policy/net.bin".into(),
            collision_data: "collision/data".into(),
            collision_checkpoint: "collision/net.bin".into(),
            straight_collision_data: "collision-straight/data".into(),
            straight_collision_checkpoint: "collision-straight/net.bin".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub course: CourseConfig,
    pub dynamics: DynamicsConfig,
    pub observation: ObservationConfig,
    pub depth: DepthSection,
    pub policy: PolicySection,
    pub collision: CollisionSection,
    pub contingency: ContingencyConfig,
    pub arbiter: ArbiterConfig,
    pub evaluation: EvaluationSection,
    pub paths: Paths,
    /// Worker threads; 0 uses the pool default. Excluded from the hash.
    pub workers: usize,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.course.validate()?;
        self.observation.perception.camera.validate()?;
        self.policy.dqn.validate()?;
        self.collision.net.validate()?;
        self.contingency.validate()?;
        self.arbiter.validate()?;
        if self.evaluation.episodes == 0 {
            return Err(Error::config("evaluation needs at least one episode"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        digest(&Self { workers: 0, ..self.clone() })
    }
}

/// Hex SHA-256 of any serializable value's JSON encoding.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    hex(&Sha256::digest(&json))
}
