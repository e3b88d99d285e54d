//! Policy observation: noisy reduced depth plus scaled kinematics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::depth_net::DepthNet;
use crate::error::{Error, Result};
use crate::perception::{
    apply_depth_noise, denormalize, observe_reduced, render_rgb, DepthMap, PerceptionConfig, Pose, REDUCED_LEN,
};
use crate::seed;
use crate::world::{kinematic_estimate, KinematicEstimate, KinematicNoise, World, KINEMATIC_LEN};

pub const OBSERVATION_LEN: usize = REDUCED_LEN + KINEMATIC_LEN;

/// Fixed divisors bringing each kinematic channel to roughly unit range.
pub const KINEMATIC_SCALE: [f64; KINEMATIC_LEN] =
    [6.0, 3.0, 3.0, 3.0, 10.0, 10.0, 10.0, 1.0, 1.0, 3.2, 2.0, 2.0, 2.0, 20.0, 20.0, 20.0];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthSource {
    /// Ray-cast ground truth with calibrated additive noise.
    #[default]
    OracleNoise,
    /// Ray-cast ground truth without noise.
    Oracle,
    /// Trained depth network on the rendered RGB frame.
    Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub perception: PerceptionConfig,
    pub kinematic_noise: KinematicNoise,
    pub depth_source: DepthSource,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            perception: PerceptionConfig::default(),
            kinematic_noise: KinematicNoise::default(),
            depth_source: DepthSource::OracleNoise,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Reduced normalized depth map as delivered to the networks.
    pub depth: DepthMap,
    pub kinematics: KinematicEstimate,
    pub vector: Vec<f64>,
}

impl Observation {
    pub fn assemble(depth: DepthMap, kinematics: KinematicEstimate) -> Result<Self> {
        if depth.values.len() != REDUCED_LEN {
            return Err(Error::data(format!("observation depth has {} cells", depth.values.len())));
        }
        let mut vector = Vec::with_capacity(OBSERVATION_LEN);
        vector.extend_from_slice(&depth.values);
        vector.extend(kinematics.0.iter().zip(KINEMATIC_SCALE).map(|(v, s)| v / s));
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite observation"));
        }
        Ok(Self { depth, kinematics, vector })
    }

    pub fn depth_meters(&self, far_clip: f64) -> Result<DepthMap> {
        denormalize(&self.depth, far_clip)
    }
}

/// Builds observations for one world; stateless apart from the shared
/// configuration and optional depth network.
#[derive(Clone, Debug)]
pub struct Observer {
    pub config: ObservationConfig,
    depth_net: Option<Arc<DepthNet>>,
}

impl Observer {
    pub fn new(config: ObservationConfig, depth_net: Option<Arc<DepthNet>>) -> Result<Self> {
        if config.depth_source == DepthSource::Network && depth_net.is_none() {
            return Err(Error::config("network depth source requires a depth network checkpoint"));
        }
        config.perception.camera.validate()?;
        Ok(Self { config, depth_net })
    }

    pub fn far_clip(&self) -> f64 {
        self.config.perception.camera.far_clip
    }

    /// Depth channel only; `noise_seed` drives every stochastic element.
    pub fn sense_depth(&self, world: &World, noise_seed: u64) -> Result<DepthMap> {
        let pose = Pose::from(world.state());
        let p = &self.config.perception;
        match self.config.depth_source {
            DepthSource::Oracle => observe_reduced(&pose, world.obstacles(), &world.course, p),
            DepthSource::OracleNoise => {
                let clean = observe_reduced(&pose, world.obstacles(), &world.course, p)?;
                apply_depth_noise(&clean, p.depth_noise_sigma, seed::derive_str(noise_seed, "depth"))
            }
            DepthSource::Network => {
                let net = self.depth_net.as_ref().expect("checked at construction");
                let img = render_rgb(&pose, world.obstacles(), &world.course, p)?;
                let mut map = net.predict(&img)?.map;
                map.values.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
                Ok(map)
            }
        }
    }

    pub fn observe(&self, world: &World, noise_seed: u64) -> Result<Observation> {
        let depth = self.sense_depth(world, noise_seed)?;
        let mut rng = seed::rng_for(noise_seed, "kinematics");
        let kin = kinematic_estimate(world.state(), &self.config.kinematic_noise, &mut rng);
        Observation::assemble(depth, kin)
    }
}
