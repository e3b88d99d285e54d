use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::collision_net::{CollisionNet, CollisionNetConfig, CollisionSample};
use crate::depth_net::{DepthNet, DepthNetConfig};
use crate::error::Result;
use crate::nn::{gradient_check_report, Activation, GradCheckOptions, GradCheckReport, LossSpec, Mlp};
use crate::perception::RgbImage;
use crate::policy_net::{PolicyNetConfig, QNetwork, QSample};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub network: String,
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckEntry {
    fn of(network: &str, r: GradCheckReport, tolerance: f64) -> Self {
        Self {
            network: network.into(),
            max_relative_error: r.max_relative_error,
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
            tolerance,
        }
    }

    /// Under tolerance, with at most 1 % of coordinates skipped at kinks.
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance && self.checked > 0 && self.skipped_kinks * 100 <= self.checked
    }
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut seed::Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Finite-difference checks on every network family: the 1/8-width depth
/// CNN, the full collision MLP, the dueling Q network with training noise
/// and a dense-only MLP.
pub fn gradcheck_suite(seed_: u64) -> Result<Vec<GradCheckEntry>> {
    let mut rng = seed::rng_for(seed_, "gradcheck");
    let mut out = Vec::new();

    let cfg = DepthNetConfig { input_height: 18, input_width: 32, channel_divisor: 8, ..DepthNetConfig::default() };
    let mut depth = DepthNet::new(cfg, seed::derive(seed_, 1))?;
    let xs: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let data = (0..18 * 32 * 3).map(|_| rng.random::<f32>()).collect();
            RgbImage { height: 18, width: 32, data }.to_network_input()
        })
        .collect();
    let ys: Vec<Vec<f64>> = (0..2).map(|_| uniform(4, -1.0, 1.0, &mut rng)).collect();
    let r = gradient_check_report(&mut depth, &xs, &ys, LossSpec::Huber { delta: 1.0 }, GradCheckOptions::default())?;
    out.push(GradCheckEntry::of("depth-cnn-eighth-width", r, 1e-3));

    let mut coll = CollisionNet::new(CollisionNetConfig::default(), seed::derive(seed_, 2))?;
    let samples: Vec<CollisionSample> = (0..4)
        .map(|i| CollisionSample { obs: uniform(160, -1.0, 1.0, &mut rng), action: i % 4, positive: i % 2 == 0 })
        .collect();
    let targets: Vec<bool> = samples.iter().map(|s| s.positive).collect();
    let opts = GradCheckOptions { step: 1e-5, max_coordinates: 4000, sample_seed: seed_ };
    let r = gradient_check_report(&mut coll, &samples, &targets, LossSpec::BinaryCrossEntropy, opts)?;
    out.push(GradCheckEntry::of("collision-mlp", r, 1e-3));

    let mut q = QNetwork::new(PolicyNetConfig::default(), seed::derive(seed_, 3))?;
    q.train_noise = Some(seed::derive(seed_, 4));
    let qs: Vec<QSample> = (0..3).map(|i| QSample { obs: uniform(160, -1.0, 1.0, &mut rng), action: i % 4 }).collect();
    let qy = uniform(3, -1.0, 1.0, &mut rng);
    let r = gradient_check_report(&mut q, &qs, &qy, LossSpec::SquaredTd, GradCheckOptions::default())?;
    out.push(GradCheckEntry::of("dueling-q", r, 1e-3));

    let mut mlp = Mlp::new(&[6, 10, 8, 3], Activation::leaky(), seed::derive(seed_, 5))?;
    let mx: Vec<Vec<f64>> = (0..3).map(|_| uniform(6, -1.0, 1.0, &mut rng)).collect();
    let my: Vec<Vec<f64>> = (0..3).map(|_| uniform(3, -2.0, 2.0, &mut rng)).collect();
    let r = gradient_check_report(&mut mlp, &mx, &my, LossSpec::Huber { delta: 1.0 }, GradCheckOptions::default())?;
    out.push(GradCheckEntry::of("dense-mlp", r, 1e-4));
    Ok(out)
}
