//! Synthetic camera: raycast depth, flat-shaded RGB, block-min pooling,
//! normalization and the additive depth-noise model.

mod dataset;
mod render;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use dataset::{DatasetIndex, DepthDataset};
pub use render::{obstacle_color, render_depth_full, render_rgb, Pose};

use crate::error::{Error, Result};
use crate::seed;

pub const POOL: usize = 16;
pub const REDUCED_ROWS: usize = 9;
pub const REDUCED_COLS: usize = 16;
pub const REDUCED_LEN: usize = REDUCED_ROWS * REDUCED_COLS;

/// σ giving a mean absolute error of 0.147 for zero-mean Gaussian noise.
pub fn calibrated_noise_sigma() -> f64 {
    0.147 * (std::f64::consts::PI / 2.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub hfov: f64,
    pub height: usize,
    pub width: usize,
    pub far_clip: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { hfov: std::f64::consts::FRAC_PI_2, height: 144, width: 256, far_clip: 100.0 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(Error::config("camera field of view must lie in (0, π)"));
        }
        if self.height == 0 || self.width == 0 || self.height % POOL != 0 || self.width % POOL != 0 {
            return Err(Error::config(format!(
                "image {}×{} is not divisible into {POOL}×{POOL} blocks",
                self.height, self.width
            )));
        }
        if !(self.far_clip > 0.0 && self.far_clip.is_finite()) {
            return Err(Error::config("far clip must be positive"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov).tan()
    }

    pub fn vfov(&self) -> f64 {
        2.0 * (0.5 * self.height as f64 / self.focal()).atan()
    }

    pub fn reduced_shape(&self) -> (usize, usize) {
        (self.height / POOL, self.width / POOL)
    }
}

/// Scene and rendering options beyond the pinhole model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub camera: CameraModel,
    pub walls: bool,
    /// Distance from the track edge to each side wall.
    pub wall_margin: f64,
    pub wall_height: f64,
    /// Whether ground hits report their range in the depth channel; when off
    /// the ground still occludes but reads as far clip.
    pub ground_in_depth: bool,
    pub color_seed: u64,
    pub depth_noise_sigma: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            walls: true,
            wall_margin: 10.0,
            wall_height: 4.0,
            ground_in_depth: false,
            color_seed: 0,
            depth_noise_sigma: calibrated_noise_sigma(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Full,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthUnits {
    Meters,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub resolution: Resolution,
    pub units: DepthUnits,
}

impl DepthMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, resolution: Resolution, units: DepthUnits) -> Result<Self> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(Error::config(format!("{rows}×{cols} map with {} values", values.len())));
        }
        Ok(Self { rows, cols, values, resolution, units })
    }

    pub fn filled(rows: usize, cols: usize, v: f64, resolution: Resolution, units: DepthUnits) -> Self {
        Self { rows, cols, values: vec![v; rows * cols], resolution, units }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    /// HWC intensities in [0, 1].
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Intensities mapped to [−1, 1].
    pub fn to_network_input(&self) -> Vec<f64> {
        self.data.iter().map(|&v| 2.0 * v as f64 - 1.0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::data(format!("{} bytes for a {height}×{width} image", bytes.len())));
        }
        Ok(Self { height, width, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() })
    }
}

/// 16×16 block minimum.
pub fn min_pool(full: &DepthMap) -> Result<DepthMap> {
    if full.rows % POOL != 0 || full.cols % POOL != 0 {
        return Err(Error::config(format!("{}×{} map is not divisible by {POOL}", full.rows, full.cols)));
    }
    let (rows, cols) = (full.rows / POOL, full.cols / POOL);
    let mut out = vec![f64::INFINITY; rows * cols];
    for r in 0..full.rows {
        let line = &full.values[r * full.cols..(r + 1) * full.cols];
        let dst = &mut out[(r / POOL) * cols..(r / POOL + 1) * cols];
        for (block, cell) in line.chunks_exact(POOL).zip(dst.iter_mut()) {
            *cell = block.iter().copied().fold(*cell, f64::min);
        }
    }
    Ok(DepthMap { rows, cols, values: out, resolution: Resolution::Reduced, units: full.units })
}

/// Affine map `[0, far] → [−1, 1]`.
pub fn normalize(map: &DepthMap, far_clip: f64) -> Result<DepthMap> {
    if map.units != DepthUnits::Meters {
        return Err(Error::data("map is already normalized"));
    }
    if let Some(v) = map.values.iter().find(|v| !(0.0..=far_clip).contains(*v)) {
        return Err(Error::data(format!("depth {v} outside [0, {far_clip}]")));
    }
    let values = map.values.iter().map(|v| 2.0 * v / far_clip - 1.0).collect();
    Ok(DepthMap { values, units: DepthUnits::Normalized, ..map.clone() })
}

pub fn denormalize(map: &DepthMap, far_clip: f64) -> Result<DepthMap> {
    if map.units != DepthUnits::Normalized {
        return Err(Error::data("map is not normalized"));
    }
    if let Some(v) = map.values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::data(format!("normalized depth {v} outside [−1, 1]")));
    }
    let values = map.values.iter().map(|v| (v + 1.0) * 0.5 * far_clip).collect();
    Ok(DepthMap { values, units: DepthUnits::Meters, ..map.clone() })
}

/// Seeded i.i.d. Gaussian noise per cell, clamped to [−1, 1].
pub fn apply_depth_noise(map: &DepthMap, sigma: f64, seed_: u64) -> Result<DepthMap> {
    if map.units != DepthUnits::Normalized {
        return Err(Error::data("depth noise applies to normalized maps"));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::config(format!("noise σ: {e}")))?;
    let mut rng = seed::rng_for(seed_, "depth-noise");
    let values = map.values.iter().map(|v| (v + dist.sample(&mut rng)).clamp(-1.0, 1.0)).collect();
    Ok(DepthMap { values, ..map.clone() })
}

/// Ground-truth reduced normalized map as seen from `pose`.
pub fn observe_reduced(
    pose: &Pose,
    obstacles: &[crate::world::ObstacleBox],
    course: &crate::world::CourseConfig,
    config: &PerceptionConfig,
) -> Result<DepthMap> {
    let full = render_depth_full(pose, obstacles, course, config)?;
    normalize(&min_pool(&full)?, config.camera.far_clip)
}
