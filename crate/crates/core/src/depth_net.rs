//! Down-scaling depth CNN: a seven-layer stride ladder mapping an RGB frame to
//! a 1/16-resolution normalized depth map, Huber training and validation
//! metrics.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward_cached, fold_kinks, huber, huber_grad, train_step, Activation, AdamConfig, ConvCache, Layer,
    LossSpec, Model, NetworkParams,
};
use crate::perception::{DepthDataset, DepthMap, DepthUnits, Resolution, RgbImage};
use crate::{par, seed};

/// `(kernel, stride, output channels)` per layer.
pub const LADDER: [(usize, usize, usize); 7] =
    [(5, 2, 32), (5, 2, 64), (3, 2, 128), (3, 2, 256), (3, 1, 128), (3, 1, 32), (3, 1, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthNetConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Consecutive frames stacked on the channel axis; only 1 is supported.
    pub sequence_length: usize,
    pub huber_delta: f64,
    /// Divides every hidden channel count; 1 gives the full network.
    pub channel_divisor: usize,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        Self { input_height: 144, input_width: 256, sequence_length: 1, huber_delta: 1.0, channel_divisor: 1 }
    }
}

impl DepthNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length != 1 {
            return Err(Error::config("only single-frame depth input is supported"));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("depth input dimensions must be positive"));
        }
        if self.channel_divisor == 0 || !(self.huber_delta > 0.0) {
            return Err(Error::config("invalid depth network configuration"));
        }
        Ok(())
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.input_height.div_ceil(16), self.input_width.div_ceil(16))
    }
}

#[derive(Clone, Debug)]
pub struct DepthNet {
    pub config: DepthNetConfig,
    pub params: NetworkParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthPrediction {
    pub map: DepthMap,
    pub source: Option<usize>,
}

struct SampleTrace {
    caches: Vec<ConvCache>,
    output: Vec<f64>,
}

impl DepthNet {
    pub fn new(config: DepthNetConfig, seed_: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed_, "depth-net-init");
        let mut in_c = 3 * config.sequence_length;
        let mut layers = Vec::with_capacity(LADDER.len());
        for (i, &(k, s, c)) in LADDER.iter().enumerate() {
            let last = i + 1 == LADDER.len();
            let out_c = if last { c } else { (c / config.channel_divisor).max(1) };
            let act = if last { Activation::Identity } else { Activation::leaky() };
            layers.push(Layer::conv2d(in_c, out_c, k, s, act, &mut rng));
            in_c = out_c;
        }
        Ok(Self { config, params: NetworkParams::new(layers)? })
    }

    pub fn from_params(config: DepthNetConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        if !crate::nn::same_architecture(&reference.params, &params) {
            return Err(Error::config("checkpoint does not match the depth network layout"));
        }
        Ok(Self { config, params })
    }

    pub fn load(config: DepthNetConfig, path: &Path) -> Result<Self> {
        Self::from_params(config, NetworkParams::load(path)?)
    }

    fn input_len(&self) -> usize {
        self.config.input_height * self.config.input_width * 3 * self.config.sequence_length
    }

    fn trace(&self, input: &[f64]) -> Result<SampleTrace> {
        if input.len() != self.input_len() {
            return Err(Error::config(format!(
                "depth network expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let mut dims = (self.config.input_height, self.config.input_width, 3 * self.config.sequence_length);
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.params.len());
        for layer in self.params.layers() {
            let (y, cache) = conv_forward_cached(layer, &x, dims)?;
            dims = (cache.out_dims.0, cache.out_dims.1, layer.outputs());
            caches.push(cache);
            x = y;
        }
        Ok(SampleTrace { caches, output: x })
    }

    /// Forward pass on an image already mapped to [−1, 1].
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.output)
    }

    pub fn predict(&self, image: &RgbImage) -> Result<DepthPrediction> {
        if image.height != self.config.input_height || image.width != self.config.input_width {
            return Err(Error::config(format!(
                "depth network expects {}×{} images, got {}×{}",
                self.config.input_height, self.config.input_width, image.height, image.width
            )));
        }
        self.predict_input(&image.to_network_input(), None)
    }

    pub fn predict_input(&self, input: &[f64], source: Option<usize>) -> Result<DepthPrediction> {
        let (rows, cols) = self.config.output_shape();
        let values = self.forward(input)?;
        Ok(DepthPrediction { map: DepthMap::new(rows, cols, values, Resolution::Reduced, DepthUnits::Normalized)?, source })
    }
}

impl Model for DepthNet {
    type Input = Vec<f64>;
    type Target = Vec<f64>;

    fn params(&self) -> &NetworkParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    fn batch_loss(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: LossSpec, accumulate: bool) -> Result<f64> {
        let LossSpec::Huber { delta } = loss else {
            return Err(Error::config("depth network trains on the Huber loss"));
        };
        let (rows, cols) = self.config.output_shape();
        let cells = rows * cols;
        let scale = 1.0 / (inputs.len() * cells) as f64;
        let net = &*self;
        let per_sample = par::map_indexed(inputs.len(), |i| -> Result<(f64, Option<Vec<Vec<crate::nn::Tensor>>>)> {
            let t = &targets[i];
            if t.len() != cells {
                return Err(Error::data(format!("depth target has {} cells, expected {cells}", t.len())));
            }
            let tr = net.trace(&inputs[i])?;
            let sum: f64 = tr.output.iter().zip(t).map(|(p, y)| huber(p - y, delta)).sum();
            if !accumulate {
                return Ok((sum, None));
            }
            let mut grads = net.params.fresh_grads();
            let mut g: Vec<f64> = tr.output.iter().zip(t).map(|(p, y)| huber_grad(p - y, delta) * scale).collect();
            for (li, cache) in tr.caches.iter().enumerate().rev() {
                g = conv_backward(net.params.layer(li), cache, &g, &mut grads[li]);
            }
            Ok((sum, Some(grads)))
        });
        let mut total = 0.0;
        for r in per_sample {
            let (sum, grads) = r?;
            total += sum;
            if let Some(g) = grads {
                self.params.add_grads(&g);
            }
        }
        Ok(total * scale)
    }

    fn kink_signature(&mut self, inputs: &[Vec<f64>]) -> Result<Option<u64>> {
        let mut acc = 0;
        for x in inputs {
            for (layer, cache) in self.params.layers().iter().zip(self.trace(x)?.caches) {
                fold_kinks(&mut acc, layer.activation, &cache.pre);
            }
        }
        Ok(Some(acc))
    }
}

/// Mean Huber loss over the cells of one map.
pub fn huber_loss(pred: &DepthMap, target: &DepthMap, delta: f64) -> Result<f64> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::data("prediction and target shapes differ"));
    }
    let n = pred.values.len() as f64;
    Ok(pred.values.iter().zip(&target.values).map(|(p, t)| huber(p - t, delta)).sum::<f64>() / n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Sample mean and standard error (`s/√n`, unbiased `s`).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mae: MeanSe,
    pub mse: MeanSe,
    pub rmsle: MeanSe,
    pub huber: MeanSe,
}

/// Per-image `(mae, mse, rmsle, huber)`; predictions are clamped to [−1, 1]
/// inside the logarithm.
pub fn image_metrics(pred: &[f64], target: &[f64], delta: f64) -> [f64; 4] {
    let n = pred.len() as f64;
    let mut m = [0.0; 4];
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        m[0] += e.abs();
        m[1] += e * e;
        m[2] += ((2.0 - p.clamp(-1.0, 1.0)).ln() - (2.0 - t).ln()).powi(2);
        m[3] += huber(e, delta);
    }
    [m[0] / n, m[1] / n, (m[2] / n).sqrt(), m[3] / n]
}

pub fn metrics_from_pairs(pairs: &[(Vec<f64>, Vec<f64>)], delta: f64) -> DepthMetrics {
    let per: Vec<[f64; 4]> = pairs.iter().map(|(p, t)| image_metrics(p, t, delta)).collect();
    let col = |k: usize| MeanSe::of(&per.iter().map(|m| m[k]).collect::<Vec<_>>());
    DepthMetrics { mae: col(0), mse: col(1), rmsle: col(2), huber: col(3) }
}

pub fn validate_depth(net: &DepthNet, data: &DepthDataset, indices: &[usize]) -> Result<DepthMetrics> {
    let preds = par::map_indexed(indices.len(), |k| net.forward(&data.network_input(indices[k])));
    let mut pairs = Vec::with_capacity(indices.len());
    for (k, p) in preds.into_iter().enumerate() {
        pairs.push((p?, data.depth(indices[k]).values));
    }
    Ok(metrics_from_pairs(&pairs, net.config.huber_delta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for DepthSchedule {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            optimizer: AdamConfig { learning_rate: 3e-4, ..AdamConfig::default() },
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEpoch {
    pub epoch: usize,
    pub train_huber: f64,
    pub val_huber: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    pub val_rmsle: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthTrainingLog {
    pub epochs: Vec<DepthEpoch>,
    pub final_metrics: DepthMetrics,
}

impl DepthTrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_huber,val_huber,val_mae,val_mse,val_rmsle")?;
        for e in &self.epochs {
            writeln!(f, "{},{},{},{},{},{}", e.epoch, e.train_huber, e.val_huber, e.val_mae, e.val_mse, e.val_rmsle)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Mini-batch Huber training on the deterministic 90/10 split of `data`.
pub fn train_depth(
    data: &DepthDataset,
    net: &mut DepthNet,
    schedule: &DepthSchedule,
    mut on_epoch: impl FnMut(&DepthEpoch),
) -> Result<DepthTrainingLog> {
    if data.is_empty() {
        return Err(Error::data("depth dataset is empty"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let (mut train, val) = data.split_indices();
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("depth dataset too small for a train/validation split"));
    }
    let loss = LossSpec::Huber { delta: net.config.huber_delta };
    let mut rng = seed::rng_for(schedule.seed, "depth-shuffle");
    let mut log = DepthTrainingLog::default();
    for epoch in 1..=schedule.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in train.chunks(schedule.batch_size) {
            let inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.network_input(i)).collect();
            let targets: Vec<Vec<f64>> = chunk.iter().map(|&i| data.depth(i).values).collect();
            sum += train_step(net, &inputs, &targets, loss, &schedule.optimizer)?;
            batches += 1;
        }
        let m = validate_depth(net, data, &val)?;
        let row = DepthEpoch {
            epoch,
            train_huber: sum / batches as f64,
            val_huber: m.huber.mean,
            val_mae: m.mae.mean,
            val_mse: m.mse.mean,
            val_rmsle: m.rmsle.mean,
        };
        on_epoch(&row);
        log.epochs.push(row);
        log.final_metrics = m;
    }
    if schedule.epochs == 0 {
        log.final_metrics = validate_depth(net, data, &val)?;
    }
    Ok(log)
}
