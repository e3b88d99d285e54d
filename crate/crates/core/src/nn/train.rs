use std::ops::Range;

use super::layer::{dense_backward_batch, dense_forward_batch, layer_noise_rng, Activation, DenseCache, Layer};
use super::loss::{huber, huber_grad, LossSpec};
use super::params::{AdamConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::seed;

/// A network with a differentiable batch loss.
pub trait Model {
    type Input;
    type Target;

    fn params(&self) -> &NetworkParams;
    fn params_mut(&mut self) -> &mut NetworkParams;

    /// Mean loss over the batch. With `accumulate` set the gradient of that
    /// mean is added into the parameter gradient buffers.
    fn batch_loss(
        &mut self,
        inputs: &[Self::Input],
        targets: &[Self::Target],
        loss: LossSpec,
        accumulate: bool,
    ) -> Result<f64>;

    /// Digest of which side of each activation kink the batch falls on, if
    /// the model can report it. Used to skip finite differences that straddle
    /// a kink.
    fn kink_signature(&mut self, _inputs: &[Self::Input]) -> Result<Option<u64>> {
        Ok(None)
    }
}

/// Folds the kink side of every pre-activation into `acc`.
pub fn fold_kinks(acc: &mut u64, activation: Activation, pre: &[f64]) {
    if activation == Activation::Identity {
        return;
    }
    let mut word = 0u64;
    for (i, &p) in pre.iter().enumerate() {
        word |= ((p > 0.0) as u64) << (i % 64);
        if i % 64 == 63 {
            *acc = seed::mix(*acc ^ word);
            word = 0;
        }
    }
    *acc = seed::mix(*acc ^ word ^ pre.len() as u64);
}

/// Zeroes gradients, back-propagates the mean batch loss and applies one
/// optimizer update. Returns the pre-update loss.
pub fn train_step<M: Model>(
    model: &mut M,
    inputs: &[M::Input],
    targets: &[M::Target],
    loss: LossSpec,
    optimizer: &AdamConfig,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::data("empty training batch"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::data("batch inputs and targets differ in length"));
    }
    model.params_mut().zero_grads();
    let value = model.batch_loss(inputs, targets, loss, true)?;
    if !value.is_finite() || !model.params().grad_norm().is_finite() {
        return Err(Error::NonFiniteLoss { batch: model.params().step() });
    }
    model.params_mut().adam_step(optimizer);
    Ok(value)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Above this many parameters a seeded sample of coordinates is checked.
    pub max_coordinates: usize,
    pub sample_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, max_coordinates: 20_000, sample_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations fell on different sides of an
    /// activation kink.
    pub skipped_kinks: usize,
}

/// Largest relative disagreement between back-propagated and central
/// finite-difference gradients, `|a − n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check<M: Model>(
    model: &mut M,
    inputs: &[M::Input],
    targets: &[M::Target],
    loss: LossSpec,
    opts: GradCheckOptions,
) -> Result<f64> {
    Ok(gradient_check_report(model, inputs, targets, loss, opts)?.max_relative_error)
}

pub fn gradient_check_report<M: Model>(
    model: &mut M,
    inputs: &[M::Input],
    targets: &[M::Target],
    loss: LossSpec,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    model.params_mut().zero_grads();
    model.batch_loss(inputs, targets, loss, true)?;
    let analytic: Vec<Vec<Vec<f64>>> = model
        .params()
        .grads()
        .iter()
        .map(|l| l.iter().map(|t| t.data().to_vec()).collect())
        .collect();

    let mut coords = Vec::new();
    for (li, layer) in analytic.iter().enumerate() {
        for (ti, t) in layer.iter().enumerate() {
            for k in 0..t.len() {
                coords.push((li, ti, k));
            }
        }
    }
    if coords.len() > opts.max_coordinates {
        use rand::seq::SliceRandom;
        let mut rng = seed::rng(opts.sample_seed);
        coords.shuffle(&mut rng);
        coords.truncate(opts.max_coordinates);
        coords.sort_unstable();
    }

    let h = opts.step;
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for (li, ti, k) in coords {
        let original = model.params().layer(li).tensors()[ti].data()[k];
        set_param(model, li, ti, k, original + h);
        let plus = model.batch_loss(inputs, targets, loss, false)?;
        let sig_plus = model.kink_signature(inputs)?;
        set_param(model, li, ti, k, original - h);
        let minus = model.batch_loss(inputs, targets, loss, false)?;
        let sig_minus = model.kink_signature(inputs)?;
        set_param(model, li, ti, k, original);
        if sig_plus != sig_minus {
            skipped += 1;
            continue;
        }
        checked += 1;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[li][ti][k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    model.params_mut().zero_grads();
    Ok(GradCheckReport { max_relative_error: worst, checked, skipped_kinks: skipped })
}

fn set_param<M: Model>(model: &mut M, li: usize, ti: usize, k: usize, v: f64) {
    model.params_mut().layer_mut(li).tensors_mut()[ti].data_mut()[k] = v;
}

/// Runs a chain of dense layers over a batch. Noisy layers draw their noise
/// from `noise_seed` and the layer index when a seed is given.
pub(crate) fn stack_forward(
    params: &NetworkParams,
    layers: Range<usize>,
    input: &[f64],
    batch: usize,
    noise_seed: Option<u64>,
) -> Result<(Vec<f64>, Vec<DenseCache>)> {
    let mut x = input.to_vec();
    let mut caches = Vec::with_capacity(layers.len());
    for i in layers {
        let layer = params.layer(i);
        let noise = noise_seed.and_then(|s| layer.draw_noise(&mut layer_noise_rng(s, i)));
        let (y, cache) = dense_forward_batch(layer, &x, batch, noise)?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

pub(crate) fn stack_backward(
    params: &mut NetworkParams,
    layers: Range<usize>,
    caches: &[DenseCache],
    d_out: Vec<f64>,
) -> Vec<f64> {
    let mut g = d_out;
    for (i, cache) in layers.zip(caches).rev() {
        let (layer, grads) = params.layer_and_grads_mut(i);
        g = dense_backward_batch(layer, cache, &g, grads);
    }
    g
}

/// Plain multilayer perceptron over fixed-length vectors.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub params: NetworkParams,
}

impl Mlp {
    /// Hidden layers use `hidden`; the output layer is linear.
    pub fn new(widths: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("an MLP needs at least input and output widths"));
        }
        let mut rng = seed::rng(seed);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                Layer::dense(widths[i], widths[i + 1], act, &mut rng)
            })
            .collect();
        Ok(Self { params: NetworkParams::new(layers)? })
    }

    pub fn from_params(params: NetworkParams) -> Self {
        Self { params }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        stack_forward(&self.params, 0..self.params.len(), input, 1, None).map(|(y, _)| y)
    }
}

impl Model for Mlp {
    type Input = Vec<f64>;
    type Target = Vec<f64>;

    fn params(&self) -> &NetworkParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    fn batch_loss(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        loss: LossSpec,
        accumulate: bool,
    ) -> Result<f64> {
        let batch = inputs.len();
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let n = self.params.len();
        let (y, caches) = stack_forward(&self.params, 0..n, &flat, batch, None)?;
        let t: Vec<f64> = targets.iter().flatten().copied().collect();
        if t.len() != y.len() {
            return Err(Error::data("target width does not match network output"));
        }
        let count = y.len() as f64;
        let (value, grad): (f64, Vec<f64>) = match loss {
            LossSpec::Huber { delta } => (
                y.iter().zip(&t).map(|(a, b)| huber(a - b, delta)).sum::<f64>() / count,
                y.iter().zip(&t).map(|(a, b)| huber_grad(a - b, delta) / count).collect(),
            ),
            LossSpec::SquaredTd => (
                y.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / count,
                y.iter().zip(&t).map(|(a, b)| 2.0 * (a - b) / count).collect(),
            ),
            LossSpec::BinaryCrossEntropy => {
                return Err(Error::config("plain MLP does not support cross-entropy"))
            }
        };
        if accumulate {
            stack_backward(&mut self.params, 0..n, &caches, grad);
        }
        Ok(value)
    }

    fn kink_signature(&mut self, inputs: &[Vec<f64>]) -> Result<Option<u64>> {
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let n = self.params.len();
        let (_, caches) = stack_forward(&self.params, 0..n, &flat, inputs.len(), None)?;
        Ok(Some(stack_signature(&self.params, 0, &caches)))
    }
}

/// Kink digest of the dense caches of layers `first..`.
pub(crate) fn stack_signature(params: &NetworkParams, first: usize, caches: &[DenseCache]) -> u64 {
    let mut acc = 0;
    for (i, c) in caches.iter().enumerate() {
        fold_kinks(&mut acc, params.layer(first + i).activation, &c.pre);
    }
    acc
}
