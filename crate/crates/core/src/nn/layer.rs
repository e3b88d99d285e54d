use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Default negative slope of the leaky rectifier.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(a) => leaky_relu(x, a),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu(a) => {
                if pre >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d { stride: usize },
    Dense,
    NoisyDense,
}

/// One trainable layer.
///
/// Dense weights are `[out, in]`; convolution weights are
/// `[out_channels, kernel, kernel, in_channels]`. Noisy layers carry the
/// factorized-noise scales `sigma_weight` / `sigma_bias` next to the means.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weight: Tensor,
    pub bias: Tensor,
    pub sigma_weight: Option<Tensor>,
    pub sigma_bias: Option<Tensor>,
}

/// Factorized Gaussian noise for one noisy layer, already passed through
/// `f(x) = sign(x)·sqrt(|x|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl NoiseSample {
    pub fn draw(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let f = |x: f64| x.signum() * x.abs().sqrt();
        let mut draw_n = |n: usize| -> Vec<f64> {
            (0..n).map(|_| f(StandardNormal.sample(&mut *rng))).collect()
        };
        let input = draw_n(inputs);
        let output = draw_n(outputs);
        Self { input, output }
    }
}

impl Layer {
    /// Fully connected layer with fan-in scaled uniform initialization.
    pub fn dense(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = init_bound(inputs, activation);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        Self {
            kind: LayerKind::Dense,
            activation,
            weight: Tensor::new(vec![outputs, inputs], w).expect("shape"),
            bias: Tensor::zeros(&[outputs]),
            sigma_weight: None,
            sigma_bias: None,
        }
    }

    /// Noisy fully connected layer (factorized Gaussian parameterization).
    pub fn noisy_dense(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let sigma0 = 0.5 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        let b = (0..outputs).map(|_| dist.sample(rng)).collect();
        Self {
            kind: LayerKind::NoisyDense,
            activation,
            weight: Tensor::new(vec![outputs, inputs], w).expect("shape"),
            bias: Tensor::new(vec![outputs], b).expect("shape"),
            sigma_weight: Some(Tensor::filled(&[outputs, inputs], sigma0)),
            sigma_bias: Some(Tensor::filled(&[outputs], sigma0)),
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let bound = init_bound(fan_in, activation);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..out_channels * fan_in).map(|_| dist.sample(rng)).collect();
        Self {
            kind: LayerKind::Conv2d { stride },
            activation,
            weight: Tensor::new(vec![out_channels, kernel, kernel, in_channels], w).expect("shape"),
            bias: Tensor::zeros(&[out_channels]),
            sigma_weight: None,
            sigma_bias: None,
        }
    }

    /// Builds a layer from explicit tensors, checking shape consistency.
    pub fn from_parts(
        kind: LayerKind,
        activation: Activation,
        weight: Tensor,
        bias: Tensor,
        sigma: Option<(Tensor, Tensor)>,
    ) -> Result<Self> {
        let (sigma_weight, sigma_bias) = match sigma {
            Some((w, b)) => (Some(w), Some(b)),
            None => (None, None),
        };
        let layer = Self { kind, activation, weight, bias, sigma_weight, sigma_bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weight.shape();
        let out = match self.kind {
            LayerKind::Conv2d { stride } => {
                if stride == 0 {
                    return Err(Error::config("convolution stride must be >= 1"));
                }
                if ws.len() != 4 || ws[1] != ws[2] {
                    return Err(Error::config(format!("bad convolution weight shape {ws:?}")));
                }
                ws[0]
            }
            LayerKind::Dense | LayerKind::NoisyDense => {
                if ws.len() != 2 {
                    return Err(Error::config(format!("bad dense weight shape {ws:?}")));
                }
                ws[0]
            }
        };
        if self.bias.shape() != [out] {
            return Err(Error::config(format!(
                "bias shape {:?} does not match {out} outputs",
                self.bias.shape()
            )));
        }
        let noisy = self.kind == LayerKind::NoisyDense;
        match (&self.sigma_weight, &self.sigma_bias) {
            (Some(sw), Some(sb)) if noisy => {
                if sw.shape() != ws || sb.shape() != self.bias.shape() {
                    return Err(Error::config("noise scale shapes do not match parameters"));
                }
            }
            (None, None) if !noisy => {}
            _ => return Err(Error::config("noise scales present iff layer is noisy")),
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { .. } => self.weight.shape()[3],
            _ => self.weight.shape()[1],
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { .. } => self.weight.shape()[1],
            _ => 1,
        }
    }

    pub fn stride(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { stride } => stride,
            _ => 1,
        }
    }

    /// Parameter tensors in canonical order: weight, bias, then noise scales.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.weight, &self.bias];
        v.extend(self.sigma_weight.iter());
        v.extend(self.sigma_bias.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.weight, &mut self.bias];
        v.extend(self.sigma_weight.iter_mut());
        v.extend(self.sigma_bias.iter_mut());
        v
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn draw_noise(&self, rng: &mut Rng) -> Option<NoiseSample> {
        (self.kind == LayerKind::NoisyDense).then(|| NoiseSample::draw(self.inputs(), self.outputs(), rng))
    }

    /// Effective weight and bias of a dense layer under optional noise.
    fn effective_dense(&self, noise: Option<&NoiseSample>) -> (std::borrow::Cow<'_, [f64]>, std::borrow::Cow<'_, [f64]>) {
        use std::borrow::Cow;
        match (noise, &self.sigma_weight, &self.sigma_bias) {
            (Some(eps), Some(sw), Some(sb)) => {
                let (out, inp) = (self.outputs(), self.inputs());
                let mut w = self.weight.data().to_vec();
                for o in 0..out {
                    let eo = eps.output[o];
                    let row = &mut w[o * inp..(o + 1) * inp];
                    let srow = &sw.data()[o * inp..(o + 1) * inp];
                    for ((wv, sv), ei) in row.iter_mut().zip(srow).zip(&eps.input) {
                        *wv += sv * eo * ei;
                    }
                }
                let b = self
                    .bias
                    .data()
                    .iter()
                    .zip(sb.data())
                    .zip(&eps.output)
                    .map(|((m, s), e)| m + s * e)
                    .collect();
                (Cow::Owned(w), Cow::Owned(b))
            }
            _ => (Cow::Borrowed(self.weight.data()), Cow::Borrowed(self.bias.data())),
        }
    }
}

fn init_bound(fan_in: usize, activation: Activation) -> f64 {
    let gain = match activation {
        Activation::Identity => 3.0,
        _ => 6.0,
    };
    (gain / fan_in as f64).sqrt()
}

/// Saved intermediate values of a batched dense forward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    pub batch: usize,
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub noise: Option<NoiseSample>,
}

/// Batched dense forward: `input` is `batch × in`, output `batch × out`.
pub fn dense_forward_batch(
    layer: &Layer,
    input: &[f64],
    batch: usize,
    noise: Option<NoiseSample>,
) -> Result<(Vec<f64>, DenseCache)> {
    let (inp, out) = (layer.inputs(), layer.outputs());
    if matches!(layer.kind, LayerKind::Conv2d { .. }) {
        return Err(Error::config("dense forward called on a convolution layer"));
    }
    if input.len() != batch * inp {
        return Err(Error::config(format!(
            "dense layer expects {inp} inputs per sample, got {}",
            input.len() as f64 / batch.max(1) as f64
        )));
    }
    let noise = if layer.kind == LayerKind::NoisyDense { noise } else { None };
    let (w, b) = layer.effective_dense(noise.as_ref());
    let mut pre = vec![0.0; batch * out];
    for row in pre.chunks_exact_mut(out) {
        row.copy_from_slice(&b);
    }
    gemm(batch, inp, out, input, false, &w, true, 1.0, &mut pre);
    let act = layer.activation;
    let y = pre.iter().map(|&p| act.apply(p)).collect();
    Ok((y, DenseCache { batch, input: input.to_vec(), pre, noise }))
}

/// Backward pass for [`dense_forward_batch`]. Adds parameter gradients into
/// `grads` (canonical order) and returns the gradient w.r.t. the input.
pub fn dense_backward_batch(
    layer: &Layer,
    cache: &DenseCache,
    d_out: &[f64],
    grads: &mut [Tensor],
) -> Vec<f64> {
    let (inp, out, batch) = (layer.inputs(), layer.outputs(), cache.batch);
    let act = layer.activation;
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&cache.pre)
        .map(|(g, &p)| g * act.derivative(p))
        .collect();

    let mut d_w = vec![0.0; out * inp];
    gemm(out, batch, inp, &d_pre, true, &cache.input, false, 0.0, &mut d_w);
    let mut d_b = vec![0.0; out];
    for row in d_pre.chunks_exact(out) {
        for (acc, g) in d_b.iter_mut().zip(row) {
            *acc += g;
        }
    }

    if let Some(eps) = &cache.noise {
        let g_sw = grads[2].data_mut();
        for o in 0..out {
            for i in 0..inp {
                g_sw[o * inp + i] += d_w[o * inp + i] * eps.output[o] * eps.input[i];
            }
        }
        let g_sb = grads[3].data_mut();
        for o in 0..out {
            g_sb[o] += d_b[o] * eps.output[o];
        }
    }
    for (acc, g) in grads[0].data_mut().iter_mut().zip(&d_w) {
        *acc += g;
    }
    for (acc, g) in grads[1].data_mut().iter_mut().zip(&d_b) {
        *acc += g;
    }

    let (w, _) = layer.effective_dense(cache.noise.as_ref());
    let mut d_in = vec![0.0; batch * inp];
    gemm(batch, out, inp, &d_pre, false, &w, false, 0.0, &mut d_in);
    d_in
}

/// Single-vector dense forward. `noise_seed` must be given for noisy layers
/// during training; without it a noisy layer runs on its mean parameters.
pub fn dense_forward(input: &[f64], layer: &Layer, noise_seed: Option<u64>) -> Result<Vec<f64>> {
    if noise_seed.is_some() && layer.kind != LayerKind::NoisyDense {
        return Err(Error::config("noise seed given for a layer without noise"));
    }
    let noise = noise_seed.and_then(|s| layer.draw_noise(&mut seed::rng(s)));
    dense_forward_batch(layer, input, 1, noise).map(|(y, _)| y)
}

/// Output extent of a "same"-padded convolution.
pub fn conv_out_extent(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Zero padding placed before the first row/column.
fn conv_pad_before(n: usize, kernel: usize, stride: usize) -> usize {
    let out = conv_out_extent(n, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(n);
    total / 2
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    pub in_dims: (usize, usize, usize),
    pub out_dims: (usize, usize),
    pub cols: Vec<f64>,
    pub pre: Vec<f64>,
}

fn im2col(layer: &Layer, input: &[f64], (h, w, c): (usize, usize, usize)) -> (Vec<f64>, usize, usize) {
    let k = layer.kernel();
    let s = layer.stride();
    let (oh, ow) = (conv_out_extent(h, s), conv_out_extent(w, s));
    let (pt, pl) = (conv_pad_before(h, k, s), conv_pad_before(w, k, s));
    let kk = k * k * c;
    let mut cols = vec![0.0; oh * ow * kk];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * kk;
            for ky in 0..k {
                let iy = (oy * s + ky) as isize - pt as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s + kx) as isize - pl as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = base + (ky * k + kx) * c;
                    cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    (cols, oh, ow)
}

fn col2im(layer: &Layer, d_cols: &[f64], (h, w, c): (usize, usize, usize)) -> Vec<f64> {
    let k = layer.kernel();
    let s = layer.stride();
    let (oh, ow) = (conv_out_extent(h, s), conv_out_extent(w, s));
    let (pt, pl) = (conv_pad_before(h, k, s), conv_pad_before(w, k, s));
    let kk = k * k * c;
    let mut d_in = vec![0.0; h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * kk;
            for ky in 0..k {
                let iy = (oy * s + ky) as isize - pt as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s + kx) as isize - pl as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = base + (ky * k + kx) * c;
                    for (d, g) in d_in[dst..dst + c].iter_mut().zip(&d_cols[src..src + c]) {
                        *d += g;
                    }
                }
            }
        }
    }
    d_in
}

/// Convolution of one `h×w×c` (HWC, row-major) sample with "same" padding.
pub fn conv_forward_cached(
    layer: &Layer,
    input: &[f64],
    dims: (usize, usize, usize),
) -> Result<(Vec<f64>, ConvCache)> {
    let (h, w, c) = dims;
    if !matches!(layer.kind, LayerKind::Conv2d { .. }) {
        return Err(Error::config("convolution forward called on a dense layer"));
    }
    if c != layer.inputs() {
        return Err(Error::config(format!(
            "convolution expects {} input channels, got {c}",
            layer.inputs()
        )));
    }
    if input.len() != h * w * c {
        return Err(Error::config("convolution input length does not match its dimensions"));
    }
    let (cols, oh, ow) = im2col(layer, input, dims);
    let oc = layer.outputs();
    let kk = layer.kernel() * layer.kernel() * c;
    let mut pre = vec![0.0; oh * ow * oc];
    for row in pre.chunks_exact_mut(oc) {
        row.copy_from_slice(layer.bias.data());
    }
    gemm(oh * ow, kk, oc, &cols, false, layer.weight.data(), true, 1.0, &mut pre);
    let act = layer.activation;
    let y = pre.iter().map(|&p| act.apply(p)).collect();
    Ok((y, ConvCache { in_dims: dims, out_dims: (oh, ow), cols, pre }))
}

pub fn conv_backward(layer: &Layer, cache: &ConvCache, d_out: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
    let (oh, ow) = cache.out_dims;
    let p = oh * ow;
    let oc = layer.outputs();
    let kk = layer.kernel() * layer.kernel() * cache.in_dims.2;
    let act = layer.activation;
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&cache.pre)
        .map(|(g, &x)| g * act.derivative(x))
        .collect();
    gemm(oc, p, kk, &d_pre, true, &cache.cols, false, 1.0, grads[0].data_mut());
    let g_b = grads[1].data_mut();
    for row in d_pre.chunks_exact(oc) {
        for (acc, g) in g_b.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut d_cols = vec![0.0; p * kk];
    gemm(p, oc, kk, &d_pre, false, layer.weight.data(), false, 0.0, &mut d_cols);
    col2im(layer, &d_cols, cache.in_dims)
}

/// Convolution of an `H×W×C` tensor.
pub fn conv2d_forward(input: &Tensor, layer: &Layer) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::config(format!("convolution input must be H×W×C, got {s:?}")));
    }
    let (y, cache) = conv_forward_cached(layer, input.data(), (s[0], s[1], s[2]))?;
    Tensor::new(vec![cache.out_dims.0, cache.out_dims.1, layer.outputs()], y)
}

/// Draws a fresh generator for layer `index` of a network under `noise_seed`.
pub fn layer_noise_rng(noise_seed: u64, index: usize) -> Rng {
    seed::rng(seed::derive(noise_seed, index as u64))
}
