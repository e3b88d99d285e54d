use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Layer, LayerKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the full gradient to at most this L2 norm before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, max_grad_norm: None }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Ordered layers plus gradient and optimizer buffers of identical shape.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    grads: Vec<Vec<Tensor>>,
    first_moment: Vec<Vec<Tensor>>,
    second_moment: Vec<Vec<Tensor>>,
    step: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        let zeros = |ls: &[Layer]| ls.iter().map(Layer::zero_grads).collect::<Vec<_>>();
        Ok(Self {
            grads: zeros(&layers),
            first_moment: zeros(&layers),
            second_moment: zeros(&layers),
            layers,
            step: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    /// Mutable access to parameter values. Shapes must not be changed.
    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        &mut self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn grads(&self) -> &[Vec<Tensor>] {
        &self.grads
    }

    pub fn layer_grads_mut(&mut self, i: usize) -> &mut [Tensor] {
        &mut self.grads[i]
    }

    /// Layer and its gradient buffers, borrowed together.
    pub fn layer_and_grads_mut(&mut self, i: usize) -> (&Layer, &mut [Tensor]) {
        (&self.layers[i], &mut self.grads[i])
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    /// Adds `other`'s gradients into this container's gradients.
    pub fn add_grads(&mut self, other: &[Vec<Tensor>]) {
        for (a, b) in self.grads.iter_mut().flatten().zip(other.iter().flatten()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn fresh_grads(&self) -> Vec<Vec<Tensor>> {
        self.layers.iter().map(Layer::zero_grads).collect()
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// All parameter values flattened in canonical order.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.tensors().into_iter().flat_map(|t| t.data().iter().copied()).collect::<Vec<_>>())
            .collect()
    }

    /// Copies parameter values from a network of identical architecture.
    pub fn copy_values_from(&mut self, other: &NetworkParams) -> Result<()> {
        if !same_architecture(self, other) {
            return Err(Error::config("cannot copy parameters between different architectures"));
        }
        self.layers.clone_from(&other.layers);
        Ok(())
    }

    /// One adaptive-moment update from the accumulated gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let scale = match cfg.max_grad_norm {
            Some(max) => {
                let n = self.grad_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (ti, p) in layer.tensors_mut().into_iter().enumerate() {
                let g = self.grads[li][ti].data();
                let m = self.first_moment[li][ti].data_mut();
                for (mv, gv) in m.iter_mut().zip(g) {
                    *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv * scale;
                }
                let v = self.second_moment[li][ti].data_mut();
                for (vv, gv) in v.iter_mut().zip(g) {
                    let gs = gv * scale;
                    *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gs * gs;
                }
                let m = self.first_moment[li][ti].data();
                let v = self.second_moment[li][ti].data();
                for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m).zip(v) {
                    let mh = mv / bc1;
                    let vh = vv / bc2;
                    *pv -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Checkpoint layout: magic, format version (u32 LE), header length (u64 LE),
    /// JSON header describing every layer, then every parameter value as f64 LE
    /// in canonical order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header: Vec<LayerHeader> = self
            .layers
            .iter()
            .map(|l| LayerHeader {
                kind: l.kind,
                activation: l.activation,
                shapes: l.tensors().iter().map(|t| t.shape().to_vec()).collect(),
            })
            .collect();
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for l in &self.layers {
            for t in l.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated checkpoint"));
            }
            let (a, b) = cur.split_at(n);
            cur = b;
            Ok(a)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not a network checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Vec<LayerHeader> = serde_json::from_slice(take(hlen)?)?;
        let mut layers = Vec::with_capacity(header.len());
        for h in header {
            let mut tensors = Vec::with_capacity(h.shapes.len());
            for shape in h.shapes {
                let n: usize = shape.iter().product();
                let raw = take(n * 8)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                tensors.push(Tensor::new(shape, data)?);
            }
            let mut it = tensors.into_iter();
            let weight = it.next().ok_or_else(|| bad("layer without weights"))?;
            let bias = it.next().ok_or_else(|| bad("layer without bias"))?;
            let sigma = match (it.next(), it.next()) {
                (Some(w), Some(b)) => Some((w, b)),
                (None, None) => None,
                _ => return Err(bad("incomplete noise parameters")),
            };
            layers.push(Layer::from_parts(h.kind, h.activation, weight, bias, sigma)?);
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        Self::new(layers)
    }
}

pub fn same_architecture(a: &NetworkParams, b: &NetworkParams) -> bool {
    a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(x, y)| {
            x.kind == y.kind
                && x.activation == y.activation
                && x.tensors().iter().map(|t| t.shape()).eq(y.tensors().iter().map(|t| t.shape()))
        })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HAVNET\0\x01";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    kind: LayerKind,
    activation: Activation,
    shapes: Vec<Vec<usize>>,
}
