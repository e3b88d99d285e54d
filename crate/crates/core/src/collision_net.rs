//! Action-conditioned collision predictor: windowed labeling, class-balanced
//! batches, cross-entropy training and validation metrics.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    softmax2, softmax2_cross_entropy, stack_backward, stack_forward, stack_signature, train_step, Activation,
    AdamConfig, Layer, LossSpec, Model, NetworkParams,
};
use crate::observe::OBSERVATION_LEN;
use crate::seed;
use crate::world::Action;

/// Logit index of the collision class.
pub const POSITIVE: usize = 0;
pub const NEGATIVE: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionNetConfig {
    pub input_len: usize,
    /// Widths before the action join, starting with the first hidden layer.
    pub pre_join: Vec<usize>,
    /// Widths after the join, excluding the two-logit output.
    pub post_join: Vec<usize>,
    pub actions: usize,
    pub horizon: usize,
    pub threshold: f64,
    pub positive_fraction: f64,
}

impl Default for CollisionNetConfig {
    fn default() -> Self {
        Self {
            input_len: OBSERVATION_LEN,
            pre_join: vec![256, 256, 128, 32],
            post_join: vec![32, 32, 32],
            actions: Action::COUNT,
            horizon: 10,
            threshold: 0.5,
            positive_fraction: 0.25,
        }
    }
}

impl CollisionNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pre_join.is_empty() || self.horizon == 0 || self.actions == 0 {
            return Err(Error::config("collision network needs hidden layers, actions and a horizon ≥ 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("collision threshold must lie in (0, 1)"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::config("positive batch fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Width of the vector at the action join.
    pub fn join_width(&self) -> usize {
        self.pre_join.last().copied().unwrap_or(self.input_len) + self.actions
    }
}

#[derive(Clone, Debug)]
pub struct CollisionNet {
    pub config: CollisionNetConfig,
    pub params: NetworkParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub positive: bool,
}

impl CollisionNet {
    pub fn new(config: CollisionNetConfig, seed_: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed_, "collision-init");
        let mut layers = Vec::new();
        let mut w = config.input_len;
        for &h in &config.pre_join {
            layers.push(Layer::dense(w, h, Activation::leaky(), &mut rng));
            w = h;
        }
        w += config.actions;
        for &h in &config.post_join {
            layers.push(Layer::dense(w, h, Activation::leaky(), &mut rng));
            w = h;
        }
        layers.push(Layer::dense(w, 2, Activation::Identity, &mut rng));
        Ok(Self { config, params: NetworkParams::new(layers)? })
    }

    pub fn from_params(config: CollisionNetConfig, params: NetworkParams) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if !crate::nn::same_architecture(&reference.params, &params) {
            return Err(Error::config("checkpoint does not match the collision network layout"));
        }
        Ok(Self { config, params })
    }

    pub fn load(config: CollisionNetConfig, path: &Path) -> Result<Self> {
        Self::from_params(config, NetworkParams::load(path)?)
    }

    fn split(&self) -> usize {
        self.config.pre_join.len()
    }

    /// Concatenates per-sample features with action one-hots.
    fn join(&self, features: &[f64], actions: &[usize]) -> Vec<f64> {
        let f = features.len() / actions.len();
        let na = self.config.actions;
        let mut out = Vec::with_capacity(actions.len() * (f + na));
        for (row, &a) in features.chunks_exact(f).zip(actions) {
            out.extend_from_slice(row);
            out.extend((0..na).map(|k| if k == a { 1.0 } else { 0.0 }));
        }
        out
    }

    fn check(&self, obs: &[f64], actions: &[usize]) -> Result<()> {
        if obs.len() != actions.len() * self.config.input_len {
            return Err(Error::config(format!("collision network expects {} inputs per sample", self.config.input_len)));
        }
        if actions.iter().any(|&a| a >= self.config.actions) {
            return Err(Error::data("action index out of range"));
        }
        Ok(())
    }

    /// Two logits per sample.
    pub fn logits_batch(&self, obs: &[f64], actions: &[usize]) -> Result<Vec<f64>> {
        self.check(obs, actions)?;
        let n = self.params.len();
        let (h, _) = stack_forward(&self.params, 0..self.split(), obs, actions.len(), None)?;
        let (y, _) = stack_forward(&self.params, self.split()..n, &self.join(&h, actions), actions.len(), None)?;
        Ok(y)
    }

    /// Hidden vector at the join (features then one-hot) for one sample.
    pub fn join_vector(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check(obs, &[action])?;
        let (h, _) = stack_forward(&self.params, 0..self.split(), obs, 1, None)?;
        Ok(self.join(&h, &[action]))
    }

    /// Softmax probability of the collision class.
    pub fn predict_collision(&self, obs: &[f64], action: usize) -> Result<f64> {
        let y = self.logits_batch(obs, &[action])?;
        Ok(softmax2([y[0], y[1]])[POSITIVE])
    }

    pub fn predict_batch(&self, samples: &[&CollisionSample]) -> Result<Vec<f64>> {
        let obs: Vec<f64> = samples.iter().flat_map(|s| s.obs.iter().copied()).collect();
        let actions: Vec<usize> = samples.iter().map(|s| s.action).collect();
        let y = self.logits_batch(&obs, &actions)?;
        Ok(y.chunks_exact(2).map(|l| softmax2([l[0], l[1]])[POSITIVE]).collect())
    }
}

/// Whether probability `p` engages the contingency under threshold `p_star`.
pub fn triggers(p: f64, p_star: f64) -> bool {
    p > p_star
}

impl Model for CollisionNet {
    type Input = CollisionSample;
    type Target = bool;

    fn params(&self) -> &NetworkParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    fn batch_loss(&mut self, inputs: &[CollisionSample], targets: &[bool], loss: LossSpec, accumulate: bool) -> Result<f64> {
        if loss != LossSpec::BinaryCrossEntropy {
            return Err(Error::config("collision network trains on cross-entropy"));
        }
        let batch = inputs.len();
        let obs: Vec<f64> = inputs.iter().flat_map(|s| s.obs.iter().copied()).collect();
        let actions: Vec<usize> = inputs.iter().map(|s| s.action).collect();
        self.check(&obs, &actions)?;
        let split = self.split();
        let n = self.params.len();
        let (h, pre_caches) = stack_forward(&self.params, 0..split, &obs, batch, None)?;
        let joined = self.join(&h, &actions);
        let (y, post_caches) = stack_forward(&self.params, split..n, &joined, batch, None)?;
        let mut value = 0.0;
        let mut d_y = vec![0.0; batch * 2];
        for (b, &pos) in targets.iter().enumerate() {
            let class = if pos { POSITIVE } else { NEGATIVE };
            let logits = [y[2 * b], y[2 * b + 1]];
            value += softmax2_cross_entropy(logits, class) / batch as f64;
            let p = softmax2(logits);
            for k in 0..2 {
                d_y[2 * b + k] = (p[k] - if k == class { 1.0 } else { 0.0 }) / batch as f64;
            }
        }
        if accumulate {
            let d_join = stack_backward(&mut self.params, split..n, &post_caches, d_y);
            let f = self.config.join_width() - self.config.actions;
            let jw = self.config.join_width();
            let d_h: Vec<f64> = d_join.chunks_exact(jw).flat_map(|r| r[..f].iter().copied()).collect();
            stack_backward(&mut self.params, 0..split, &pre_caches, d_h);
        }
        Ok(value)
    }

    fn kink_signature(&mut self, inputs: &[CollisionSample]) -> Result<Option<u64>> {
        let obs: Vec<f64> = inputs.iter().flat_map(|s| s.obs.iter().copied()).collect();
        let actions: Vec<usize> = inputs.iter().map(|s| s.action).collect();
        let split = self.split();
        let (h, pre) = stack_forward(&self.params, 0..split, &obs, inputs.len(), None)?;
        let (_, post) = stack_forward(&self.params, split..self.params.len(), &self.join(&h, &actions), inputs.len(), None)?;
        Ok(Some(stack_signature(&self.params, 0, &pre) ^ stack_signature(&self.params, split, &post).rotate_left(17)))
    }
}

/// Frame `t` is positive iff `collided[k]` holds for some `k ∈ (t, t + d]`.
/// `collided` is indexed by state (step) index and has one more entry than
/// there are frames.
pub fn window_labels(collided: &[bool], frames: usize, horizon: usize) -> Vec<bool> {
    let mut next: Option<usize> = None;
    let mut out = vec![false; frames];
    for k in (0..collided.len()).rev() {
        if k < frames {
            out[k] = next.is_some_and(|n| n - k <= horizon);
        }
        if collided[k] {
            next = Some(k);
        }
    }
    out
}

/// One logged frame: the observation and the action that was taken from it.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedFrame {
    pub obs: Vec<f64>,
    pub action: usize,
}

/// Labels the frames of one finished episode. `collision_step` is the state
/// index at which the episode ended in a collision, if it did.
pub fn label_dataset(frames: &[LoggedFrame], collision_step: Option<usize>, horizon: usize) -> Vec<CollisionSample> {
    let mut collided = vec![false; frames.len() + 1];
    if let Some(k) = collision_step {
        if k < collided.len() {
            collided[k] = true;
        }
    }
    window_labels(&collided, frames.len(), horizon)
        .into_iter()
        .zip(frames)
        .map(|(positive, f)| CollisionSample { obs: f.obs.clone(), action: f.action, positive })
        .collect()
}

/// Indices of positive and negative samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassPools {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl ClassPools {
    pub fn of(samples: &[CollisionSample], indices: &[usize]) -> Self {
        let (positive, negative) = indices.iter().partition(|&&i| samples[i].positive);
        Self { positive, negative }
    }
}

/// `round(fraction·batch)` positives then the remaining negatives, each drawn
/// with replacement.
pub fn sample_balanced_batch(pools: &ClassPools, batch: usize, positive_fraction: f64, rng: &mut seed::Rng) -> Result<Vec<usize>> {
    if pools.positive.is_empty() || pools.negative.is_empty() {
        return Err(Error::data("balanced batches need both classes"));
    }
    let n_pos = (positive_fraction * batch as f64).round() as usize;
    let mut out = Vec::with_capacity(batch);
    out.extend((0..n_pos).map(|_| pools.positive[rng.random_range(0..pools.positive.len())]));
    out.extend((n_pos..batch).map(|_| pools.negative[rng.random_range(0..pools.negative.len())]));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub log_every: usize,
    /// Score the holdout every this many steps and keep the best parameters; 0 keeps the last.
    pub select_every: usize,
    pub select_batches: usize,
}

impl Default for CollisionSchedule {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            optimizer: AdamConfig { learning_rate: 3e-4, ..AdamConfig::default() },
            seed: 0,
            log_every: 500,
            select_every: 1000,
            select_batches: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionLogRow {
    pub step: usize,
    pub train_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionTrainingLog {
    pub rows: Vec<CollisionLogRow>,
    pub holdout: Vec<HoldoutRow>,
    pub selected_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub step: usize,
    pub cross_entropy: f64,
    pub accuracy: f64,
}

pub fn train_collision(
    samples: &[CollisionSample],
    train: &[usize],
    net: &mut CollisionNet,
    schedule: &CollisionSchedule,
) -> Result<CollisionTrainingLog> {
    train_collision_selected(samples, train, &[], net, schedule)
}

/// Trains on `train`, scoring balanced-batch cross-entropy on `holdout` every
/// `select_every` steps and at the end. The lowest-scoring parameters are
/// kept, earliest first on ties. An empty or one-class holdout disables
/// selection.
pub fn train_collision_selected(
    samples: &[CollisionSample],
    train: &[usize],
    holdout: &[usize],
    net: &mut CollisionNet,
    schedule: &CollisionSchedule,
) -> Result<CollisionTrainingLog> {
    let hp = ClassPools::of(samples, holdout);
    let selecting = schedule.select_every > 0 && !hp.positive.is_empty() && !hp.negative.is_empty();
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    let pools = ClassPools::of(samples, train);
    let mut rng = seed::rng_for(schedule.seed, "collision-batches");
    let mut log = CollisionTrainingLog::default();
    let mut acc = (0.0, 0usize);
    for step in 1..=schedule.steps {
        let idx = sample_balanced_batch(&pools, schedule.batch_size, net.config.positive_fraction, &mut rng)?;
        let inputs: Vec<CollisionSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let targets: Vec<bool> = inputs.iter().map(|s| s.positive).collect();
        acc.0 += train_step(net, &inputs, &targets, LossSpec::BinaryCrossEntropy, &schedule.optimizer)?;
        acc.1 += 1;
        if step % schedule.log_every.max(1) == 0 || step == schedule.steps {
            log.rows.push(CollisionLogRow { step, train_loss: acc.0 / acc.1 as f64 });
            acc = (0.0, 0);
        }
        if selecting && (step % schedule.select_every == 0 || step == schedule.steps) {
            let r = validate_collision(net, samples, holdout, schedule.select_batches.max(1), schedule.batch_size, schedule.seed ^ 2)?;
            log.holdout.push(HoldoutRow { step, cross_entropy: r.cross_entropy, accuracy: r.accuracy });
            if best.as_ref().is_none_or(|b| r.cross_entropy < b.0) {
                best = Some((r.cross_entropy, step, net.params.clone()));
            }
        }
    }
    if let Some((_, step, params)) = best {
        net.params = params;
        log.selected_step = Some(step);
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub batches: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cross_entropy: f64,
    /// Fractions of all evaluated frames.
    pub tp_mass: f64,
    pub tn_mass: f64,
    pub fp_mass: f64,
    pub fn_mass: f64,
    /// Conditional rates within each true class.
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    pub confusion: Confusion,
}

impl CollisionReport {
    pub fn from_confusion(c: Confusion, cross_entropy: f64, batches: usize, threshold: f64) -> Self {
        let t = c.total() as f64;
        Self {
            batches,
            threshold,
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            cross_entropy,
            tp_mass: c.tp as f64 / t,
            tn_mass: c.tn as f64 / t,
            fp_mass: c.fp as f64 / t,
            fn_mass: c.fn_ as f64 / t,
            true_positive_rate: c.recall(),
            false_positive_rate: ratio(c.fp, c.fp + c.tn),
            confusion: c,
        }
    }
}

/// Evaluates `batches` balanced batches (8 positive + 24 negative for a
/// batch of 32) drawn from `indices`.
pub fn validate_collision(
    net: &CollisionNet,
    samples: &[CollisionSample],
    indices: &[usize],
    batches: usize,
    batch_size: usize,
    seed_: u64,
) -> Result<CollisionReport> {
    let pools = ClassPools::of(samples, indices);
    let mut rng = seed::rng_for(seed_, "collision-validation");
    let mut conf = Confusion::default();
    let mut ce = 0.0;
    let mut n = 0usize;
    for _ in 0..batches {
        let idx = sample_balanced_batch(&pools, batch_size, net.config.positive_fraction, &mut rng)?;
        let refs: Vec<&CollisionSample> = idx.iter().map(|&i| &samples[i]).collect();
        let probs = net.predict_batch(&refs)?;
        for (s, p) in refs.iter().zip(probs) {
            conf.add(triggers(p, net.config.threshold), s.positive);
            let q = if s.positive { p } else { 1.0 - p };
            ce -= q.max(1e-300).ln();
            n += 1;
        }
    }
    Ok(CollisionReport::from_confusion(conf, ce / n.max(1) as f64, batches, net.config.threshold))
}

pub const INDEX_FILE: &str = "index.json";
pub const DATA_FILE: &str = "samples.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionIndex {
    pub format_version: u32,
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub obs_len: usize,
    pub horizon: usize,
    /// Episode id of each sample, for episode-level splits.
    pub episodes: usize,
    pub provenance: String,
}

/// Labeled frames with the episode each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionDataset {
    pub samples: Vec<CollisionSample>,
    pub episode_of: Vec<u32>,
    pub horizon: usize,
    pub provenance: String,
}

impl CollisionDataset {
    pub fn push_episode(&mut self, episode: u32, samples: Vec<CollisionSample>) {
        self.episode_of.extend(std::iter::repeat_n(episode, samples.len()));
        self.samples.extend(samples);
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.positive).count()
    }

    /// Every tenth episode validates.
    pub fn split_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.samples.len()).partition(|&i| self.episode_of[i] % 10 != 9)
    }

    /// Splits training indices into fit and holdout, by episode.
    pub fn holdout_split(&self, train: &[usize]) -> (Vec<usize>, Vec<usize>) {
        train.iter().partition(|&&i| self.episode_of[i] % 10 != 8)
    }

    pub fn index(&self) -> CollisionIndex {
        let positives = self.positives();
        let mut eps = self.episode_of.clone();
        eps.dedup();
        CollisionIndex {
            format_version: 1,
            count: self.samples.len(),
            positives,
            negatives: self.samples.len() - positives,
            obs_len: self.samples.first().map_or(OBSERVATION_LEN, |s| s.obs.len()),
            horizon: self.horizon,
            episodes: eps.len(),
            provenance: self.provenance.clone(),
        }
    }

    /// Per sample: u32 episode, u8 action, u8 label, then the observation as
    /// little-endian f64.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&self.index())?)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(DATA_FILE))?);
        for (s, e) in self.samples.iter().zip(&self.episode_of) {
            w.write_all(&e.to_le_bytes())?;
            w.write_all(&[s.action as u8, s.positive as u8])?;
            for v in &s.obs {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Err(Error::MissingArtifact(index_path));
        }
        let index: CollisionIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
        let mut bytes = Vec::new();
        fs::File::open(dir.join(DATA_FILE))?.read_to_end(&mut bytes)?;
        let rec = 6 + 8 * index.obs_len;
        if bytes.len() != rec * index.count {
            return Err(Error::data(format!("{} bytes for {} samples", bytes.len(), index.count)));
        }
        let mut ds = Self { horizon: index.horizon, provenance: index.provenance, ..Self::default() };
        for r in bytes.chunks_exact(rec) {
            ds.episode_of.push(u32::from_le_bytes(r[..4].try_into().unwrap()));
            ds.samples.push(CollisionSample {
                action: r[4] as usize,
                positive: r[5] != 0,
                obs: r[6..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
            });
        }
        Ok(ds)
    }
}
