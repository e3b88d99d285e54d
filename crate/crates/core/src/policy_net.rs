//! Dueling noisy Q-network, reward, replay buffer and DQN training.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    stack_backward, stack_forward, stack_signature, train_step, Activation, AdamConfig, Layer, LossSpec,
    Model, NetworkParams,
};
use crate::observe::OBSERVATION_LEN;
use crate::seed::{self, Rng};
use crate::world::{Action, Outcome, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyNetConfig {
    pub input_len: usize,
    pub trunk: Vec<usize>,
    /// Hidden widths of each of the value and advantage streams.
    pub stream: Vec<usize>,
    pub actions: usize,
    /// Noisy output layers; off gives a plain dueling network.
    pub noisy: bool,
}

impl Default for PolicyNetConfig {
    fn default() -> Self {
        Self { input_len: OBSERVATION_LEN, trunk: vec![128; 3], stream: vec![128; 2], actions: Action::COUNT, noisy: true }
    }
}

#[derive(Clone, Debug)]
pub struct QNetwork {
    pub config: PolicyNetConfig,
    pub params: NetworkParams,
    /// Noise seed applied inside [`Model::batch_loss`] during training.
    pub train_noise: Option<u64>,
}

/// Batched forward intermediates.
struct QTrace {
    trunk: Vec<crate::nn::DenseCache>,
    value: Vec<crate::nn::DenseCache>,
    advantage: Vec<crate::nn::DenseCache>,
    q: Vec<f64>,
}

impl QNetwork {
    pub fn new(config: PolicyNetConfig, seed_: u64) -> Result<Self> {
        if config.trunk.is_empty() || config.actions == 0 || config.input_len == 0 {
            return Err(Error::config("policy network needs a trunk, inputs and actions"));
        }
        let mut rng = seed::rng_for(seed_, "policy-init");
        let mut layers = Vec::new();
        let mut w = config.input_len;
        for &h in &config.trunk {
            layers.push(Layer::dense(w, h, Activation::Relu, &mut rng));
            w = h;
        }
        let trunk_out = w;
        for outputs in [1, config.actions] {
            let mut w = trunk_out;
            for &h in &config.stream {
                layers.push(Layer::dense(w, h, Activation::Relu, &mut rng));
                w = h;
            }
            layers.push(if config.noisy {
                Layer::noisy_dense(w, outputs, Activation::Identity, &mut rng)
            } else {
                Layer::dense(w, outputs, Activation::Identity, &mut rng)
            });
        }
        Ok(Self { config, params: NetworkParams::new(layers)?, train_noise: None })
    }

    pub fn from_params(config: PolicyNetConfig, params: NetworkParams) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if !crate::nn::same_architecture(&reference.params, &params) {
            return Err(Error::config("checkpoint does not match the policy network layout"));
        }
        Ok(Self { config, params, train_noise: None })
    }

    pub fn load(config: PolicyNetConfig, path: &Path) -> Result<Self> {
        Self::from_params(config, NetworkParams::load(path)?)
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let t = self.config.trunk.len();
        let s = self.config.stream.len() + 1;
        [0..t, t..t + s, t + s..t + 2 * s]
    }

    fn trace(&self, obs: &[f64], batch: usize, noise_seed: Option<u64>) -> Result<QTrace> {
        if obs.len() != batch * self.config.input_len {
            return Err(Error::config(format!("policy network expects {} inputs per sample", self.config.input_len)));
        }
        let [tr, vr, ar] = self.ranges();
        let (h, trunk) = stack_forward(&self.params, tr, obs, batch, noise_seed)?;
        let (v, value) = stack_forward(&self.params, vr, &h, batch, noise_seed)?;
        let (a, advantage) = stack_forward(&self.params, ar, &h, batch, noise_seed)?;
        let na = self.config.actions;
        let mut q = Vec::with_capacity(batch * na);
        for b in 0..batch {
            q.extend(combine(v[b], &a[b * na..(b + 1) * na]));
        }
        Ok(QTrace { trunk, value, advantage, q })
    }

    /// Q-values for a batch of observations laid out row-major.
    pub fn q_batch(&self, obs: &[f64], batch: usize, noise_seed: Option<u64>) -> Result<Vec<f64>> {
        Ok(self.trace(obs, batch, noise_seed)?.q)
    }

    pub fn q_values(&self, obs: &[f64], noise_seed: Option<u64>) -> Result<Vec<f64>> {
        self.q_batch(obs, 1, noise_seed)
    }

    /// Value and advantage stream outputs for one observation.
    pub fn streams(&self, obs: &[f64], noise_seed: Option<u64>) -> Result<(f64, Vec<f64>)> {
        let [tr, vr, ar] = self.ranges();
        let (h, _) = stack_forward(&self.params, tr, obs, 1, noise_seed)?;
        let (v, _) = stack_forward(&self.params, vr, &h, 1, noise_seed)?;
        let (a, _) = stack_forward(&self.params, ar, &h, 1, noise_seed)?;
        Ok((v[0], a))
    }

    pub fn act(&self, obs: &[f64], noise_seed: Option<u64>) -> Result<usize> {
        Ok(select_action(&self.q_values(obs, noise_seed)?))
    }
}

/// `Q(a) = V + A(a) − mean A`.
pub fn combine(value: f64, advantage: &[f64]) -> Vec<f64> {
    let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
    advantage.iter().map(|a| value + a - mean).collect()
}

/// Greedy action; ties go to the lowest index.
pub fn select_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn reward(prev_x: f64, new_x: f64, outcome: &StepOutcome, lambda: f64) -> f64 {
    match outcome.classification {
        Outcome::Collision | Outcome::OutOfBounds => -lambda,
        _ => new_x - prev_x,
    }
}

/// Regression sample for the Q-network: the observation and action taken.
#[derive(Clone, Debug, PartialEq)]
pub struct QSample {
    pub obs: Vec<f64>,
    pub action: usize,
}

impl Model for QNetwork {
    type Input = QSample;
    type Target = f64;

    fn params(&self) -> &NetworkParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    fn batch_loss(&mut self, inputs: &[QSample], targets: &[f64], loss: LossSpec, accumulate: bool) -> Result<f64> {
        let batch = inputs.len();
        let na = self.config.actions;
        if inputs.iter().any(|s| s.action >= na) {
            return Err(Error::data("action index out of range"));
        }
        let flat: Vec<f64> = inputs.iter().flat_map(|s| s.obs.iter().copied()).collect();
        let tr = self.trace(&flat, batch, self.train_noise)?;
        let n = batch as f64;
        let mut value = 0.0;
        let mut d_q = vec![0.0; batch * na];
        for (b, (s, &t)) in inputs.iter().zip(targets).enumerate() {
            let e = tr.q[b * na + s.action] - t;
            let (l, g) = match loss {
                LossSpec::SquaredTd => (e * e, 2.0 * e),
                LossSpec::Huber { delta } => (crate::nn::huber(e, delta), crate::nn::huber_grad(e, delta)),
                LossSpec::BinaryCrossEntropy => return Err(Error::config("Q regression cannot use cross-entropy")),
            };
            value += l / n;
            d_q[b * na + s.action] = g / n;
        }
        if accumulate {
            let mut d_v = vec![0.0; batch];
            let mut d_a = vec![0.0; batch * na];
            for b in 0..batch {
                let row = &d_q[b * na..(b + 1) * na];
                let sum: f64 = row.iter().sum();
                d_v[b] = sum;
                for k in 0..na {
                    d_a[b * na + k] = row[k] - sum / na as f64;
                }
            }
            let [trr, vr, ar] = self.ranges();
            let g_hv = stack_backward(&mut self.params, vr, &tr.value, d_v);
            let g_ha = stack_backward(&mut self.params, ar, &tr.advantage, d_a);
            let g_h: Vec<f64> = g_hv.iter().zip(&g_ha).map(|(a, b)| a + b).collect();
            stack_backward(&mut self.params, trr, &tr.trunk, g_h);
        }
        Ok(value)
    }

    fn kink_signature(&mut self, inputs: &[QSample]) -> Result<Option<u64>> {
        let flat: Vec<f64> = inputs.iter().flat_map(|s| s.obs.iter().copied()).collect();
        let tr = self.trace(&flat, inputs.len(), self.train_noise)?;
        let [trr, vr, ar] = self.ranges();
        let mut acc = stack_signature(&self.params, trr.start, &tr.trunk);
        acc ^= stack_signature(&self.params, vr.start, &tr.value).rotate_left(21);
        acc ^= stack_signature(&self.params, ar.start, &tr.advantage).rotate_left(42);
        Ok(Some(acc))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample with replacement.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut Rng) -> Vec<&'a Transition> {
        (0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Regression targets `r + γ·max_a' Q_target(s', a')`, zero bootstrap on
/// terminal transitions.
pub fn td_targets(batch: &[&Transition], target: &QNetwork, gamma: f64, noise_seed: Option<u64>) -> Result<Vec<f64>> {
    let flat: Vec<f64> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
    let q = target.q_batch(&flat, batch.len(), noise_seed)?;
    let na = target.config.actions;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.terminal {
                t.reward
            } else {
                let m = q[b * na..(b + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                t.reward + gamma * m
            }
        })
        .collect())
}

/// One gradient step on the squared TD error of `batch`. Returns the loss.
pub fn dqn_update(
    batch: &[&Transition],
    online: &mut QNetwork,
    target: &QNetwork,
    gamma: f64,
    optimizer: &AdamConfig,
    noise: Option<(u64, u64)>,
) -> Result<f64> {
    let y = td_targets(batch, target, gamma, noise.map(|n| n.1))?;
    let inputs: Vec<QSample> = batch.iter().map(|t| QSample { obs: t.obs.clone(), action: t.action }).collect();
    online.train_noise = noise.map(|n| n.0);
    let r = train_step(online, &inputs, &y, LossSpec::SquaredTd, optimizer);
    online.train_noise = None;
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub learning_starts: usize,
    pub total_steps: u64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Environment steps between greedy selection evaluations; 0 disables
    /// selection and keeps the final parameters.
    pub select_every: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 20.0,
            replay_capacity: 100_000,
            batch_size: 32,
            target_sync: 1_000,
            learning_starts: 1_000,
            total_steps: 300_000,
            optimizer: AdamConfig { learning_rate: 1e-4, max_grad_norm: Some(10.0), ..AdamConfig::default() },
            seed: 0,
            select_every: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("discount must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("penalty λ must be positive"));
        }
        if self.batch_size == 0 || self.target_sync == 0 {
            return Err(Error::config("batch size and target sync interval must be positive"));
        }
        Ok(())
    }
}

/// Environment interface used by [`train_dqn`].
pub trait Environment {
    /// Starts episode `episode` and returns its first observation.
    fn reset(&mut self, episode: u64) -> Result<Vec<f64>>;
    /// Applies `action`; returns `(reward, next observation, terminal, outcome)`.
    fn step(&mut self, action: usize) -> Result<(f64, Vec<f64>, bool, Outcome)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode: u64,
    pub episode_return: f64,
    pub outcome: Outcome,
    pub steps: u32,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrainingLog {
    pub episodes: Vec<EpisodeLogRow>,
    pub updates: u64,
    pub mean_td_loss: Vec<f64>,
    #[serde(default)]
    pub selection: Vec<SelectionRow>,
    /// Environment step of the kept parameters, when selection ran.
    #[serde(default)]
    pub selected_step: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub step: u64,
    pub score: f64,
}

impl PolicyTrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "episode,return,outcome,steps,lambda")?;
        for e in &self.episodes {
            writeln!(f, "{},{},{},{},{}", e.episode, e.episode_return, e.outcome.label(), e.steps, e.lambda)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// DQN with noisy-layer exploration: one gradient step per environment step
/// once `learning_starts` transitions are stored; target network synced every
/// `target_sync` steps.
pub fn train_dqn<E: Environment>(
    env: &mut E,
    online: &mut QNetwork,
    config: &DqnConfig,
    on_episode: impl FnMut(&EpisodeLogRow),
) -> Result<PolicyTrainingLog> {
    let cfg = DqnConfig { select_every: 0, ..config.clone() };
    train_dqn_selected(env, online, &cfg, on_episode, |_| Ok(0.0))
}

/// [`train_dqn`] with model selection: every `select_every` steps after
/// learning starts, and once at the end, `score` rates the online network and
/// the best-scoring parameters are kept. Ties keep the earlier snapshot.
pub fn train_dqn_selected<E: Environment>(
    env: &mut E,
    online: &mut QNetwork,
    config: &DqnConfig,
    mut on_episode: impl FnMut(&EpisodeLogRow),
    mut score: impl FnMut(&QNetwork) -> Result<f64>,
) -> Result<PolicyTrainingLog> {
    config.validate()?;
    let mut best: Option<(f64, u64, NetworkParams)> = None;
    let mut select = |net: &QNetwork, step: u64, log: &mut PolicyTrainingLog| -> Result<()> {
        let s = score(net)?;
        log.selection.push(SelectionRow { step, score: s });
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, step, net.params.clone()));
        }
        Ok(())
    };
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut rng = seed::rng_for(config.seed, "replay");
    let noisy = online.config.noisy;
    let mut log = PolicyTrainingLog::default();
    let mut step: u64 = 0;
    let mut episode: u64 = 0;
    let mut loss_acc = (0.0, 0usize);
    while step < config.total_steps {
        let mut obs = env.reset(episode)?;
        let mut ret = 0.0;
        let mut steps = 0u32;
        let outcome = loop {
            let act_noise = noisy.then(|| seed::derive(seed::derive_str(config.seed, "act"), step));
            let action = online.act(&obs, act_noise)?;
            let (r, next, terminal, outcome) = env.step(action)?;
            ret += r;
            steps += 1;
            buffer.push(Transition { obs: std::mem::take(&mut obs), action, reward: r, next_obs: next.clone(), terminal });
            obs = next;
            step += 1;
            if buffer.len() >= config.learning_starts.max(1) {
                let batch = buffer.sample(config.batch_size, &mut rng);
                let noise = noisy.then(|| {
                    let s = seed::derive(seed::derive_str(config.seed, "learn"), step);
                    (seed::derive(s, 0), seed::derive(s, 1))
                });
                let l = dqn_update(&batch, online, &target, config.gamma, &config.optimizer, noise)?;
                log.updates += 1;
                loss_acc.0 += l;
                loss_acc.1 += 1;
                if loss_acc.1 == 1000 {
                    log.mean_td_loss.push(loss_acc.0 / 1000.0);
                    loss_acc = (0.0, 0);
                }
            }
            if step % config.target_sync == 0 {
                target.params.copy_values_from(&online.params)?;
            }
            if config.select_every > 0 && step % config.select_every == 0 && log.updates > 0 {
                select(online, step, &mut log)?;
            }
            if outcome.is_terminal() {
                break outcome;
            }
        };
        let row = EpisodeLogRow { episode, episode_return: ret, outcome, steps, lambda: config.lambda };
        on_episode(&row);
        log.episodes.push(row);
        episode += 1;
    }
    if config.select_every > 0 {
        if log.selection.last().is_none_or(|r| r.step != step) {
            select(online, step, &mut log)?;
        }
        if let Some((_, at, params)) = best {
            online.params.copy_values_from(&params)?;
            log.selected_step = Some(at);
        }
    }
    Ok(log)
}

/// The obstacle course as a DQN environment. Episode `k` runs course seed
/// `derive(course_seed, k)` from the origin.
pub struct CourseEnv {
    pub course: crate::world::CourseConfig,
    pub dynamics: crate::world::DynamicsConfig,
    pub observer: crate::observe::Observer,
    pub lambda: f64,
    pub noise_seed: u64,
    world: Option<crate::world::World>,
    episode: u64,
}

impl CourseEnv {
    pub fn new(
        course: crate::world::CourseConfig,
        dynamics: crate::world::DynamicsConfig,
        observer: crate::observe::Observer,
        lambda: f64,
        noise_seed: u64,
    ) -> Self {
        Self { course, dynamics, observer, lambda, noise_seed, world: None, episode: 0 }
    }

    pub fn world(&self) -> Option<&crate::world::World> {
        self.world.as_ref()
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let w = self.world.as_ref().expect("reset before observe");
        let s = seed::derive(seed::derive(self.noise_seed, self.episode), w.step_index() as u64);
        Ok(self.observer.observe(w, s)?.vector)
    }
}

impl Environment for CourseEnv {
    fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        let course = crate::world::CourseConfig { seed: seed::derive(self.course.seed, episode), ..self.course.clone() };
        self.world = Some(crate::world::World::new(course, self.dynamics.clone())?);
        self.episode = episode;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<(f64, Vec<f64>, bool, Outcome)> {
        let w = self.world.as_mut().ok_or_else(|| Error::config("environment not reset"))?;
        let a = Action::from_index(action).ok_or_else(|| Error::data("action index out of range"))?;
        let prev_x = w.state().position.x;
        let out = w.step_action(a)?;
        let r = reward(prev_x, w.state().position.x, &out, self.lambda);
        let c = out.classification;
        let terminal = matches!(c, Outcome::Collision | Outcome::OutOfBounds | Outcome::Completed);
        Ok((r, self.observe()?, terminal, c))
    }
}
