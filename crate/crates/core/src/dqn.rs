//! Deep Q-learning agent: experience replay, epsilon-greedy selection,
//! semi-gradient TD targets from a softly updated target network.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{adam_step, td_batch_loss_and_grad, AdamState, BatchCache, Gradients, Mlp, MlpCheckpoint};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO ring of transitions, stored as flat arrays.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dim: usize,
    len: usize,
    head: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Domain("replay capacity and state dim must be > 0".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            dim,
            len: 0,
            head: 0,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        self.push_parts(&t.state, t.action, t.reward, &t.next_state, t.terminal)
    }

    pub fn push_parts(&mut self, state: &[f64], action: usize, reward: f64, next_state: &[f64], terminal: bool) -> Result<()> {
        for v in [state, next_state] {
            if v.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        if self.len < self.capacity {
            // Storage grows lazily so small runs do not reserve the full capacity.
            self.states.extend_from_slice(state);
            self.next_states.extend_from_slice(next_state);
            self.actions.push(action);
            self.rewards.push(reward);
            self.terminals.push(terminal);
            self.len += 1;
        } else {
            let i = self.head;
            let d = self.dim;
            self.states[i * d..(i + 1) * d].copy_from_slice(state);
            self.next_states[i * d..(i + 1) * d].copy_from_slice(next_state);
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.terminals[i] = terminal;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Storage slot `i` (not insertion order once the ring has wrapped).
    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| {
            let d = self.dim;
            Transition {
                state: self.states[i * d..(i + 1) * d].to_vec(),
                action: self.actions[i],
                reward: self.rewards[i],
                next_state: self.next_states[i * d..(i + 1) * d].to_vec(),
                terminal: self.terminals[i],
            }
        })
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.head };
        (0..self.len).map(move |k| self.get((start + k) % self.len).unwrap())
    }

    /// Uniform indices with replacement; `None` only for an empty buffer.
    /// Batch readiness is checked by the agent before training.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        (self.len > 0).then(|| (0..n).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<Transition>> {
        self.sample_indices(n, rng)
            .map(|idx| idx.into_iter().map(|i| self.get(i).unwrap()).collect())
    }
}

/// Linear decay from `eps_start` to `eps_end` over `decay_horizon` episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_horizon: f64,
}

impl EpsilonSchedule {
    /// Decays over the first 80% of a training run.
    pub fn for_episodes(episodes: usize) -> Self {
        EpsilonSchedule {
            eps_start: 1.0,
            eps_end: 0.01,
            decay_horizon: 0.8 * episodes as f64,
        }
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let e = episode as f64;
        if self.decay_horizon <= 0.0 || e >= self.decay_horizon {
            return self.eps_end;
        }
        self.eps_start + (self.eps_end - self.eps_start) * e / self.decay_horizon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_start >= self.eps_end && self.eps_end > 0.0 && self.eps_start <= 1.0) {
            return Err(Error::Domain(format!(
                "epsilon schedule needs 1 >= start >= end > 0 (got {}, {})",
                self.eps_start, self.eps_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![1000, 1000],
            lr: 1e-3,
            gamma: 0.99,
            tau: 1e-5,
            batch_size: 64,
            replay_capacity: 100_000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma must be in [0, 1] (got {})", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Domain(format!("tau must be in (0, 1] (got {})", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("lr must be > 0 (got {})", self.lr)));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Domain("need 0 < batch_size <= replay_capacity".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Domain("hidden layer widths must be > 0".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(n_actions);
        dims
    }
}

#[derive(Debug, Default, Clone)]
struct Scratch {
    indices: Vec<usize>,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    targets: Vec<f64>,
    online_cache: BatchCache,
    target_cache: BatchCache,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: Mlp,
    target: Mlp,
    adam: AdamState,
    buffer: ReplayBuffer,
    gamma: f64,
    tau: f64,
    batch_size: usize,
    n_actions: usize,
    queries: u64,
    grads: Gradients,
    scratch: Scratch,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, n_actions: usize, cfg: &DqnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let online = Mlp::new(&cfg.layer_dims(input_dim, n_actions), rng)?;
        Self::from_networks(online.clone(), online, cfg)
    }

    pub fn from_networks(online: Mlp, target: Mlp, cfg: &DqnConfig) -> Result<Self> {
        cfg.validate()?;
        if online.layer_dims() != target.layer_dims() {
            return Err(Error::Domain("online and target networks differ in shape".into()));
        }
        Ok(DqnAgent {
            adam: AdamState::new(&online, cfg.lr),
            buffer: ReplayBuffer::new(cfg.replay_capacity, online.input_dim())?,
            gamma: cfg.gamma,
            tau: cfg.tau,
            batch_size: cfg.batch_size,
            n_actions: online.output_dim(),
            queries: 0,
            grads: Gradients::zeros_like(&online),
            scratch: Scratch::default(),
            online,
            target,
        })
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.online.input_dim()
    }

    /// Number of network evaluations made through [`select_action`](Self::select_action).
    pub fn query_count(&self) -> u64 {
        self.queries
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn greedy_action(&mut self, state: &[f64]) -> Result<usize> {
        self.queries += 1;
        Ok(argmax(&self.online.forward(state)?))
    }

    /// Epsilon-greedy choice. The exploration coin is only tossed when `eps > 0`.
    pub fn select_action<R: Rng + ?Sized>(&mut self, state: &[f64], eps: f64, rng: &mut R) -> Result<usize> {
        if state.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        if eps > 0.0 && rng.gen::<f64>() < eps {
            return Ok(rng.gen_range(0..self.n_actions));
        }
        self.greedy_action(state)
    }

    pub fn td_target(&self, t: &Transition) -> Result<f64> {
        if t.terminal {
            return Ok(t.reward);
        }
        let q = self.target.forward(&t.next_state)?;
        Ok(t.reward + self.gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn remember(&mut self, t: &Transition) -> Result<()> {
        self.buffer.push(t)
    }

    pub fn remember_parts(&mut self, state: &[f64], action: usize, reward: f64, next_state: &[f64], terminal: bool) -> Result<()> {
        if action >= self.n_actions {
            return Err(Error::Domain(format!("action {action} out of range")));
        }
        self.buffer.push_parts(state, action, reward, next_state, terminal)
    }

    /// One minibatch update followed by a soft target update. Returns `None`
    /// without touching any parameter when the buffer holds fewer than a batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let n = self.batch_size;
        if self.buffer.len() < n {
            return Ok(None);
        }
        let d = self.buffer.dim;
        let s = &mut self.scratch;
        s.indices.clear();
        s.indices.extend((0..n).map(|_| rng.gen_range(0..self.buffer.len)));
        s.states.clear();
        s.next_states.clear();
        s.actions.clear();
        for &i in &s.indices {
            s.states.extend_from_slice(&self.buffer.states[i * d..(i + 1) * d]);
            s.next_states.extend_from_slice(&self.buffer.next_states[i * d..(i + 1) * d]);
            s.actions.push(self.buffer.actions[i]);
        }
        let q_next = self.target.forward_batch(&s.next_states, n, &mut s.target_cache)?;
        s.targets.clear();
        for (k, &i) in s.indices.iter().enumerate() {
            let r = self.buffer.rewards[i];
            let y = if self.buffer.terminals[i] {
                r
            } else {
                let row = &q_next[k * self.n_actions..(k + 1) * self.n_actions];
                r + self.gamma * row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            s.targets.push(y);
        }
        let loss = td_batch_loss_and_grad(
            &self.online,
            &s.states,
            &s.actions,
            &s.targets,
            &mut s.online_cache,
            &mut self.grads,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("TD loss {loss}")));
        }
        adam_step(&mut self.online, &self.grads, &mut self.adam)?;
        soft_update(&self.online, &mut self.target, self.tau)?;
        Ok(Some(loss))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            online: MlpCheckpoint::new(&self.online, Some(&self.adam)),
            target: MlpCheckpoint::new(&self.target, None),
            gamma: self.gamma,
            tau: self.tau,
            batch_size: self.batch_size,
            replay_capacity: self.buffer.capacity,
            replay_len: self.buffer.len,
        }
    }

    /// Rebuilds an agent from a checkpoint with an empty replay buffer.
    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        let (online, adam) = ck.online.into_parts()?;
        let (target, _) = ck.target.into_parts()?;
        let adam = adam.ok_or_else(|| Error::Domain("checkpoint lacks optimizer state".into()))?;
        let cfg = DqnConfig {
            hidden: online.layer_dims()[1..online.layer_dims().len() - 1].to_vec(),
            lr: adam.lr,
            gamma: ck.gamma,
            tau: ck.tau,
            batch_size: ck.batch_size,
            replay_capacity: ck.replay_capacity,
        };
        let mut agent = Self::from_networks(online, target, &cfg)?;
        agent.adam = adam;
        Ok(agent)
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn soft_update(online: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    target.blend_from(online, tau)
}

/// Agent parameters and replay metadata; replay contents are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub online: MlpCheckpoint,
    pub target: MlpCheckpoint,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub replay_len: usize,
}

impl AgentCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
