//! Deep Q-learning: replay buffer, exploration schedule, TD targets and the agent.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{argmax, Mlp};
use crate::error::{Error, Result};
use crate::forecast::tape::Mat;
use crate::forecast::train::{global_norm, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Steps after the initial exploration phase over which epsilon decays linearly.
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    /// Adam step size of the online network.
    pub alpha: f64,
    pub batch_size: usize,
    pub initial_explore_steps: u64,
    pub target_sync_every: u64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub hidden_dims: Vec<usize>,
    /// Global gradient-norm bound; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    10.0
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.9,
            alpha: 0.5,
            batch_size: 32,
            initial_explore_steps: 3000,
            target_sync_every: 1000,
            epsilon: EpsilonSchedule::default(),
            buffer_capacity: 50_000,
            hidden_dims: vec![64, 64],
            grad_clip: default_clip(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Rl(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::Rl("epsilon bounds must lie in [0, 1]".into()));
        }
        if !(self.alpha >= 0.0) || self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_every == 0 {
            return Err(Error::Rl("alpha, batch size, buffer capacity and sync period must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Rl("hidden layers need at least one unit".into()));
        }
        Ok(())
    }

    /// Exploration rate at `step` (0-based count of previous actions).
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if step < self.initial_explore_steps {
            return 1.0;
        }
        let e = &self.epsilon;
        let k = step - self.initial_explore_steps;
        if e.decay_steps == 0 || k >= e.decay_steps {
            return e.end;
        }
        e.start + (e.end - e.start) * k as f64 / e.decay_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite() && self.state.iter().chain(&self.next_state).all(|v| v.is_finite())
    }
}

/// Fixed-capacity FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

/// Epsilon-greedy action: uniform over allowed actions during the initial
/// exploration phase, then greedy with probability `1 - epsilon`.
pub fn act<R: Rng + ?Sized>(
    qnet: &Mlp,
    state: &[f64],
    step: u64,
    cfg: &DqnConfig,
    allowed: Option<&[bool]>,
    rng: &mut R,
) -> usize {
    debug_assert_eq!(state.len(), qnet.input_dim(), "state dimension does not match the network");
    let eps = cfg.epsilon_at(step);
    if eps >= 1.0 || (eps > 0.0 && rng.random::<f64>() < eps) {
        let choices: Vec<usize> = (0..qnet.output_dim()).filter(|&a| allowed.is_none_or(|m| m[a])).collect();
        return choices[rng.random_range(0..choices.len())];
    }
    argmax(&qnet.q_values(state), allowed)
}

/// `y = r` for terminal transitions, else `r + gamma * max_a Q_target(s', a)`.
pub fn td_targets(batch: &[&Transition], target: &Mlp, gamma: f64) -> Vec<f64> {
    assert!(!batch.is_empty(), "empty batch");
    let dim = batch[0].next_state.len();
    let next = Mat::from_vec(batch.len(), dim, batch.iter().flat_map(|t| t.next_state.iter().copied()).collect());
    let q = target.forward(&next);
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                t.reward
            } else {
                let m = q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                t.reward + gamma * m
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub online: Mlp,
    pub target: Mlp,
    pub buffer: ReplayBuffer,
    adam: Adam,
    rng: ChaCha8Rng,
    pub steps: u64,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, state_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(state_dim, &config.hidden_dims, n_actions, &mut rng);
        Ok(Self::assemble(config, online, rng))
    }

    fn assemble(config: DqnConfig, online: Mlp, rng: ChaCha8Rng) -> Self {
        let adam = Adam::new(&online.params, config.alpha, 0.9, 0.999, 1e-8);
        DqnAgent {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            target: online.clone(),
            online,
            adam,
            rng,
            steps: 0,
            updates: 0,
            config,
        }
    }

    /// Rebuilds an agent around trained weights, e.g. from a checkpoint.
    pub fn from_network(config: DqnConfig, online: Mlp, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self::assemble(config, online, ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn state_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.online.output_dim()
    }

    /// Exploring action; advances the step counter.
    pub fn act(&mut self, state: &[f64], allowed: Option<&[bool]>) -> usize {
        let a = act(&self.online, state, self.steps, &self.config, allowed, &mut self.rng);
        self.steps += 1;
        a
    }

    pub fn greedy(&self, state: &[f64], allowed: Option<&[bool]>) -> usize {
        argmax(&self.online.q_values(state), allowed)
    }

    pub fn observe(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Rl("non-finite transition".into()));
        }
        if t.state.len() != self.state_dim() || t.next_state.len() != self.state_dim() || t.action >= self.n_actions() {
            return Err(Error::Rl("transition does not match the agent's state or action space".into()));
        }
        self.buffer.push(t);
        Ok(())
    }

    /// One gradient step on a seeded uniform minibatch. `None` while the
    /// buffer holds fewer transitions than a batch.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            return Ok(None);
        }
        let picks = index::sample(&mut self.rng, self.buffer.len(), b).into_vec();
        let batch: Vec<&Transition> = picks.iter().map(|&i| self.buffer.get(i)).collect();
        let targets = td_targets(&batch, &self.target, self.config.gamma);
        let dim = self.state_dim();
        let states = Mat::from_vec(b, dim, batch.iter().flat_map(|t| t.state.iter().copied()).collect());
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, mut grads) = self.online.td_loss_and_grad(&states, &actions, &targets);
        let norm = global_norm(&grads);
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let s = self.config.grad_clip / norm;
            grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
        }
        self.adam.step(&mut self.online.params, &grads);
        if self.online.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { layer: "q-network".into() });
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_sync_every) {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(reward: f64, terminal: bool) -> Transition {
        Transition { state: vec![0.0, 1.0], action: 0, reward, next_state: vec![1.0, 0.0], terminal }
    }

    /// A network whose output is a constant vector, set through the last bias.
    fn constant_net(values: &[f64]) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Mlp::new(2, &[4], values.len(), &mut rng);
        m.params[2].data.iter_mut().for_each(|w| *w = 0.0);
        m.params[3].data.copy_from_slice(values);
        m
    }

    #[test]
    fn td_target_values() {
        let net = constant_net(&[1.0, 2.0, -1.0]);
        let term = t(1.0, true);
        let live = t(0.5, false);
        let y = td_targets(&[&term, &live], &net, 0.9);
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 2.3).abs() < 1e-12);
        assert_eq!(td_targets(&[&live], &net, 0.0), vec![0.5]);
    }

    #[test]
    fn greedy_act_ties_to_lowest() {
        let cfg = DqnConfig { initial_explore_steps: 0, epsilon: EpsilonSchedule { start: 0.0, end: 0.0, decay_steps: 0 }, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(act(&constant_net(&[1.0, 3.0, 2.0]), &[0.0, 0.0], 10, &cfg, None, &mut rng), 1);
        assert_eq!(act(&constant_net(&[5.0, 5.0, 1.0]), &[0.0, 0.0], 10, &cfg, None, &mut rng), 0);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig { epsilon: EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 100 }, ..Default::default() };
        assert_eq!(cfg.epsilon_at(2999), 1.0);
        assert_eq!(cfg.epsilon_at(3000), 1.0);
        assert!((cfg.epsilon_at(3050) - 0.55).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(3100), 0.1);
        assert_eq!(cfg.epsilon_at(1_000_000), 0.1);
    }

    #[test]
    fn buffer_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i as f64, false));
        }
        assert_eq!(b.len(), 3);
        assert_eq!((0..3).map(|i| b.get(i).reward).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn small_buffer_is_a_no_op() {
        let mut a = DqnAgent::new(DqnConfig { alpha: 1e-3, ..Default::default() }, 2, 2, 0).unwrap();
        a.observe(t(1.0, true)).unwrap();
        let before = a.online.clone();
        assert_eq!(a.train_step().unwrap(), None);
        assert_eq!(a.online, before);
        assert_eq!(a.updates, 0);
    }

    #[test]
    fn rejects_bad_config_and_transitions() {
        assert!(DqnConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(DqnConfig { epsilon: EpsilonSchedule { start: 1.2, end: 0.0, decay_steps: 1 }, ..Default::default() }.validate().is_err());
        let mut a = DqnAgent::new(DqnConfig::default(), 2, 2, 0).unwrap();
        assert!(a.observe(t(f64::NAN, true)).is_err());
        assert!(a.observe(Transition { action: 5, ..t(0.0, true) }).is_err());
    }
}
