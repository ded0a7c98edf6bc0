//! Traffic-steering xApp: picks a serving station for every flow with new
//! demand, among the UE's strongest active stations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::{DqnAgent, DqnConfig, Transition};
use crate::error::{Error, Result};
use crate::netsim::{FlowFrameStats, FrameOutcome, Network};
use crate::traffic::{ClassName, FlowDemand, TrafficClassSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// Candidate stations offered per decision (strongest first).
    pub candidates: usize,
    pub w_throughput: f64,
    pub w_delay: f64,
    /// Load values are clipped to this before scaling into [0, 1].
    pub load_cap: f64,
    pub sinr_floor_db: f64,
    pub sinr_ceiling_db: f64,
    /// Gradient steps taken after every training frame.
    pub updates_per_frame: usize,
    pub dqn: DqnConfig,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            candidates: 3,
            w_throughput: 0.5,
            w_delay: 0.5,
            load_cap: 2.0,
            sinr_floor_db: -10.0,
            sinr_ceiling_db: 40.0,
            updates_per_frame: 4,
            dqn: DqnConfig::default(),
        }
    }
}

impl SteeringConfig {
    pub fn state_dim(&self) -> usize {
        3 + 2 * self.candidates
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || !(self.load_cap > 0.0) || !(self.sinr_ceiling_db > self.sinr_floor_db) {
            return Err(Error::Rl("steering needs candidates > 0, a positive load cap and a valid SINR range".into()));
        }
        if self.w_throughput < 0.0 || self.w_delay < 0.0 {
            return Err(Error::Rl("reward weights must be non-negative".into()));
        }
        self.dqn.validate()
    }

    /// Class one-hot, then candidate loads and SINRs, each scaled to [0, 1].
    /// Missing candidates are padded as fully loaded with the floor SINR.
    pub fn state(&self, class: ClassName, loads: &[f64], sinrs_db: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.state_dim()];
        s[class.index()] = 1.0;
        for i in 0..self.candidates {
            s[3 + i] = loads.get(i).map_or(1.0, |l| l.clamp(0.0, self.load_cap) / self.load_cap);
            s[3 + self.candidates + i] = sinrs_db.get(i).map_or(0.0, |&d| {
                ((d - self.sinr_floor_db) / (self.sinr_ceiling_db - self.sinr_floor_db)).clamp(0.0, 1.0)
            });
        }
        s
    }

    pub fn reward(&self, throughput_mbps: f64, latency_ms: f64, spec: &TrafficClassSpec) -> f64 {
        steering_reward(throughput_mbps, latency_ms, spec, self.w_throughput, self.w_delay)
    }
}

/// `w_t * min(1, thr / qos_thr) - w_d * min(1, delay / budget)`
pub fn steering_reward(throughput_mbps: f64, latency_ms: f64, spec: &TrafficClassSpec, w_t: f64, w_d: f64) -> f64 {
    w_t * (throughput_mbps / spec.qos_throughput_mbps).min(1.0) - w_d * (latency_ms / spec.qos_delay_budget_ms).min(1.0)
}

/// Reward of one flow's frame statistics.
pub fn flow_reward(cfg: &SteeringConfig, stats: &FlowFrameStats, classes: &[TrafficClassSpec]) -> f64 {
    cfg.reward(stats.throughput_mbps, stats.latency_ms, &classes[stats.class.index()])
}

#[derive(Debug, Clone)]
struct Open {
    state: Vec<f64>,
    action: usize,
    reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SteeringApp {
    pub config: SteeringConfig,
    pub agent: DqnAgent,
    active: bool,
    open: Vec<Option<Open>>,
    decided: Vec<usize>,
    rewards: Vec<(usize, f64)>,
    order_rng: ChaCha8Rng,
}

impl SteeringApp {
    pub fn new(config: SteeringConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let agent = DqnAgent::new(config.dqn.clone(), config.state_dim(), config.candidates, seed)?;
        Ok(Self::with_agent(config, agent, seed))
    }

    pub fn with_agent(config: SteeringConfig, agent: DqnAgent, seed: u64) -> Self {
        SteeringApp {
            config,
            agent,
            active: false,
            open: Vec::new(),
            decided: Vec::new(),
            rewards: Vec::new(),
            order_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EE7),
        }
    }

    pub fn set_active(&mut self, active: bool) {
        self.active = active;
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Chooses among `n_valid` candidates for one flow.
    pub fn decide_flow(&mut self, state: &[f64], n_valid: usize, explore: bool) -> Result<usize> {
        if !self.active {
            return Err(Error::ConstraintViolation("steering xApp invoked while inactive".into()));
        }
        if n_valid == 0 {
            return Err(Error::Rl("no candidate station".into()));
        }
        if n_valid == 1 {
            return Ok(0);
        }
        let allowed: Vec<bool> = (0..self.config.candidates).map(|i| i < n_valid).collect();
        Ok(if explore { self.agent.act(state, Some(&allowed)) } else { self.agent.greedy(state, Some(&allowed)) })
    }

    /// Assignment for the coming frame. Flows with new demand are decided in
    /// a seeded random order; each sees the loads left by earlier decisions.
    /// Flows without new demand keep their station.
    pub fn decide_frame(&mut self, net: &Network, demand: &[FlowDemand], frame_s: f64, explore: bool) -> Result<Vec<usize>> {
        if !self.active {
            return Err(Error::ConstraintViolation("steering xApp invoked while inactive".into()));
        }
        let n = net.n_flows();
        if self.open.len() != n {
            self.open = vec![None; n];
        }
        let mut assignment = net.current_assignment();
        let mut load = vec![0.0; net.n_bs()];
        let share = |f: usize, bs: usize, extra: u64| {
            let (ue, _) = net.flow_key(f);
            (net.flow_queued_bits(f) + extra) as f64 / (net.rate_bps(ue, bs) * frame_s)
        };
        let mut deciding = Vec::new();
        for f in 0..n {
            if demand[f].bits > 0 {
                deciding.push(f);
            } else if net.flow_queued_bits(f) > 0 {
                load[assignment[f]] += share(f, assignment[f], 0);
            }
        }
        deciding.shuffle(&mut self.order_rng);
        self.decided.clear();
        for f in deciding {
            let (ue, class) = net.flow_key(f);
            let cands = net.candidates(ue, self.config.candidates);
            let after: Vec<f64> = cands.iter().map(|&b| load[b] + share(f, b, demand[f].bits)).collect();
            let sinrs: Vec<f64> = cands.iter().map(|&b| net.sinr_db(ue, b)).collect();
            let state = self.config.state(class, &after, &sinrs);
            let a = self.decide_flow(&state, cands.len(), explore)?;
            let bs = cands[a];
            load[bs] = after[a];
            assignment[f] = bs;
            if explore {
                if let Some(Open { state: s, action, reward: Some(r) }) = self.open[f].take() {
                    self.agent.observe(Transition { state: s, action, reward: r, next_state: state.clone(), terminal: false })?;
                }
                self.open[f] = Some(Open { state, action: a, reward: None });
            }
            self.decided.push(f);
        }
        Ok(assignment)
    }

    /// Scores the flows decided this frame and, when training, takes the
    /// configured number of gradient steps. Returns the mean reward.
    pub fn observe_frame(&mut self, outcome: &FrameOutcome, classes: &[TrafficClassSpec], train: bool) -> Result<f64> {
        self.rewards.clear();
        for &f in &self.decided {
            let r = flow_reward(&self.config, &outcome.per_flow[f], classes);
            self.rewards.push((f, r));
            if let Some(o) = self.open.get_mut(f).and_then(Option::as_mut) {
                o.reward = Some(r);
            }
        }
        if train {
            for _ in 0..self.config.updates_per_frame {
                self.agent.train_step()?;
            }
        }
        let n = self.rewards.len();
        Ok(if n == 0 { 0.0 } else { self.rewards.iter().map(|r| r.1).sum::<f64>() / n as f64 })
    }

    /// (flow, reward) pairs of the last observed frame.
    pub fn last_rewards(&self) -> &[(usize, f64)] {
        &self.rewards
    }

    /// Closes every open decision as a terminal transition.
    pub fn finish_episode(&mut self) -> Result<()> {
        for slot in self.open.iter_mut() {
            if let Some(Open { state, action, reward: Some(r) }) = slot.take() {
                self.agent.observe(Transition { next_state: state.clone(), state, action, reward: r, terminal: true })?;
            }
        }
        self.decided.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn state_layout() {
        let cfg = SteeringConfig::default();
        let s = cfg.state(ClassName::Gaming, &[0.5, 4.0], &[15.0, -20.0]);
        assert_eq!(s.len(), 9);
        assert_eq!(&s[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&s[3..6], &[0.25, 1.0, 1.0]);
        assert_eq!(&s[6..9], &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn inactive_app_refuses() {
        let mut app = SteeringApp::new(SteeringConfig::default(), 0).unwrap();
        assert!(matches!(app.decide_flow(&[0.0; 9], 3, false), Err(Error::ConstraintViolation(_))));
        app.set_active(true);
        assert_eq!(app.decide_flow(&[0.3; 9], 1, true).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn reward_is_bounded(thr in 0.0f64..1e3, lat in 0.0f64..1e4, c in 0usize..3) {
            let spec = &TrafficClassSpec::reference_table()[c];
            let r = steering_reward(thr, lat, spec, 0.5, 0.5);
            prop_assert!((-0.5..=0.5).contains(&r));
        }
    }
}
