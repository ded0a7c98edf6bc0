//! Cell-sleeping rApp: chooses which small cells sleep for the next
//! decision epoch. The macro cell is never part of the mask.

use serde::{Deserialize, Serialize};

use super::dqn::{DqnAgent, DqnConfig, Transition};
use crate::error::{Error, Result};
use crate::netsim::BsFrameStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SleepingConfig {
    pub small_cells: usize,
    /// Frames between decisions.
    pub epoch_frames: u64,
    /// Penalty per overloaded active station.
    pub lambda: f64,
    /// Load share above which an active station counts as overloaded.
    pub overload_threshold: f64,
    pub load_cap: f64,
    /// Backlog that maps to a normalised queue of 1.
    pub queue_norm_mbit: f64,
    /// Gradient steps after every training decision.
    pub updates_per_decision: usize,
    pub dqn: DqnConfig,
}

impl Default for SleepingConfig {
    fn default() -> Self {
        SleepingConfig {
            small_cells: 4,
            epoch_frames: 60,
            lambda: 1.0,
            overload_threshold: 0.9,
            load_cap: 2.0,
            queue_norm_mbit: 100.0,
            updates_per_decision: 4,
            dqn: DqnConfig::default(),
        }
    }
}

impl SleepingConfig {
    pub fn n_actions(&self) -> usize {
        1 << self.small_cells
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.small_cells + 1) + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.small_cells == 0 || self.small_cells > 8 || self.epoch_frames == 0 {
            return Err(Error::Rl("sleeping needs 1..=8 small cells and a positive epoch".into()));
        }
        if !(self.load_cap > 0.0) || !(self.queue_norm_mbit > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Rl("sleeping normalisers must be positive and lambda non-negative".into()));
        }
        self.dqn.validate()
    }

    /// Per-station loads, per-station queues, then the time of day as sin/cos.
    pub fn state(&self, per_bs: &[BsFrameStats], day_fraction: f64) -> Vec<f64> {
        let mut s: Vec<f64> = per_bs.iter().map(|b| b.load.clamp(0.0, self.load_cap) / self.load_cap).collect();
        s.extend(per_bs.iter().map(|b| (b.backlog_bits as f64 / (self.queue_norm_mbit * 1e6)).min(1.0)));
        let phase = 2.0 * std::f64::consts::PI * day_fraction;
        s.push(phase.sin());
        s.push(phase.cos());
        s
    }

    pub fn reward(&self, per_bs: &[BsFrameStats], frame_s: f64) -> f64 {
        sleeping_reward(per_bs, frame_s, self.lambda, self.overload_threshold)
    }
}

/// Network throughput per watt (Mbit/J) minus `lambda` per active station
/// whose load exceeds `overload_threshold`.
pub fn sleeping_reward(per_bs: &[BsFrameStats], frame_s: f64, lambda: f64, overload_threshold: f64) -> f64 {
    let thr: f64 = per_bs.iter().map(|b| b.throughput_mbps(frame_s)).sum();
    let power: f64 = per_bs.iter().map(|b| b.power_w).sum();
    let overloaded = per_bs.iter().filter(|b| b.active && b.load > overload_threshold).count();
    let ee = if power > 0.0 { thr / power } else { 0.0 };
    ee - lambda * overloaded as f64
}

#[derive(Debug, Clone)]
struct Pending {
    state: Vec<f64>,
    action: usize,
    reward_sum: f64,
    frames: u64,
}

#[derive(Debug, Clone)]
pub struct SleepingApp {
    pub config: SleepingConfig,
    pub agent: DqnAgent,
    active: bool,
    pending: Option<Pending>,
}

impl SleepingApp {
    pub fn new(config: SleepingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let agent = DqnAgent::new(config.dqn.clone(), config.state_dim(), config.n_actions(), seed)?;
        Ok(Self::with_agent(config, agent))
    }

    pub fn with_agent(config: SleepingConfig, agent: DqnAgent) -> Self {
        SleepingApp { config, agent, active: false, pending: None }
    }

    pub fn set_active(&mut self, active: bool) {
        self.active = active;
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Sleep mask for the next epoch. When exploring, the previous decision
    /// is stored with its mean per-frame reward and the agent trains.
    pub fn decide(&mut self, state: &[f64], explore: bool) -> Result<u32> {
        if !self.active {
            return Err(Error::ConstraintViolation("cell-sleeping rApp invoked while inactive".into()));
        }
        if !explore {
            return Ok(self.agent.greedy(state, None) as u32);
        }
        if let Some(p) = self.pending.take() {
            if p.frames > 0 {
                let reward = p.reward_sum / p.frames as f64;
                self.agent.observe(Transition { state: p.state, action: p.action, reward, next_state: state.to_vec(), terminal: false })?;
                for _ in 0..self.config.updates_per_decision {
                    self.agent.train_step()?;
                }
            }
        }
        let a = self.agent.act(state, None);
        self.pending = Some(Pending { state: state.to_vec(), action: a, reward_sum: 0.0, frames: 0 });
        Ok(a as u32)
    }

    /// Adds one frame's reward to the open decision and returns it.
    pub fn record_frame(&mut self, per_bs: &[BsFrameStats], frame_s: f64) -> f64 {
        let r = self.config.reward(per_bs, frame_s);
        if let Some(p) = self.pending.as_mut() {
            p.reward_sum += r;
            p.frames += 1;
        }
        r
    }

    /// Closes the open decision as terminal.
    pub fn finish_episode(&mut self) -> Result<()> {
        if let Some(p) = self.pending.take() {
            if p.frames > 0 {
                let reward = p.reward_sum / p.frames as f64;
                self.agent.observe(Transition { next_state: p.state.clone(), state: p.state, action: p.action, reward, terminal: true })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(id: usize, active: bool, load: f64, served_mbit: u64, power_w: f64) -> BsFrameStats {
        BsFrameStats { bs_id: id, active, load, util: load.min(1.0), served_bits: served_mbit * 1_000_000, backlog_bits: 0, power_w }
    }

    #[test]
    fn overload_penalty_is_lambda_each() {
        let calm = vec![bs(0, true, 0.5, 40, 100.0), bs(1, true, 0.2, 10, 50.0), bs(2, false, 0.0, 0, 10.0)];
        let base = sleeping_reward(&calm, 1.0, 1.0, 0.9);
        assert!((base - 50.0 / 160.0).abs() < 1e-12);
        let mut hot = calm.clone();
        hot[0].load = 1.3;
        hot[1].load = 0.95;
        let r = sleeping_reward(&hot, 1.0, 1.0, 0.9);
        assert!((base - r - 2.0).abs() < 1e-12);
        // Sleeping stations never count as overloaded.
        hot[2].load = 5.0;
        assert_eq!(sleeping_reward(&hot, 1.0, 1.0, 0.9), r);
    }

    #[test]
    fn state_layout_and_actions() {
        let cfg = SleepingConfig::default();
        assert_eq!(cfg.n_actions(), 16);
        let per_bs: Vec<_> = (0..5).map(|i| bs(i, true, i as f64 * 0.5, 0, 1.0)).collect();
        let s = cfg.state(&per_bs, 0.25);
        assert_eq!(s.len(), cfg.state_dim());
        assert_eq!(&s[..5], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((s[10] - 1.0).abs() < 1e-12 && s[11].abs() < 1e-12);
    }

    #[test]
    fn inactive_app_refuses() {
        let mut app = SleepingApp::new(SleepingConfig::default(), 0).unwrap();
        let s = vec![0.0; 12];
        assert!(matches!(app.decide(&s, false), Err(Error::ConstraintViolation(_))));
        app.set_active(true);
        assert!(app.decide(&s, true).unwrap() < 16);
    }
}
