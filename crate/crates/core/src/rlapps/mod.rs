//! DQN machinery and the two RIC applications: a per-flow traffic-steering
//! xApp and a small-cell sleeping rApp.

pub mod dqn;
pub mod mlp;
pub mod sleeping;
pub mod steering;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dqn::{act, td_targets, DqnAgent, DqnConfig, EpsilonSchedule, ReplayBuffer, Transition};
pub use mlp::Mlp;
pub use sleeping::{sleeping_reward, SleepingApp, SleepingConfig};
pub use steering::{steering_reward, SteeringApp, SteeringConfig};

use crate::checkpoint;
use crate::error::Result;
use crate::forecast::tape::Mat;

pub const STEERING_KIND: &str = "steering-dqn";
pub const SLEEPING_KIND: &str = "sleeping-dqn";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: DqnConfig,
    steps: u64,
    updates: u64,
}

fn save_agent(agent: &DqnAgent, path: &Path, kind: &str) -> Result<()> {
    let header = Header { config: agent.config.clone(), steps: agent.steps, updates: agent.updates };
    let names: Vec<String> = (0..agent.online.params.len()).map(|i| format!("q.{i}")).collect();
    let tensors: Vec<(&str, &Mat)> = names.iter().map(String::as_str).zip(&agent.online.params).collect();
    checkpoint::write(path, kind, &header, &tensors)
}

fn load_agent(path: &Path, kind: &str, seed: u64) -> Result<DqnAgent> {
    let (header, tensors): (Header, _) = checkpoint::read(path, kind)?;
    let mut agent = DqnAgent::from_network(header.config, Mlp::from_params(tensors), seed)?;
    agent.steps = header.steps;
    agent.updates = header.updates;
    Ok(agent)
}

pub fn save_steering(app: &SteeringApp, path: &Path) -> Result<()> {
    save_agent(&app.agent, path, STEERING_KIND)
}

pub fn load_steering(config: SteeringConfig, path: &Path, seed: u64) -> Result<SteeringApp> {
    let agent = load_agent(path, STEERING_KIND, seed)?;
    check_shape(&agent, config.state_dim(), config.candidates)?;
    Ok(SteeringApp::with_agent(config, agent, seed))
}

pub fn save_sleeping(app: &SleepingApp, path: &Path) -> Result<()> {
    save_agent(&app.agent, path, SLEEPING_KIND)
}

pub fn load_sleeping(config: SleepingConfig, path: &Path, seed: u64) -> Result<SleepingApp> {
    let agent = load_agent(path, SLEEPING_KIND, seed)?;
    check_shape(&agent, config.state_dim(), config.n_actions())?;
    Ok(SleepingApp::with_agent(config, agent))
}

fn check_shape(agent: &DqnAgent, state_dim: usize, n_actions: usize) -> Result<()> {
    if agent.state_dim() != state_dim || agent.n_actions() != n_actions {
        return Err(crate::Error::Checkpoint(format!(
            "agent expects {} inputs and {} actions, config needs {state_dim} and {n_actions}",
            agent.state_dim(),
            agent.n_actions()
        )));
    }
    Ok(())
}

/// Per-episode reward log with header `episode,reward`.
pub fn write_episode_rewards(path: &Path, rewards: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "reward"])?;
    for (i, r) in rewards.iter().enumerate() {
        w.write_record([i.to_string(), format!("{r}")])?;
    }
    w.flush()?;
    Ok(())
}
