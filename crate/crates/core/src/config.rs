//! Run configuration: one TOML document covering every stage.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::{ModelConfig, TrainConfig};
use crate::netsim::TopologyConfig;
use crate::orchestrator::{AdjustPolicy, Thresholds};
use crate::par::Parallelism;
use crate::pipeline::SgFilterConfig;
use crate::rlapps::{SleepingConfig, SteeringConfig};
use crate::traffic::{ProfileShape, TrafficClassSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Forecast-driven switching between the two apps.
    Proposed,
    AlwaysSteering,
    AlwaysSleeping,
    NoApp,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Proposed, Mode::AlwaysSteering, Mode::AlwaysSleeping, Mode::NoApp];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::AlwaysSteering => "always_steering",
            Mode::AlwaysSleeping => "always_sleeping",
            Mode::NoApp => "no_app",
        }
    }

    pub fn needs_forecaster(self) -> bool {
        self == Mode::Proposed
    }

    pub fn needs_steering(self) -> bool {
        matches!(self, Mode::Proposed | Mode::AlwaysSteering)
    }

    pub fn needs_sleeping(self) -> bool {
        matches!(self, Mode::Proposed | Mode::AlwaysSleeping)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected proposed, always_steering, always_sleeping or no_app")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub classes: Vec<TrafficClassSpec>,
    /// Offered volume at the busiest and quietest time of day (Mbps).
    pub peak_mbps: f64,
    pub trough_mbps: f64,
    pub profile: ProfileShape,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            topology: TopologyConfig::default(),
            classes: TrafficClassSpec::reference_table(),
            peak_mbps: 298.0,
            trough_mbps: 116.0,
            profile: ProfileShape::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frame_ms: u64,
    pub smoothing: SgFilterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { frame_ms: 1000, smoothing: SgFilterConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub steering: SteeringConfig,
    pub sleeping: SleepingConfig,
    /// Passes over the training day.
    pub steering_episodes: usize,
    pub sleeping_episodes: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { steering: SteeringConfig::default(), sleeping: SleepingConfig::default(), steering_episodes: 1, sleeping_episodes: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub thresholds: Thresholds,
    pub lead_frames: u64,
    pub adjust: AdjustPolicy,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { thresholds: Thresholds::default(), lead_frames: 1, adjust: AdjustPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Target volumes of the threshold sweep (Mbps, ascending).
    pub sweep_volumes: Vec<f64>,
    /// Simulated seconds per sweep point.
    pub sweep_segment_s: f64,
    /// Width of the volume bins in the comparison tables (Mbps).
    pub bin_mbps: f64,
    /// Metric name to scale for the logged objective change.
    pub objective: BTreeMap<String, f64>,
    /// Window of the moving-average forecasting baseline (frames).
    pub ma_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sweep_volumes: vec![120.0, 140.0, 190.0, 220.0, 300.0],
            sweep_segment_s: 600.0,
            bin_mbps: 20.0,
            objective: [("throughput_mbps".to_string(), 100.0), ("energy_efficiency".to_string(), 0.1)].into(),
            ma_window: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    /// Simulated seconds of the evaluation run; absent means one profile day.
    pub duration_s: Option<f64>,
    pub parallelism: Parallelism,
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    pub forecaster: ForecasterConfig,
    pub rl: RlConfig,
    pub orchestrator: OrchestratorConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Proposed,
            seed: 0,
            duration_s: None,
            parallelism: Parallelism::default(),
            scenario: ScenarioConfig::default(),
            pipeline: PipelineConfig::default(),
            forecaster: ForecasterConfig::default(),
            rl: RlConfig::default(),
            orchestrator: OrchestratorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("duration_s must be > 0, got {d}")));
            }
        }
        let sc = &self.scenario;
        if sc.classes.len() != 3 {
            return Err(Error::Config("exactly three traffic classes (video, gaming, voice) are required".into()));
        }
        for (i, c) in sc.classes.iter().enumerate() {
            if c.name.index() != i {
                return Err(Error::Config(format!("class {i} must be {}", crate::traffic::ClassName::ALL[i].as_str())));
            }
            c.validate()?;
        }
        if !(sc.trough_mbps > 0.0 && sc.peak_mbps >= sc.trough_mbps) {
            return Err(Error::Config("need 0 < trough_mbps <= peak_mbps".into()));
        }
        if sc.topology.small_cells.len() != self.rl.sleeping.small_cells {
            return Err(Error::Config(format!(
                "topology has {} small cells but the sleeping app is sized for {}",
                sc.topology.small_cells.len(),
                self.rl.sleeping.small_cells
            )));
        }
        if self.pipeline.frame_ms == 0 {
            return Err(Error::Config("frame_ms must be > 0".into()));
        }
        self.pipeline.smoothing.validate()?;
        self.forecaster.model.validate()?;
        self.forecaster.train.validate()?;
        self.rl.steering.validate()?;
        self.rl.sleeping.validate()?;
        self.orchestrator.thresholds.validate()?;
        let ev = &self.eval;
        if ev.sweep_volumes.windows(2).any(|w| w[0] > w[1]) || ev.sweep_volumes.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("sweep_volumes must be non-negative and sorted".into()));
        }
        if !(ev.sweep_segment_s > 0.0) || !(ev.bin_mbps > 0.0) || ev.ma_window == 0 {
            return Err(Error::Config("sweep_segment_s, bin_mbps and ma_window must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    /// Hash ignoring the mode and the execution strategy, shared by comparable runs.
    pub fn scenario_hash(&self) -> String {
        RunConfig { mode: Mode::Proposed, parallelism: Parallelism::default(), ..self.clone() }.hash()
    }
}

/// Independent sub-seed for a named purpose.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
