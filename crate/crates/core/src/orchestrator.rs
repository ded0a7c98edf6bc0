//! Threshold-driven activation of the steering xApp and the sleeping rApp,
//! with a lead time and the rule that at most one of them runs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::KpiRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Predicted volume above which steering runs (Mbps).
    pub th_p: f64,
    /// Predicted volume below which sleeping runs (Mbps).
    pub th_t: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { th_p: 220.0, th_t: 140.0 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.th_t < self.th_p) || !self.th_t.is_finite() || !self.th_p.is_finite() {
            return Err(Error::Orchestrator(format!("need th_t < th_p, got {} and {}", self.th_t, self.th_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    ActivateSteering,
    ActivateSleeping,
    Idle,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::ActivateSteering => "activate_steering",
            Decision::ActivateSleeping => "activate_sleeping",
            Decision::Idle => "idle",
        }
    }
}

/// Strict comparisons: a prediction equal to either threshold is idle.
pub fn decide(t_p: f64, th: &Thresholds) -> Decision {
    if t_p > th.th_p {
        Decision::ActivateSteering
    } else if t_p < th.th_t {
        Decision::ActivateSleeping
    } else {
        Decision::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppKind {
    XApp,
    RApp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDescriptor {
    pub id: String,
    pub kind: AppKind,
    pub improves: BTreeSet<String>,
    /// Whether the app may be activated at all.
    pub capable: bool,
}

pub const STEERING_APP: &str = "traffic-steering";
pub const SLEEPING_APP: &str = "cell-sleeping";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub apps: Vec<AppDescriptor>,
}

impl Default for Registry {
    fn default() -> Self {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Registry {
            apps: vec![
                AppDescriptor {
                    id: STEERING_APP.into(),
                    kind: AppKind::XApp,
                    improves: set(&["throughput_mbps", "latency_ms"]),
                    capable: true,
                },
                AppDescriptor {
                    id: SLEEPING_APP.into(),
                    kind: AppKind::RApp,
                    improves: set(&["energy_efficiency"]),
                    capable: true,
                },
            ],
        }
    }
}

impl Registry {
    pub fn validate(&self) -> Result<()> {
        if self.apps.is_empty() {
            return Err(Error::Orchestrator("app registry is empty".into()));
        }
        if !self.apps.iter().any(|a| a.capable) {
            return Err(Error::Orchestrator("no app in the registry is capable of activation".into()));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&AppDescriptor> {
        self.apps.iter().find(|a| a.id == id)
    }

    fn check_capable(&self, id: &str) -> Result<()> {
        match self.get(id) {
            Some(a) if a.capable => Ok(()),
            Some(_) => Err(Error::ConstraintViolation(format!("app {id} is not capable of activation"))),
            None => Err(Error::Orchestrator(format!("app {id} is not registered"))),
        }
    }
}

/// Activation flags plus activations waiting for their lead time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrchestratorState {
    pub steering: bool,
    pub sleeping: bool,
    /// (effective frame, app), in scheduling order.
    pub pending: VecDeque<(u64, Decision)>,
}

impl OrchestratorState {
    pub fn check(&self) -> Result<()> {
        if self.steering && self.sleeping {
            return Err(Error::ConstraintViolation("steering and sleeping both active".into()));
        }
        Ok(())
    }
}

/// What the caller has to do to the network after a state change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Effects {
    /// The sleeping rApp stopped: every small cell must be woken.
    pub wake_all_cells: bool,
}

/// Requests termination or activation of the two apps. Terminations take
/// effect immediately; activations after `lead_frames`. Asking for both
/// activations at once is a constraint violation.
pub fn request(
    state: &mut OrchestratorState,
    registry: &Registry,
    want_steering: bool,
    want_sleeping: bool,
    frame: u64,
    lead_frames: u64,
) -> Result<Effects> {
    state.check()?;
    if want_steering && want_sleeping {
        return Err(Error::ConstraintViolation("simultaneous activation of steering and sleeping requested".into()));
    }
    let mut fx = Effects::default();
    if !want_steering {
        state.steering = false;
        state.pending.retain(|p| p.1 != Decision::ActivateSteering);
    }
    if !want_sleeping {
        fx.wake_all_cells = state.sleeping;
        state.sleeping = false;
        state.pending.retain(|p| p.1 != Decision::ActivateSleeping);
    }
    let wanted = if want_steering {
        Some((Decision::ActivateSteering, STEERING_APP, state.steering))
    } else if want_sleeping {
        Some((Decision::ActivateSleeping, SLEEPING_APP, state.sleeping))
    } else {
        None
    };
    if let Some((d, id, already)) = wanted {
        registry.check_capable(id)?;
        let queued = state.pending.iter().any(|p| p.1 == d);
        if !already && !queued {
            if lead_frames == 0 {
                set(state, d);
            } else {
                state.pending.push_back((frame + lead_frames, d));
            }
        }
    }
    state.check()?;
    Ok(fx)
}

fn set(state: &mut OrchestratorState, d: Decision) {
    match d {
        Decision::ActivateSteering => state.steering = true,
        Decision::ActivateSleeping => state.sleeping = true,
        Decision::Idle => {}
    }
}

/// Applies a threshold decision made at `frame`.
pub fn apply(state: &mut OrchestratorState, registry: &Registry, decision: Decision, frame: u64, lead_frames: u64) -> Result<Effects> {
    let steer = decision == Decision::ActivateSteering;
    let sleep = decision == Decision::ActivateSleeping;
    request(state, registry, steer, sleep, frame, lead_frames)
}

/// Activates everything scheduled at or before `frame`.
pub fn advance(state: &mut OrchestratorState, frame: u64) -> Result<()> {
    while state.pending.front().is_some_and(|p| p.0 <= frame) {
        let (_, d) = state.pending.pop_front().expect("front exists");
        set(state, d);
    }
    state.check()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustPolicy {
    pub enabled: bool,
    pub delta_mbps: f64,
    /// Frames of feedback considered per adjustment.
    pub window_frames: u64,
    /// Highest acceptable drop rate while steering runs.
    pub drop_target: f64,
    /// Lowest acceptable energy efficiency while idle (Mbit/J).
    pub ee_target: f64,
    /// Minimum gap kept between the thresholds.
    pub margin_mbps: f64,
}

impl Default for AdjustPolicy {
    fn default() -> Self {
        AdjustPolicy { enabled: false, delta_mbps: 5.0, window_frames: 3600, drop_target: 0.05, ee_target: 0.25, margin_mbps: 10.0 }
    }
}

/// One frame of feedback: its KPIs and which app was running.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback<'a> {
    pub kpi: &'a KpiRecord,
    pub steering: bool,
    pub sleeping: bool,
}

/// Hysteresis update: lower `th_p` when steering frames drop too much,
/// raise `th_t` when idle frames are inefficient.
pub fn adjust_thresholds(th: &Thresholds, feedback: &[Feedback], policy: &AdjustPolicy) -> Result<Thresholds> {
    if feedback.is_empty() {
        return Err(Error::Orchestrator("threshold adjustment needs feedback".into()));
    }
    if !policy.enabled {
        return Ok(*th);
    }
    let mean = |sel: &dyn Fn(&Feedback) -> bool, f: &dyn Fn(&KpiRecord) -> f64| {
        let v: Vec<f64> = feedback.iter().filter(|x| sel(x)).map(|x| f(x.kpi)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut out = *th;
    if mean(&|x| x.steering, &|k| k.drop_rate).is_some_and(|d| d > policy.drop_target) {
        out.th_p -= policy.delta_mbps;
    }
    if mean(&|x| !x.steering && !x.sleeping, &|k| k.energy_efficiency).is_some_and(|e| e < policy.ee_target) {
        out.th_t += policy.delta_mbps;
    }
    let margin = policy.margin_mbps.max(f64::EPSILON * out.th_p.abs().max(1.0));
    if out.th_t > out.th_p - margin {
        out.th_t = out.th_p - margin;
    }
    Ok(out)
}

/// Named scalar of a KPI record; `latency_ms` is the mean over classes.
pub fn kpi_metric(k: &KpiRecord, name: &str) -> Option<f64> {
    Some(match name {
        "throughput_mbps" => k.throughput_mbps,
        "energy_efficiency" => k.energy_efficiency,
        "drop_rate" => k.drop_rate,
        "power_w" => k.power_w,
        "latency_ms" => k.class_latency_ms.iter().sum::<f64>() / k.class_latency_ms.len() as f64,
        "latency_ms_video" => k.class_latency_ms[0],
        "latency_ms_gaming" => k.class_latency_ms[1],
        "latency_ms_voice" => k.class_latency_ms[2],
        _ => return None,
    })
}

/// `sum_c (after_c - before_c) / scale_c`
pub fn objective_delta(before: &KpiRecord, after: &KpiRecord, metrics: &BTreeMap<String, f64>) -> Result<f64> {
    let mut total = 0.0;
    for (name, scale) in metrics {
        let (Some(a), Some(b)) = (kpi_metric(after, name), kpi_metric(before, name)) else {
            return Err(Error::Orchestrator(format!("unknown metric {name}")));
        };
        total += (a - b) / scale;
    }
    Ok(total)
}

/// One row of the decision log: the prediction made during `frame`, the
/// thresholds it was compared with, and the flags in force during `frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub frame: u64,
    #[serde(rename = "T_p")]
    pub t_p: f64,
    pub th_p: f64,
    pub th_t: f64,
    pub decision: Decision,
    #[serde(rename = "S")]
    pub s: u8,
    #[serde(rename = "V")]
    pub v: u8,
}

pub fn write_decision_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decision_log(path: &Path) -> Result<Vec<LogEntry>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Post-hoc audit: mutual exclusion on every row, and flags at each frame
/// equal to the decision logged `lead` frames earlier. Returns the number
/// of violating rows.
pub fn audit_log(log: &[LogEntry], lead: u64) -> usize {
    let by_frame: BTreeMap<u64, &LogEntry> = log.iter().map(|e| (e.frame, e)).collect();
    log.iter()
        .filter(|e| {
            let exclusive = e.s + e.v <= 1;
            let consistent = match e.frame.checked_sub(lead).and_then(|f| by_frame.get(&f)) {
                Some(prev) => {
                    (e.s == 1) == (prev.decision == Decision::ActivateSteering)
                        && (e.v == 1) == (prev.decision == Decision::ActivateSleeping)
                }
                None => e.s == 0 && e.v == 0,
            };
            !(exclusive && consistent)
        })
        .count()
}
