//! The closed loop: simulate a training day, fit the forecaster and the
//! apps offline, then run an evaluation day frame by frame under one mode.

use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::forecast::{train, ForecastModel};
use crate::netsim::{BsFrameStats, KpiRecord, Network};
use crate::orchestrator::{self, AdjustPolicy, Feedback, LogEntry, OrchestratorState, Registry, Thresholds};
use crate::pipeline::{make_windows, smooth_values, SgFilterConfig};
use crate::rlapps::{SleepingApp, SteeringApp};
use crate::traffic::{
    base_demand_mbps, build_sources, calibrate_profile_with, generate_frame_demand_scaled, DiurnalProfile, FlowDemand,
    FlowSource, FrameInterval,
};

/// Day index of the evaluation run; day 0 is the training day.
pub const EVAL_DAY: u64 = 1;

/// A validated configuration with its derived traffic profile. Each
/// simulated day draws its own profile noise; `profile` is the training day's.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: RunConfig,
    pub profile: DiurnalProfile,
    pub base_demand_mbps: f64,
    pub day_frames: u64,
}

impl Scenario {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let sc = &config.scenario;
        let base = base_demand_mbps(sc.topology.n_ues, &sc.classes);
        let profile = day_profile(&config, base, 0)?;
        let frame_s = config.pipeline.frame_ms as f64 / 1e3;
        let day_frames = (profile.day_seconds() / frame_s).round() as u64;
        if day_frames == 0 {
            return Err(Error::Config("a profile day is shorter than one frame".into()));
        }
        Ok(Scenario { config, profile, base_demand_mbps: base, day_frames })
    }

    pub fn frame_s(&self) -> f64 {
        self.config.pipeline.frame_ms as f64 / 1e3
    }

    pub fn eval_frames(&self) -> u64 {
        self.config.duration_s.map_or(self.day_frames, |d| ((d / self.frame_s()).round() as u64).max(1))
    }

    pub fn network(&self) -> Result<Network> {
        let sc = &self.config.scenario;
        Network::new(&sc.topology, &sc.classes, derive_seed(self.config.seed, "placement", 0))
    }

    pub fn profile_for_day(&self, day: u64) -> Result<DiurnalProfile> {
        day_profile(&self.config, self.base_demand_mbps, day)
    }

    pub fn traffic(&self, day: u64) -> Result<DayTraffic<'_>> {
        let sc = &self.config.scenario;
        let sources = build_sources(sc.topology.n_ues, &sc.classes, derive_seed(self.config.seed, "traffic", day));
        Ok(DayTraffic { scenario: self, sources, day, current: (day, self.profile_for_day(day)?) })
    }

    /// Simulated seconds since the start of the training day at the middle of a frame.
    pub fn global_mid_s(&self, day: u64, local: u64) -> f64 {
        ((day * self.day_frames + local) as f64 + 0.5) * self.frame_s()
    }

    /// Fraction of the profile day elapsed at the middle of a frame.
    pub fn day_fraction(&self, day: u64, local: u64) -> f64 {
        self.profile.time_of_day(self.global_mid_s(day, local)) / crate::traffic::SECONDS_PER_DAY
    }
}

/// Traffic of one simulated day. Frame times are local to the day; the
/// load multiplier follows the profile at the global time.
pub struct DayTraffic<'a> {
    scenario: &'a Scenario,
    sources: Vec<FlowSource>,
    day: u64,
    current: (u64, DiurnalProfile),
}

impl DayTraffic<'_> {
    pub fn frame(&mut self, local: u64) -> Result<(FrameInterval, Vec<FlowDemand>)> {
        let sc = self.scenario;
        let interval = FrameInterval::nth(local, sc.config.pipeline.frame_ms);
        let t = sc.global_mid_s(self.day, local);
        let day = (t / sc.profile.day_seconds()).floor() as u64;
        if day != self.current.0 {
            self.current = (day, sc.profile_for_day(day)?);
        }
        let m = self.current.1.multiplier_at(t);
        let d = generate_frame_demand_scaled(&mut self.sources, &sc.config.scenario.classes, interval, m, sc.config.parallelism);
        Ok((interval, d))
    }
}

fn day_profile(cfg: &RunConfig, base: f64, day: u64) -> Result<DiurnalProfile> {
    let sc = &cfg.scenario;
    let mut shape = sc.profile.clone();
    shape.noise_seed = derive_seed(shape.noise_seed, "profile", day);
    calibrate_profile_with(sc.peak_mbps, sc.trough_mbps, base, &shape)
}

/// Stats of a network that has not run yet: every station idle.
pub fn idle_stats(net: &Network) -> Vec<BsFrameStats> {
    net.bss
        .iter()
        .map(|b| BsFrameStats {
            bs_id: b.id,
            active: b.is_active(),
            load: 0.0,
            util: 0.0,
            served_bits: 0,
            backlog_bits: 0,
            power_w: b.power_at(0.0),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingDay {
    /// Offered volume per frame (Mbps).
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub kpis: Vec<KpiRecord>,
}

/// Step 1: one day with default attachment, aggregated and smoothed.
pub fn simulate_training_day(sc: &Scenario) -> Result<TrainingDay> {
    let mut net = sc.network()?;
    let mut traffic = sc.traffic(0)?;
    let mut kpis = Vec::with_capacity(sc.day_frames as usize);
    for f in 0..sc.day_frames {
        let (iv, d) = traffic.frame(f)?;
        let a = net.default_assignment();
        kpis.push(net.step_frame(f, iv, &d, &a)?.kpi);
    }
    let raw: Vec<f64> = kpis.iter().map(|k| k.offered_mbps).collect();
    let smoothed = smooth_values(&raw, &sc.config.pipeline.smoothing)?;
    Ok(TrainingDay { raw, smoothed, kpis })
}

/// Steps 2-3: fits the forecaster on the whole smoothed training day.
pub fn train_forecaster(cfg: &RunConfig, smoothed: &[f64]) -> Result<ForecastModel> {
    let m = &cfg.forecaster.model;
    let data = make_windows(smoothed, m.input_len, m.horizon, 1.0)?;
    let mut model = ForecastModel::new(m.clone(), derive_seed(cfg.seed, "forecaster-init", 0))?;
    let mut tc = cfg.forecaster.train.clone();
    tc.seed = derive_seed(cfg.seed, "forecaster-shuffle", tc.seed);
    tc.parallelism = cfg.parallelism;
    train(&mut model, &data, &tc)?;
    Ok(model)
}

/// Offline training of the steering xApp over repeated training days.
/// Returns the app and the mean per-decision reward of each episode.
pub fn train_steering(sc: &Scenario) -> Result<(SteeringApp, Vec<f64>)> {
    let cfg = &sc.config;
    let classes = &cfg.scenario.classes;
    let mut app = SteeringApp::new(cfg.rl.steering.clone(), derive_seed(cfg.seed, "steering", 0))?;
    app.set_active(true);
    let mut rewards = Vec::with_capacity(cfg.rl.steering_episodes);
    for ep in 0..cfg.rl.steering_episodes {
        let mut net = sc.network()?;
        let mut traffic = sc.traffic(0)?;
        let mut sum = 0.0;
        for f in 0..sc.day_frames {
            let (iv, d) = traffic.frame(f)?;
            let a = app.decide_frame(&net, &d, sc.frame_s(), true)?;
            let out = net.step_frame(f, iv, &d, &a)?;
            sum += app.observe_frame(&out, classes, true)?;
        }
        app.finish_episode()?;
        let mean = sum / sc.day_frames as f64;
        log::info!("steering episode {ep}: mean reward {mean:.5}");
        rewards.push(mean);
    }
    app.set_active(false);
    Ok((app, rewards))
}

/// Offline training of the sleeping rApp over repeated training days.
pub fn train_sleeping(sc: &Scenario) -> Result<(SleepingApp, Vec<f64>)> {
    let cfg = &sc.config;
    let epoch = cfg.rl.sleeping.epoch_frames;
    let mut app = SleepingApp::new(cfg.rl.sleeping.clone(), derive_seed(cfg.seed, "sleeping", 0))?;
    app.set_active(true);
    let mut rewards = Vec::with_capacity(cfg.rl.sleeping_episodes);
    for ep in 0..cfg.rl.sleeping_episodes {
        let mut net = sc.network()?;
        let mut traffic = sc.traffic(0)?;
        let mut last = idle_stats(&net);
        let mut sum = 0.0;
        for f in 0..sc.day_frames {
            if f % epoch == 0 {
                let s = app.config.state(&last, sc.day_fraction(0, f));
                net.apply_sleep_mask(app.decide(&s, true)?)?;
            }
            let (iv, d) = traffic.frame(f)?;
            let a = net.default_assignment();
            let out = net.step_frame(f, iv, &d, &a)?;
            sum += app.record_frame(&out.per_bs, sc.frame_s());
            last = out.per_bs;
        }
        app.finish_episode()?;
        let mean = sum / sc.day_frames as f64;
        log::info!("sleeping episode {ep}: mean reward {mean:.5}");
        rewards.push(mean);
    }
    app.set_active(false);
    Ok((app, rewards))
}

/// Last `input_len` values of the history, smoothed using past samples only.
pub fn causal_window(history: &[f64], input_len: usize, sg: &SgFilterConfig) -> Result<Vec<f64>> {
    let need = input_len + sg.half();
    let tail = &history[history.len().saturating_sub(need)..];
    let sm = smooth_values(tail, sg)?;
    if sm.len() < input_len {
        return Err(Error::Forecast(format!("need {input_len} frames of history, got {}", sm.len())));
    }
    Ok(sm[sm.len() - input_len..].to_vec())
}

/// One-step forecast for a frame and the volume then offered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame: u64,
    pub predicted_mbps: f64,
    pub actual_mbps: f64,
}

/// Trained components handed to an evaluation run.
#[derive(Default)]
pub struct Components<'a> {
    pub forecaster: Option<&'a ForecastModel>,
    pub steering: Option<SteeringApp>,
    pub sleeping: Option<SleepingApp>,
    /// Offered volume before the evaluation starts, oldest first.
    pub history: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub mode: Mode,
    pub kpis: Vec<KpiRecord>,
    /// Offered volume per frame (Mbps).
    pub offered: Vec<f64>,
    /// Steering and sleeping flags in force during each frame.
    pub flags: Vec<(bool, bool)>,
    pub decisions: Vec<LogEntry>,
    pub predictions: Vec<Prediction>,
    /// (frame, objective change since the previous frame).
    pub objective: Vec<(u64, f64)>,
    pub final_thresholds: Thresholds,
}

/// Steps 4-5 on the evaluation day.
pub fn evaluate(sc: &Scenario, mode: Mode, mut parts: Components<'_>) -> Result<EvalOutput> {
    let cfg = &sc.config;
    let classes = &cfg.scenario.classes;
    let frame_s = sc.frame_s();
    let n = sc.eval_frames();
    let oc = &cfg.orchestrator;
    if mode.needs_steering() && parts.steering.is_none() {
        return Err(Error::Config(format!("mode {mode} needs a trained steering app")));
    }
    if mode.needs_sleeping() && parts.sleeping.is_none() {
        return Err(Error::Config(format!("mode {mode} needs a trained sleeping app")));
    }
    let model = match (mode.needs_forecaster(), parts.forecaster) {
        (true, None) => return Err(Error::Config(format!("mode {mode} needs a trained forecaster"))),
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };
    let registry = Registry::default();
    registry.validate()?;
    let mut thresholds = oc.thresholds;
    let mut state = OrchestratorState::default();
    let mut net = sc.network()?;
    let mut traffic = sc.traffic(EVAL_DAY)?;
    let mut history: Vec<f64> = parts.history.to_vec();
    let mut last_stats = idle_stats(&net);
    let mut sleep_since: Option<u64> = None;
    let mut pending_prediction: Option<f64> = None;

    let mut out = EvalOutput {
        mode,
        kpis: Vec::with_capacity(n as usize),
        offered: Vec::with_capacity(n as usize),
        flags: Vec::with_capacity(n as usize),
        decisions: Vec::new(),
        predictions: Vec::new(),
        objective: Vec::new(),
        final_thresholds: thresholds,
    };

    for f in 0..n {
        orchestrator::advance(&mut state, f)?;
        let (steer_on, sleep_on) = match mode {
            Mode::Proposed => (state.steering, state.sleeping),
            Mode::AlwaysSteering => (true, false),
            Mode::AlwaysSleeping => (false, true),
            Mode::NoApp => (false, false),
        };
        if steer_on && sleep_on {
            return Err(Error::ConstraintViolation(format!("both apps active at frame {f}")));
        }
        if let Some(app) = parts.steering.as_mut() {
            app.set_active(steer_on);
        }
        if let Some(app) = parts.sleeping.as_mut() {
            app.set_active(sleep_on);
            if sleep_on {
                let start = *sleep_since.get_or_insert(f);
                if (f - start).is_multiple_of(app.config.epoch_frames) {
                    let s = app.config.state(&last_stats, sc.day_fraction(EVAL_DAY, f));
                    net.apply_sleep_mask(app.decide(&s, false)?)?;
                }
            }
        }
        if !sleep_on {
            sleep_since = None;
            if net.sleep_mask() != 0 {
                net.apply_sleep_mask(0)?;
            }
        }

        let (iv, d) = traffic.frame(f)?;
        let assignment = match parts.steering.as_mut() {
            Some(app) if steer_on => app.decide_frame(&net, &d, frame_s, false)?,
            _ => net.default_assignment(),
        };
        let frame = net.step_frame(f, iv, &d, &assignment)?;
        if let Some(app) = parts.steering.as_mut().filter(|_| steer_on) {
            app.observe_frame(&frame, classes, false)?;
        }
        if let Some(app) = parts.sleeping.as_mut().filter(|_| sleep_on) {
            app.record_frame(&frame.per_bs, frame_s);
        }
        let offered = frame.kpi.offered_mbps;
        if let Some(p) = pending_prediction.take() {
            out.predictions.push(Prediction { frame: f, predicted_mbps: p, actual_mbps: offered });
        }
        if let Some(prev) = out.kpis.last() {
            out.objective.push((f, orchestrator::objective_delta(prev, &frame.kpi, &cfg.eval.objective)?));
        }
        history.push(offered);
        out.offered.push(offered);
        out.flags.push((steer_on, sleep_on));
        last_stats = frame.per_bs;
        out.kpis.push(frame.kpi);

        if let Some(model) = model {
            let window = causal_window(&history, model.config.input_len, &cfg.pipeline.smoothing)?;
            let t_p = model.predict_next(&window)?;
            let decision = orchestrator::decide(t_p, &thresholds);
            out.decisions.push(LogEntry {
                frame: f,
                t_p,
                th_p: thresholds.th_p,
                th_t: thresholds.th_t,
                decision,
                s: steer_on as u8,
                v: sleep_on as u8,
            });
            let fx = orchestrator::apply(&mut state, &registry, decision, f, oc.lead_frames)?;
            if fx.wake_all_cells {
                net.apply_sleep_mask(0)?;
            }
            pending_prediction = Some(t_p);
            thresholds = maybe_adjust(&oc.adjust, thresholds, &out, f)?;
        }
    }
    out.final_thresholds = thresholds;
    Ok(out)
}

fn maybe_adjust(policy: &AdjustPolicy, th: Thresholds, out: &EvalOutput, f: u64) -> Result<Thresholds> {
    if !policy.enabled || policy.window_frames == 0 || !(f + 1).is_multiple_of(policy.window_frames) {
        return Ok(th);
    }
    let start = out.kpis.len().saturating_sub(policy.window_frames as usize);
    let fb: Vec<Feedback> = out.kpis[start..]
        .iter()
        .zip(&out.flags[start..])
        .map(|(kpi, &(steering, sleeping))| Feedback { kpi, steering, sleeping })
        .collect();
    orchestrator::adjust_thresholds(&th, &fb, policy)
}

/// Decisions a recorded volume series would trigger: prediction and
/// orchestration only, no network.
pub fn replay(cfg: &RunConfig, model: &ForecastModel, history: &[f64], series: &[f64]) -> Result<(Vec<LogEntry>, Vec<Prediction>)> {
    let registry = Registry::default();
    let th = cfg.orchestrator.thresholds;
    let mut state = OrchestratorState::default();
    let mut hist = history.to_vec();
    let mut log = Vec::with_capacity(series.len());
    let mut preds = Vec::with_capacity(series.len());
    let mut pending: Option<f64> = None;
    for (f, &v) in series.iter().enumerate() {
        let f = f as u64;
        orchestrator::advance(&mut state, f)?;
        if let Some(p) = pending.take() {
            preds.push(Prediction { frame: f, predicted_mbps: p, actual_mbps: v });
        }
        hist.push(v);
        let window = causal_window(&hist, model.config.input_len, &cfg.pipeline.smoothing)?;
        let t_p = model.predict_next(&window)?;
        let decision = orchestrator::decide(t_p, &th);
        log.push(LogEntry {
            frame: f,
            t_p,
            th_p: th.th_p,
            th_t: th.th_t,
            decision,
            s: state.steering as u8,
            v: state.sleeping as u8,
        });
        orchestrator::apply(&mut state, &registry, decision, f, cfg.orchestrator.lead_frames)?;
        pending = Some(t_p);
    }
    Ok((log, preds))
}

