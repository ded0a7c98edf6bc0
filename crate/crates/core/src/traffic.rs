//! Per-UE packet arrivals for the video, gaming and voice classes, shaped by
//! a calibrated 24-hour load profile.
//!
//! Simulation time is kept in integer nanoseconds so that deterministic
//! inter-arrival streams count exactly (0.1 ms is 100 000 ns).

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const NS_PER_MS: f64 = 1.0e6;
pub const NS_PER_S: u64 = 1_000_000_000;

/// Heavy-tail cap on Pareto draws, as a multiple of the class mean.
pub const PARETO_CAP_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassName {
    Video,
    Gaming,
    Voice,
}

impl ClassName {
    pub const ALL: [ClassName; 3] = [ClassName::Video, ClassName::Gaming, ClassName::Voice];

    pub fn index(self) -> usize {
        match self {
            ClassName::Video => 0,
            ClassName::Gaming => 1,
            ClassName::Voice => 2,
        }
    }

    /// Arrival family each class uses in the reference traffic table.
    pub fn reference_arrival(self) -> ArrivalKind {
        match self {
            ClassName::Video => ArrivalKind::Pareto,
            ClassName::Gaming => ArrivalKind::Uniform,
            ClassName::Voice => ArrivalKind::Poisson,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassName::Video => "video",
            ClassName::Gaming => "gaming",
            ClassName::Voice => "voice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Pareto,
    Uniform,
    Poisson,
}

fn default_pareto_shape() -> f64 {
    2.5
}

fn default_uniform_half_width() -> f64 {
    0.5
}

/// Arrival process, packet size and QoS budget of one traffic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficClassSpec {
    pub name: ClassName,
    pub arrival: ArrivalKind,
    pub mean_interarrival_ms: f64,
    pub packet_size_bytes: u32,
    pub qos_throughput_mbps: f64,
    pub qos_delay_budget_ms: f64,
    /// Pareto tail index; the scale is derived from the mean.
    #[serde(default = "default_pareto_shape")]
    pub pareto_shape: f64,
    /// Uniform half-width as a fraction of the mean.
    #[serde(default = "default_uniform_half_width")]
    pub uniform_half_width: f64,
}

impl TrafficClassSpec {
    /// The three classes with the reference inter-arrival, distribution,
    /// packet-size and QoS values.
    pub fn reference_table() -> Vec<TrafficClassSpec> {
        vec![
            TrafficClassSpec {
                name: ClassName::Video,
                arrival: ArrivalKind::Pareto,
                mean_interarrival_ms: 12.5,
                packet_size_bytes: 250,
                qos_throughput_mbps: 10.0,
                qos_delay_budget_ms: 80.0,
                pareto_shape: default_pareto_shape(),
                uniform_half_width: default_uniform_half_width(),
            },
            TrafficClassSpec {
                name: ClassName::Gaming,
                arrival: ArrivalKind::Uniform,
                mean_interarrival_ms: 40.0,
                packet_size_bytes: 120,
                qos_throughput_mbps: 5.0,
                qos_delay_budget_ms: 40.0,
                pareto_shape: default_pareto_shape(),
                uniform_half_width: default_uniform_half_width(),
            },
            TrafficClassSpec {
                name: ClassName::Voice,
                arrival: ArrivalKind::Poisson,
                mean_interarrival_ms: 0.1,
                packet_size_bytes: 30,
                qos_throughput_mbps: 0.1,
                qos_delay_budget_ms: 100.0,
                pareto_shape: default_pareto_shape(),
                uniform_half_width: default_uniform_half_width(),
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Traffic(format!("{}: {what}", self.name.as_str())));
        if !(self.mean_interarrival_ms.is_finite() && self.mean_interarrival_ms > 0.0) {
            return bad("mean_interarrival_ms must be > 0");
        }
        if self.packet_size_bytes == 0 {
            return bad("packet_size_bytes must be > 0");
        }
        if !(self.qos_delay_budget_ms.is_finite() && self.qos_delay_budget_ms > 0.0) {
            return bad("qos_delay_budget_ms must be > 0");
        }
        if !(self.qos_throughput_mbps.is_finite() && self.qos_throughput_mbps > 0.0) {
            return bad("qos_throughput_mbps must be > 0");
        }
        if self.arrival == ArrivalKind::Pareto && !(self.pareto_shape > 1.0) {
            return bad("pareto_shape must be > 1 for a finite mean");
        }
        if !(0.0..=1.0).contains(&self.uniform_half_width) {
            return bad("uniform_half_width must lie in [0, 1]");
        }
        Ok(())
    }

    /// Pareto scale giving the configured mean: x_m = mean (a - 1) / a.
    pub fn pareto_scale_ms(&self) -> f64 {
        self.mean_interarrival_ms * (self.pareto_shape - 1.0) / self.pareto_shape
    }

    /// Long-run offered rate of one source of this class, in Mbps.
    pub fn mean_rate_mbps(&self) -> f64 {
        let bits = f64::from(self.packet_size_bytes) * 8.0;
        bits / self.mean_interarrival_ms / 1000.0
    }

    pub fn packet_bits(&self) -> u64 {
        u64::from(self.packet_size_bytes) * 8
    }
}

/// Draws one inter-arrival time in milliseconds.
///
/// Pareto draws are capped at `PARETO_CAP_FACTOR` times the mean;
/// non-finite or non-positive draws are rejected and redrawn.
pub fn sample_interarrival<R: Rng + ?Sized>(spec: &TrafficClassSpec, rng: &mut R) -> f64 {
    let mean = spec.mean_interarrival_ms;
    loop {
        let x = match spec.arrival {
            ArrivalKind::Pareto => {
                let u: f64 = rng.sample(Open01);
                let x = spec.pareto_scale_ms() / u.powf(1.0 / spec.pareto_shape);
                x.min(PARETO_CAP_FACTOR * mean)
            }
            ArrivalKind::Uniform => {
                let hw = spec.uniform_half_width * mean;
                if hw == 0.0 {
                    mean
                } else {
                    let u: f64 = rng.sample(Open01);
                    mean - hw + 2.0 * hw * u
                }
            }
            ArrivalKind::Poisson => {
                let u: f64 = rng.sample(Open01);
                -mean * u.ln()
            }
        };
        if x.is_finite() && x > 0.0 {
            return x;
        }
    }
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * NS_PER_MS).round().max(1.0) as u64
}

/// Half-open simulation interval in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInterval {
    pub start_ns: u64,
    pub end_ns: u64,
}

impl FrameInterval {
    pub fn nth(index: u64, frame_ms: u64) -> Self {
        let len = frame_ms * 1_000_000;
        FrameInterval { start_ns: index * len, end_ns: (index + 1) * len }
    }

    pub fn len_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }

    pub fn len_s(&self) -> f64 {
        self.len_ns() as f64 / NS_PER_S as f64
    }

    pub fn midpoint_s(&self) -> f64 {
        (self.start_ns as f64 + self.len_ns() as f64 / 2.0) / NS_PER_S as f64
    }
}

/// One seeded packet source: a (UE, class) pair with its own RNG stream.
#[derive(Debug, Clone)]
pub struct FlowSource {
    pub ue_id: usize,
    pub class: ClassName,
    rng: ChaCha8Rng,
    next_arrival_ns: u64,
}

impl FlowSource {
    /// Stream id is `ue_id * 3 + class index`, so every source draws from an
    /// independent ChaCha stream of the run seed. The first arrival gets a
    /// uniform phase inside one inter-arrival gap.
    pub fn new(ue_id: usize, spec: &TrafficClassSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((ue_id * 3 + spec.name.index()) as u64);
        let gap = sample_interarrival(spec, &mut rng);
        let u: f64 = rng.random();
        let next_arrival_ns = (u * gap * NS_PER_MS).floor() as u64;
        FlowSource { ue_id, class: spec.name, rng, next_arrival_ns }
    }

    pub fn stream_id(&self) -> u64 {
        (self.ue_id * 3 + self.class.index()) as u64
    }

    pub fn next_arrival_ns(&self) -> u64 {
        self.next_arrival_ns
    }

    /// Counts arrivals in `[frame.start, frame.end)` and advances the source.
    ///
    /// Poisson sources draw the count directly (memoryless, same law as
    /// stepping exponential gaps); renewal sources step gap by gap.
    pub fn packets_in(&mut self, spec: &TrafficClassSpec, frame: FrameInterval) -> u64 {
        debug_assert_eq!(spec.name, self.class);
        if self.next_arrival_ns < frame.start_ns {
            // Skipped frames: drop arrivals that fell before this window.
            while self.next_arrival_ns < frame.start_ns {
                self.next_arrival_ns += ms_to_ns(sample_interarrival(spec, &mut self.rng));
            }
        }
        if self.next_arrival_ns >= frame.end_ns {
            return 0;
        }
        match spec.arrival {
            ArrivalKind::Poisson => {
                let remaining_ms = (frame.end_ns - self.next_arrival_ns) as f64 / NS_PER_MS;
                let lambda = remaining_ms / spec.mean_interarrival_ms;
                let extra = if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(&mut self.rng) as u64).unwrap_or(0)
                } else {
                    0
                };
                self.next_arrival_ns =
                    frame.end_ns + ms_to_ns(sample_interarrival(spec, &mut self.rng));
                1 + extra
            }
            ArrivalKind::Pareto | ArrivalKind::Uniform => {
                let mut count = 0;
                while self.next_arrival_ns < frame.end_ns {
                    count += 1;
                    self.next_arrival_ns += ms_to_ns(sample_interarrival(spec, &mut self.rng));
                }
                count
            }
        }
    }
}

/// Builds one source per (UE, class), ordered by (ue_id, class).
pub fn build_sources(n_ues: usize, table: &[TrafficClassSpec], seed: u64) -> Vec<FlowSource> {
    let mut out = Vec::with_capacity(n_ues * table.len());
    for ue in 0..n_ues {
        for spec in table {
            out.push(FlowSource::new(ue, spec, seed));
        }
    }
    out
}

/// Expected offered load of `n_ues` UEs carrying every class, in Mbps.
pub fn base_demand_mbps(n_ues: usize, table: &[TrafficClassSpec]) -> f64 {
    n_ues as f64 * table.iter().map(TrafficClassSpec::mean_rate_mbps).sum::<f64>()
}

/// Offered bits of one (UE, class) flow in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDemand {
    pub ue_id: usize,
    pub class: ClassName,
    pub packets: u64,
    pub bits: u64,
}

/// Offered bits per source for one frame, scaled by the profile multiplier at
/// the frame midpoint. Output order matches `sources`, which is (ue, class).
pub fn generate_frame_demand(
    sources: &mut [FlowSource],
    table: &[TrafficClassSpec],
    frame: FrameInterval,
    profile: &DiurnalProfile,
    mode: Parallelism,
) -> Vec<FlowDemand> {
    let multiplier = profile.multiplier_at(frame.midpoint_s());
    generate_frame_demand_scaled(sources, table, frame, multiplier, mode)
}

/// Same as [`generate_frame_demand`] with an explicit load multiplier.
pub fn generate_frame_demand_scaled(
    sources: &mut [FlowSource],
    table: &[TrafficClassSpec],
    frame: FrameInterval,
    multiplier: f64,
    mode: Parallelism,
) -> Vec<FlowDemand> {
    assert!(frame.end_ns > frame.start_ns, "frame length must be > 0");
    par::map_slice_mut(mode, sources, |src| {
        let spec = &table[src.class.index()];
        let packets = src.packets_in(spec, frame);
        let bits = (packets as f64 * spec.packet_bits() as f64 * multiplier).round().max(0.0) as u64;
        FlowDemand { ue_id: src.ue_id, class: src.class, packets, bits }
    })
}

/// Knobs for the calibrated day shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileShape {
    /// Low-frequency noise on the control points, as a fraction of the mean multiplier.
    pub noise_frac: f64,
    pub noise_seed: u64,
    pub points_per_day: usize,
    /// Time of day of the trough, in hours.
    pub trough_hour: f64,
    /// Profile time-warp: simulated seconds are multiplied by this before
    /// looking up the time of day. 60 compresses a day into 1440 s.
    pub time_warp: f64,
}

impl Default for ProfileShape {
    fn default() -> Self {
        ProfileShape { noise_frac: 0.03, noise_seed: 7, points_per_day: 48, trough_hour: 4.0, time_warp: 1.0 }
    }
}

/// 24-hour load multiplier curve. Control points are interpolated with
/// half-cosine segments and wrap around midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalProfile {
    /// (time of day in seconds, multiplier), sorted by time, all in [0, 86400).
    pub control_points: Vec<(f64, f64)>,
    pub peak_target: f64,
    pub trough_target: f64,
    pub time_warp: f64,
}

impl DiurnalProfile {
    pub fn flat(multiplier: f64) -> Self {
        DiurnalProfile {
            control_points: vec![(0.0, multiplier)],
            peak_target: multiplier,
            trough_target: multiplier,
            time_warp: 1.0,
        }
    }

    pub fn time_of_day(&self, sim_seconds: f64) -> f64 {
        (sim_seconds * self.time_warp).rem_euclid(SECONDS_PER_DAY)
    }

    /// Simulated seconds per profile day.
    pub fn day_seconds(&self) -> f64 {
        SECONDS_PER_DAY / self.time_warp
    }

    pub fn multiplier_at(&self, sim_seconds: f64) -> f64 {
        let pts = &self.control_points;
        if pts.len() == 1 {
            return pts[0].1;
        }
        let tod = self.time_of_day(sim_seconds);
        // First control point strictly after tod, wrapping.
        let hi = pts.partition_point(|p| p.0 <= tod);
        let (t0, m0, t1, m1) = if hi == 0 {
            let last = pts[pts.len() - 1];
            (last.0 - SECONDS_PER_DAY, last.1, pts[0].0, pts[0].1)
        } else if hi == pts.len() {
            let last = pts[pts.len() - 1];
            (last.0, last.1, pts[0].0 + SECONDS_PER_DAY, pts[0].1)
        } else {
            (pts[hi - 1].0, pts[hi - 1].1, pts[hi].0, pts[hi].1)
        };
        let s = (tod - t0) / (t1 - t0);
        m0 + (m1 - m0) * (1.0 - (std::f64::consts::PI * s).cos()) / 2.0
    }

    pub fn min_multiplier(&self) -> f64 {
        self.control_points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    pub fn max_multiplier(&self) -> f64 {
        self.control_points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Earliest time of day (seconds) on the rising half of the day at which
    /// the curve reaches `multiplier`, clamped to the trough or peak.
    pub fn time_of_day_for(&self, multiplier: f64) -> f64 {
        let trough_t = self
            .control_points
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|p| p.0)
            .unwrap_or(0.0);
        if multiplier <= self.min_multiplier() {
            return trough_t;
        }
        let step = 60.0;
        let mut best = trough_t;
        let mut best_err = f64::INFINITY;
        let mut t = 0.0;
        while t < SECONDS_PER_DAY / 2.0 {
            let tod = (trough_t + t).rem_euclid(SECONDS_PER_DAY);
            let m = self.multiplier_at(tod / self.time_warp);
            let err = (m - multiplier).abs();
            if err < best_err {
                best_err = err;
                best = tod;
            }
            if m >= multiplier {
                break;
            }
            t += step;
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.is_empty() {
            return Err(Error::Traffic("profile needs at least one control point".into()));
        }
        for w in self.control_points.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::Traffic("profile control points must be strictly increasing".into()));
            }
        }
        for &(t, m) in &self.control_points {
            if !(0.0..SECONDS_PER_DAY).contains(&t) {
                return Err(Error::Traffic(format!("control point time {t} outside one day")));
            }
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Traffic(format!("multiplier {m} must be finite and > 0")));
            }
        }
        if !(self.time_warp.is_finite() && self.time_warp > 0.0) {
            return Err(Error::Traffic("time_warp must be > 0".into()));
        }
        Ok(())
    }
}

/// Cosine day with the trough/peak multipliers mapping `base_demand` onto the
/// requested trough/peak volumes, using the default shape.
pub fn calibrate_profile(peak: f64, trough: f64, base_demand: f64) -> Result<DiurnalProfile> {
    calibrate_profile_with(peak, trough, base_demand, &ProfileShape::default())
}

/// Cosine day sampled at `points_per_day` control points, perturbed by
/// Gaussian low-frequency noise and then rescaled affinely so the smallest
/// and largest multipliers are exactly `trough / base` and `peak / base`.
pub fn calibrate_profile_with(
    peak: f64,
    trough: f64,
    base_demand: f64,
    shape: &ProfileShape,
) -> Result<DiurnalProfile> {
    if !(trough > 0.0 && base_demand > 0.0 && peak.is_finite()) {
        return Err(Error::Traffic("peak, trough and base demand must be > 0".into()));
    }
    if peak < trough {
        return Err(Error::Traffic(format!("peak {peak} must not be below trough {trough}")));
    }
    let lo = trough / base_demand;
    let hi = peak / base_demand;
    if peak == trough {
        let mut p = DiurnalProfile::flat(lo);
        p.peak_target = peak;
        p.trough_target = trough;
        p.time_warp = shape.time_warp;
        return Ok(p);
    }
    let n = shape.points_per_day.max(4);
    let mid = (hi + lo) / 2.0;
    let amp = (hi - lo) / 2.0;
    let trough_s = shape.trough_hour * 3600.0;
    let mut rng = ChaCha8Rng::seed_from_u64(shape.noise_seed);
    let noise = Normal::new(0.0, shape.noise_frac.max(0.0) * mid)
        .map_err(|e| Error::Traffic(format!("noise: {e}")))?;
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = i as f64 * SECONDS_PER_DAY / n as f64;
            let phase = 2.0 * std::f64::consts::PI * (t - trough_s) / SECONDS_PER_DAY;
            let n_val = if shape.noise_frac > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (t, mid - amp * phase.cos() + n_val)
        })
        .collect();
    let (pmin, pmax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    for p in &mut pts {
        p.1 = lo + (p.1 - pmin) / (pmax - pmin) * (hi - lo);
    }
    let profile = DiurnalProfile { control_points: pts, peak_target: peak, trough_target: trough, time_warp: shape.time_warp };
    profile.validate()?;
    Ok(profile)
}

/// Clean profile curve times `base`, with independent Gaussian noise of
/// `noise_frac` (relative) per frame. Used as a forecasting benchmark series.
pub fn synthetic_diurnal_series(
    profile: &DiurnalProfile,
    base: f64,
    frames: usize,
    frame_s: f64,
    noise_frac: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..frames)
        .map(|i| {
            let clean = base * profile.multiplier_at((i as f64 + 0.5) * frame_s);
            (clean * (1.0 + noise_frac * normal.sample(&mut rng))).max(0.0)
        })
        .collect()
}
