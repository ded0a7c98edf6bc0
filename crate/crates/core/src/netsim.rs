//! Flow-level, frame-granular model of one LTE macro cell and several NR
//! small cells serving dual-connected UEs.
//!
//! Each (UE, class) flow owns a FIFO of bit bundles stamped with their
//! enqueue time. A frame attaches every flow to one active base station,
//! shares each station's resources in proportion to demand, drains queues
//! FIFO and drops what has outlived the class delay budget. Bits are
//! counted as integers so that arrivals = served + dropped + queue change
//! holds exactly.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{ClassName, FlowDemand, FrameInterval, TrafficClassSpec, NS_PER_MS};

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rat {
    Lte,
    Nr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlossModel {
    UrbanMacro,
    UrbanMicro,
}

/// Log-distance pathloss constants: `pl0_db` at `d0_m`, slope `10 * exponent` dB/decade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossParams {
    pub pl0_db: f64,
    pub exponent: f64,
    pub d0_m: f64,
}

impl PathlossModel {
    pub fn default_params(self) -> PathlossParams {
        match self {
            PathlossModel::UrbanMacro => PathlossParams { pl0_db: 128.1, exponent: 3.76, d0_m: 1000.0 },
            PathlossModel::UrbanMicro => PathlossParams { pl0_db: 140.7, exponent: 3.67, d0_m: 1000.0 },
        }
    }
}

/// Pathloss in dB with the default constants of `model`. Distances below
/// 1 m are clamped to 1 m.
pub fn pathloss(distance_m: f64, model: PathlossModel) -> f64 {
    pathloss_with(distance_m, &model.default_params())
}

pub fn pathloss_with(distance_m: f64, p: &PathlossParams) -> f64 {
    let d = distance_m.max(1.0);
    p.pl0_db + 10.0 * p.exponent * (d / p.d0_m).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    pub p_fixed_w: f64,
    pub tx_slope: f64,
    pub p_sleep_w: f64,
}

impl PowerModel {
    pub fn macro_default() -> Self {
        PowerModel { p_fixed_w: 130.0, tx_slope: 4.7, p_sleep_w: 75.0 }
    }

    pub fn small_default() -> Self {
        PowerModel { p_fixed_w: 56.0, tx_slope: 2.6, p_sleep_w: 6.0 }
    }

    /// Consumption of an active station transmitting `p_tx_w`.
    pub fn active_w(&self, p_tx_w: f64) -> f64 {
        self.p_fixed_w + self.tx_slope * p_tx_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BsState {
    Active,
    Sleeping,
}

/// Static description of one base station, as read from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStationConfig {
    pub rat: Rat,
    pub bandwidth_mhz: f64,
    pub carrier_ghz: f64,
    pub max_tx_power_dbm: f64,
    pub channel: PathlossModel,
    pub power: PowerModel,
    pub position_m: [f64; 2],
}

impl BaseStationConfig {
    pub fn lte_macro() -> Self {
        BaseStationConfig {
            rat: Rat::Lte,
            bandwidth_mhz: 10.0,
            carrier_ghz: 0.8,
            max_tx_power_dbm: 38.0,
            channel: PathlossModel::UrbanMacro,
            power: PowerModel::macro_default(),
            position_m: [0.0, 0.0],
        }
    }

    pub fn nr_small(position_m: [f64; 2]) -> Self {
        BaseStationConfig {
            rat: Rat::Nr,
            bandwidth_mhz: 20.0,
            carrier_ghz: 3.5,
            max_tx_power_dbm: 43.0,
            channel: PathlossModel::UrbanMicro,
            power: PowerModel::small_default(),
            position_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub macro_cell: BaseStationConfig,
    pub small_cells: Vec<BaseStationConfig>,
    pub n_ues: usize,
    pub disc_radius_m: f64,
    pub noise_figure_db: f64,
    /// Fraction of the Shannon bound achieved.
    pub efficiency: f64,
    pub tti_ms: f64,
    pub urban_macro: PathlossParams,
    pub urban_micro: PathlossParams,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let d = 300.0;
        TopologyConfig {
            macro_cell: BaseStationConfig::lte_macro(),
            small_cells: vec![
                BaseStationConfig::nr_small([d, 0.0]),
                BaseStationConfig::nr_small([0.0, d]),
                BaseStationConfig::nr_small([-d, 0.0]),
                BaseStationConfig::nr_small([0.0, -d]),
            ],
            n_ues: 60,
            disc_radius_m: 500.0,
            noise_figure_db: 9.0,
            efficiency: 0.75,
            tti_ms: 1.0,
            urban_macro: PathlossModel::UrbanMacro.default_params(),
            urban_micro: PathlossModel::UrbanMicro.default_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub id: usize,
    pub rat: Rat,
    pub is_macro: bool,
    pub bandwidth_mhz: f64,
    pub carrier_ghz: f64,
    pub max_tx_power_dbm: f64,
    pub channel: PathlossModel,
    pub power: PowerModel,
    pub position_m: [f64; 2],
    pub state: BsState,
}

impl BaseStation {
    pub fn max_tx_w(&self) -> f64 {
        dbm_to_watts(self.max_tx_power_dbm)
    }

    pub fn is_active(&self) -> bool {
        self.state == BsState::Active
    }

    /// Power draw at utilisation `util` in [0, 1].
    pub fn power_at(&self, util: f64) -> f64 {
        match self.state {
            BsState::Active => self.power.active_w(util.clamp(0.0, 1.0) * self.max_tx_w()),
            BsState::Sleeping => self.power.p_sleep_w,
        }
    }
}

/// Radio link between a UE and a base station, refreshed on every sleep change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQuality {
    pub ue_id: usize,
    pub bs_id: usize,
    pub sinr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bundle {
    bits: u64,
    enqueued_ns: u64,
}

#[derive(Debug, Clone)]
struct Flow {
    ue: usize,
    class: ClassName,
    attached: usize,
    queue: VecDeque<Bundle>,
}

impl Flow {
    fn queued_bits(&self) -> u64 {
        self.queue.iter().map(|b| b.bits).sum()
    }
}

/// Per-frame KPIs. Energy efficiency is in Mbits per joule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub frame_index: u64,
    pub frame_s: f64,
    pub offered_mbps: f64,
    pub throughput_mbps: f64,
    pub class_throughput_mbps: [f64; N_CLASSES],
    pub class_latency_ms: [f64; N_CLASSES],
    pub class_drop_rate: [f64; N_CLASSES],
    pub drop_rate: f64,
    pub power_w: f64,
    pub energy_efficiency: f64,
    pub arrived_bits: [u64; N_CLASSES],
    pub delivered_bits: [u64; N_CLASSES],
    pub dropped_bits: [u64; N_CLASSES],
    pub queued_bits_start: [u64; N_CLASSES],
    pub queued_bits_end: [u64; N_CLASSES],
}

impl KpiRecord {
    pub fn total_delivered_bits(&self) -> u64 {
        self.delivered_bits.iter().sum()
    }

    /// Energy efficiency recomputed from raw bits and joules.
    pub fn recomputed_energy_efficiency(&self) -> f64 {
        energy_efficiency(self.total_delivered_bits(), self.power_w * self.frame_s)
    }
}

pub fn energy_efficiency(delivered_bits: u64, joules: f64) -> f64 {
    if joules > 0.0 {
        delivered_bits as f64 / 1e6 / joules
    } else {
        0.0
    }
}

/// Per-station detail of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsFrameStats {
    pub bs_id: usize,
    pub active: bool,
    /// Resource demand as a fraction of the frame; > 1 means congested.
    pub load: f64,
    pub util: f64,
    pub served_bits: u64,
    /// Bits left unserved at the end of the frame, before expiry drops.
    pub backlog_bits: u64,
    pub power_w: f64,
}

impl BsFrameStats {
    pub fn throughput_mbps(&self, frame_s: f64) -> f64 {
        self.served_bits as f64 / frame_s / 1e6
    }
}

/// Per-flow detail of one frame, used by the steering xApp reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowFrameStats {
    pub ue_id: usize,
    pub class: ClassName,
    pub bs_id: usize,
    pub served_bits: u64,
    pub dropped_bits: u64,
    pub throughput_mbps: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub kpi: KpiRecord,
    pub per_bs: Vec<BsFrameStats>,
    pub per_flow: Vec<FlowFrameStats>,
}

/// The simulated RAN. Mutated only through [`Network::step_frame`] and
/// [`Network::set_sleep`].
#[derive(Debug, Clone)]
pub struct Network {
    pub bss: Vec<BaseStation>,
    pub ue_positions: Vec<[f64; 2]>,
    classes: Vec<TrafficClassSpec>,
    flows: Vec<Flow>,
    noise_figure_db: f64,
    efficiency: f64,
    tti_ms: f64,
    urban_macro: PathlossParams,
    urban_micro: PathlossParams,
    /// ue-major, bs-minor.
    sinr_db: Vec<f64>,
    rate_bps: Vec<f64>,
    last_util: Vec<f64>,
}

impl Network {
    /// Builds the network with UEs dropped uniformly in the macro disc.
    pub fn new(topology: &TopologyConfig, classes: &[TrafficClassSpec], placement_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(placement_seed);
        rng.set_stream(u64::MAX);
        let ues = (0..topology.n_ues)
            .map(|_| {
                let r = topology.disc_radius_m * rng.random::<f64>().sqrt();
                let a = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Self::with_positions(topology, classes, ues)
    }

    pub fn with_positions(
        topology: &TopologyConfig,
        classes: &[TrafficClassSpec],
        ue_positions: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if classes.len() != N_CLASSES {
            return Err(Error::Netsim(format!("expected {N_CLASSES} traffic classes, got {}", classes.len())));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.name.index() != i {
                return Err(Error::Netsim("traffic classes must be ordered video, gaming, voice".into()));
            }
        }
        let mut bss = Vec::with_capacity(1 + topology.small_cells.len());
        let make = |id: usize, c: &BaseStationConfig, is_macro: bool| -> Result<BaseStation> {
            if !(c.power.p_sleep_w < c.power.p_fixed_w) {
                return Err(Error::Netsim(format!("bs {id}: p_sleep must be below p_fixed")));
            }
            if !(c.bandwidth_mhz > 0.0) {
                return Err(Error::Netsim(format!("bs {id}: bandwidth must be > 0")));
            }
            Ok(BaseStation {
                id,
                rat: c.rat,
                is_macro,
                bandwidth_mhz: c.bandwidth_mhz,
                carrier_ghz: c.carrier_ghz,
                max_tx_power_dbm: c.max_tx_power_dbm,
                channel: c.channel,
                power: c.power,
                position_m: c.position_m,
                state: BsState::Active,
            })
        };
        bss.push(make(0, &topology.macro_cell, true)?);
        for (i, c) in topology.small_cells.iter().enumerate() {
            bss.push(make(i + 1, c, false)?);
        }
        let n_ues = ue_positions.len();
        let flows = (0..n_ues)
            .flat_map(|ue| {
                ClassName::ALL.into_iter().map(move |class| Flow { ue, class, attached: 0, queue: VecDeque::new() })
            })
            .collect();
        let n_bs = bss.len();
        let mut net = Network {
            bss,
            ue_positions,
            classes: classes.to_vec(),
            flows,
            noise_figure_db: topology.noise_figure_db,
            efficiency: topology.efficiency,
            tti_ms: topology.tti_ms,
            urban_macro: topology.urban_macro,
            urban_micro: topology.urban_micro,
            sinr_db: vec![0.0; n_ues * n_bs],
            rate_bps: vec![0.0; n_ues * n_bs],
            last_util: vec![0.0; n_bs],
        };
        net.refresh_radio();
        let assignment = net.default_assignment();
        for (f, bs) in assignment.into_iter().enumerate() {
            net.flows[f].attached = bs;
        }
        Ok(net)
    }

    pub fn n_bs(&self) -> usize {
        self.bss.len()
    }

    pub fn n_ues(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn n_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn classes(&self) -> &[TrafficClassSpec] {
        &self.classes
    }

    pub fn flow_index(ue: usize, class: ClassName) -> usize {
        ue * N_CLASSES + class.index()
    }

    pub fn flow_key(&self, flow: usize) -> (usize, ClassName) {
        (self.flows[flow].ue, self.flows[flow].class)
    }

    pub fn attachment(&self, flow: usize) -> usize {
        self.flows[flow].attached
    }

    pub fn small_cell_ids(&self) -> Vec<usize> {
        self.bss.iter().filter(|b| !b.is_macro).map(|b| b.id).collect()
    }

    pub fn sinr_db(&self, ue: usize, bs: usize) -> f64 {
        self.sinr_db[ue * self.n_bs() + bs]
    }

    /// Full-band achievable rate; zero towards sleeping stations.
    pub fn rate_bps(&self, ue: usize, bs: usize) -> f64 {
        self.rate_bps[ue * self.n_bs() + bs]
    }

    pub fn links(&self) -> Vec<LinkQuality> {
        let n_bs = self.n_bs();
        (0..self.n_ues())
            .flat_map(|ue| (0..n_bs).map(move |bs| (ue, bs)))
            .filter(|&(_, bs)| self.bss[bs].is_active())
            .map(|(ue, bs)| LinkQuality { ue_id: ue, bs_id: bs, sinr_db: self.sinr_db(ue, bs) })
            .collect()
    }

    fn pathloss_params(&self, model: PathlossModel) -> &PathlossParams {
        match model {
            PathlossModel::UrbanMacro => &self.urban_macro,
            PathlossModel::UrbanMicro => &self.urban_micro,
        }
    }

    fn rx_dbm(&self, ue: usize, bs: usize) -> f64 {
        let b = &self.bss[bs];
        let p = self.ue_positions[ue];
        let d = ((p[0] - b.position_m[0]).powi(2) + (p[1] - b.position_m[1]).powi(2)).sqrt();
        b.max_tx_power_dbm - pathloss_with(d, self.pathloss_params(b.channel))
    }

    /// Recomputes SINR and rates. Interference comes from every other active
    /// station on the same RAT, transmitting at full power.
    fn refresh_radio(&mut self) {
        let n_bs = self.n_bs();
        for ue in 0..self.n_ues() {
            let rx: Vec<f64> = (0..n_bs).map(|bs| dbm_to_mw(self.rx_dbm(ue, bs))).collect();
            for bs in 0..n_bs {
                let b = &self.bss[bs];
                let idx = ue * n_bs + bs;
                let noise_dbm = -174.0 + 10.0 * (b.bandwidth_mhz * 1e6).log10() + self.noise_figure_db;
                let interference: f64 = (0..n_bs)
                    .filter(|&o| o != bs && self.bss[o].is_active() && self.bss[o].rat == b.rat)
                    .map(|o| rx[o])
                    .sum();
                let sinr = rx[bs] / (interference + dbm_to_mw(noise_dbm));
                self.sinr_db[idx] = 10.0 * sinr.log10();
                self.rate_bps[idx] = if b.is_active() {
                    self.efficiency * b.bandwidth_mhz * 1e6 * (1.0 + sinr).log2()
                } else {
                    0.0
                };
            }
        }
    }

    /// Active stations for `ue`, best rate first (ties by id).
    pub fn candidates(&self, ue: usize, k: usize) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.n_bs()).filter(|&b| self.bss[b].is_active()).collect();
        c.sort_by(|&a, &b| self.rate_bps(ue, b).total_cmp(&self.rate_bps(ue, a)).then(a.cmp(&b)));
        c.truncate(k);
        c
    }

    pub fn best_active_bs(&self, ue: usize) -> usize {
        self.candidates(ue, 1)[0]
    }

    /// Attachment with no optimisation app: every flow on its UE's best active station.
    pub fn default_assignment(&self) -> Vec<usize> {
        self.flows.iter().map(|f| self.best_active_bs(f.ue)).collect()
    }

    pub fn default_assignment_per_ue(&self) -> Vec<usize> {
        (0..self.n_ues()).map(|u| self.best_active_bs(u)).collect()
    }

    pub fn current_assignment(&self) -> Vec<usize> {
        self.flows.iter().map(|f| f.attached).collect()
    }

    pub fn flow_queued_bits(&self, flow: usize) -> u64 {
        self.flows[flow].queued_bits()
    }

    /// Bits queued at `bs` for `class`, summed over attached flows.
    pub fn bs_queue_bits(&self, bs: usize, class: ClassName) -> u64 {
        self.flows.iter().filter(|f| f.attached == bs && f.class == class).map(Flow::queued_bits).sum()
    }

    pub fn total_queued_bits(&self) -> u64 {
        self.flows.iter().map(Flow::queued_bits).sum()
    }

    /// Puts a small cell to sleep or wakes it. Flows on a station going to
    /// sleep move, queue and timestamps intact, to their best active station.
    pub fn set_sleep(&mut self, bs_id: usize, sleeping: bool) -> Result<()> {
        let bs = self.bss.get(bs_id).ok_or_else(|| Error::Netsim(format!("no base station {bs_id}")))?;
        if bs.is_macro {
            return Err(Error::Netsim("the macro cell is never put to sleep".into()));
        }
        let state = if sleeping { BsState::Sleeping } else { BsState::Active };
        if bs.state == state {
            return Ok(());
        }
        self.bss[bs_id].state = state;
        self.refresh_radio();
        if sleeping {
            self.last_util[bs_id] = 0.0;
            for f in 0..self.flows.len() {
                if self.flows[f].attached == bs_id {
                    self.flows[f].attached = self.best_active_bs(self.flows[f].ue);
                }
            }
        }
        Ok(())
    }

    /// Applies a sleep bitmask over the small cells (bit i = i-th small cell asleep).
    pub fn apply_sleep_mask(&mut self, mask: u32) -> Result<()> {
        for (i, bs) in self.small_cell_ids().into_iter().enumerate() {
            self.set_sleep(bs, mask & (1 << i) != 0)?;
        }
        Ok(())
    }

    pub fn sleep_mask(&self) -> u32 {
        self.small_cell_ids()
            .into_iter()
            .enumerate()
            .filter(|&(_, bs)| !self.bss[bs].is_active())
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    /// Power drawn with the utilisation of the last frame.
    pub fn frame_power(&self) -> f64 {
        self.bss.iter().zip(&self.last_util).map(|(b, &u)| b.power_at(u)).sum()
    }

    /// Runs one frame. `demand` and `assignment` are indexed by flow,
    /// i.e. ordered by (ue, class).
    pub fn step_frame(
        &mut self,
        frame_index: u64,
        frame: FrameInterval,
        demand: &[FlowDemand],
        assignment: &[usize],
    ) -> Result<FrameOutcome> {
        let n_flows = self.flows.len();
        let n_bs = self.n_bs();
        if demand.len() != n_flows || assignment.len() != n_flows {
            return Err(Error::Netsim(format!(
                "expected {n_flows} demands and assignments, got {} and {}",
                demand.len(),
                assignment.len()
            )));
        }
        for (f, &bs) in assignment.iter().enumerate() {
            match self.bss.get(bs) {
                None => return Err(Error::Netsim(format!("flow {f} assigned to unknown bs {bs}"))),
                Some(b) if !b.is_active() => {
                    return Err(Error::Netsim(format!("flow {f} assigned to sleeping bs {bs}")))
                }
                _ => {}
            }
        }
        let frame_s = frame.len_s();
        let mid_ns = frame.start_ns + frame.len_ns() / 2;

        let mut queued_start = [0u64; N_CLASSES];
        let mut arrived = [0u64; N_CLASSES];
        for (f, flow) in self.flows.iter_mut().enumerate() {
            let c = flow.class.index();
            queued_start[c] += flow.queued_bits();
            let d = &demand[f];
            if d.ue_id != flow.ue || d.class != flow.class {
                return Err(Error::Netsim(format!("demand {f} does not match flow order")));
            }
            flow.attached = assignment[f];
            if d.bits > 0 {
                flow.queue.push_back(Bundle { bits: d.bits, enqueued_ns: mid_ns });
                arrived[c] += d.bits;
            }
        }

        // Resource share each station needs to clear its queues this frame.
        let queued: Vec<u64> = self.flows.iter().map(Flow::queued_bits).collect();
        let mut load = vec![0.0; n_bs];
        for (f, flow) in self.flows.iter().enumerate() {
            if queued[f] > 0 {
                let rate = self.rate_bps(flow.ue, flow.attached);
                load[flow.attached] += if rate > 0.0 { queued[f] as f64 / (rate * frame_s) } else { f64::INFINITY };
            }
        }

        let mut served = [0u64; N_CLASSES];
        let mut dropped = [0u64; N_CLASSES];
        let mut lat_weighted = [0.0f64; N_CLASSES];
        let mut bs_served = vec![0u64; n_bs];
        let mut bs_backlog = vec![0u64; n_bs];
        let mut per_flow = Vec::with_capacity(n_flows);

        for (f, flow) in self.flows.iter_mut().enumerate() {
            let spec = &self.classes[flow.class.index()];
            let c = flow.class.index();
            let bs = flow.attached;
            let l = load[bs];
            let mut budget = if l <= 1.0 { queued[f] } else { (queued[f] as f64 / l).floor() as u64 };
            let service_ms = (self.tti_ms / (1.0 - l.min(0.99))).min(spec.qos_delay_budget_ms);
            let mut flow_served = 0u64;
            let mut flow_lat = 0.0;
            while budget > 0 {
                let Some(front) = flow.queue.front_mut() else { break };
                let take = front.bits.min(budget);
                let waited_ms = frame.start_ns.saturating_sub(front.enqueued_ns) as f64 / NS_PER_MS;
                flow_lat += take as f64 * (service_ms + waited_ms);
                front.bits -= take;
                budget -= take;
                flow_served += take;
                if front.bits == 0 {
                    flow.queue.pop_front();
                }
            }
            let backlog: u64 = flow.queue.iter().map(|b| b.bits).sum();
            let budget_ns = (spec.qos_delay_budget_ms * NS_PER_MS) as u64;
            let mut flow_dropped = 0u64;
            flow.queue.retain(|b| {
                let expired = frame.end_ns.saturating_sub(b.enqueued_ns) > budget_ns;
                if expired {
                    flow_dropped += b.bits;
                }
                !expired
            });
            served[c] += flow_served;
            dropped[c] += flow_dropped;
            lat_weighted[c] += flow_lat;
            bs_served[bs] += flow_served;
            bs_backlog[bs] += backlog;
            let latency_ms = if flow_served > 0 {
                flow_lat / flow_served as f64
            } else if backlog > 0 {
                spec.qos_delay_budget_ms
            } else {
                0.0
            };
            per_flow.push(FlowFrameStats {
                ue_id: flow.ue,
                class: flow.class,
                bs_id: bs,
                served_bits: flow_served,
                dropped_bits: flow_dropped,
                throughput_mbps: flow_served as f64 / frame_s / 1e6,
                latency_ms,
            });
        }

        let mut per_bs = Vec::with_capacity(n_bs);
        for (b, bs) in self.bss.iter().enumerate() {
            let util = if bs.is_active() { load[b].min(1.0) } else { 0.0 };
            self.last_util[b] = util;
            per_bs.push(BsFrameStats {
                bs_id: b,
                active: bs.is_active(),
                load: load[b],
                util,
                served_bits: bs_served[b],
                backlog_bits: bs_backlog[b],
                power_w: bs.power_at(util),
            });
        }
        let power_w: f64 = per_bs.iter().map(|s| s.power_w).sum();

        let mut queued_end = [0u64; N_CLASSES];
        for flow in &self.flows {
            queued_end[flow.class.index()] += flow.queued_bits();
        }
        let total_served: u64 = served.iter().sum();
        let total_dropped: u64 = dropped.iter().sum();
        let ratio = |num: u64, den: u64| if den > 0 { num as f64 / den as f64 } else { 0.0 };
        let kpi = KpiRecord {
            frame_index,
            frame_s,
            offered_mbps: arrived.iter().sum::<u64>() as f64 / frame_s / 1e6,
            throughput_mbps: total_served as f64 / frame_s / 1e6,
            class_throughput_mbps: served.map(|s| s as f64 / frame_s / 1e6),
            class_latency_ms: std::array::from_fn(|c| if served[c] > 0 { lat_weighted[c] / served[c] as f64 } else { 0.0 }),
            class_drop_rate: std::array::from_fn(|c| ratio(dropped[c], dropped[c] + served[c])),
            drop_rate: ratio(total_dropped, total_dropped + total_served),
            power_w,
            energy_efficiency: energy_efficiency(total_served, power_w * frame_s),
            arrived_bits: arrived,
            delivered_bits: served,
            dropped_bits: dropped,
            queued_bits_start: queued_start,
            queued_bits_end: queued_end,
        };
        Ok(FrameOutcome { kpi, per_bs, per_flow })
    }
}
