//! Post-processing: forecast residuals, per-mode KPI aggregates and deltas,
//! volume-binned tables and the sleeping threshold sweep.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, Mode};
use crate::error::{Error, Result};
use crate::forecast::{baseline_moving_average, baseline_seasonal_naive};
use crate::netsim::KpiRecord;
use crate::par;
use crate::rlapps::SleepingApp;
use crate::runner::{idle_stats, Prediction, Scenario};
use crate::traffic::{build_sources, generate_frame_demand_scaled, FrameInterval, SECONDS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub source: String,
    pub e: Vec<f64>,
}

/// `e_t = y_t - yhat_t`
pub fn residuals(y: &[f64], yhat: &[f64], source: &str) -> Result<ResidualSeries> {
    if y.len() != yhat.len() {
        return Err(Error::Eval(format!("{} actual values but {} predictions", y.len(), yhat.len())));
    }
    Ok(ResidualSeries { source: source.to_string(), e: y.iter().zip(yhat).map(|(a, b)| a - b).collect() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResidualRow<'a> {
    source: &'a str,
    index: usize,
    residual: f64,
}

/// Long format, one row per residual: `source,index,residual`.
pub fn write_residuals_csv(path: &Path, series: &[ResidualSeries]) -> Result<()> {
    write_rows(
        path,
        series.iter().flat_map(|s| s.e.iter().enumerate().map(|(index, &residual)| ResidualRow { source: &s.source, index, residual })),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl ResidualSeries {
    pub fn stats(&self) -> ResidualStats {
        let n = self.e.len();
        if n == 0 {
            return ResidualStats { n, mean: 0.0, std: 0.0, mae: 0.0, rmse: 0.0 };
        }
        let nf = n as f64;
        let mean = self.e.iter().sum::<f64>() / nf;
        let var = self.e.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
        let mae = self.e.iter().map(|e| e.abs()).sum::<f64>() / nf;
        let rmse = (self.e.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();
        ResidualStats { n, mean, std: var.sqrt(), mae, rmse }
    }
}

/// Residuals of the forecaster and of the two naive baselines over the
/// predicted frames of the evaluation day. The seasonal baseline reads the
/// same frame of the previous day from `previous_day`.
pub fn forecast_residuals(
    previous_day: &[f64],
    eval_offered: &[f64],
    predictions: &[Prediction],
    ma_window: usize,
) -> Result<Vec<ResidualSeries>> {
    let season = previous_day.len();
    let mut joined = previous_day.to_vec();
    joined.extend_from_slice(eval_offered);
    let mut actual = Vec::with_capacity(predictions.len());
    let (mut model, mut naive, mut ma) = (Vec::new(), Vec::new(), Vec::new());
    for p in predictions {
        let t = season + p.frame as usize;
        if t >= joined.len() {
            return Err(Error::Eval(format!("prediction for frame {} lies past the evaluation series", p.frame)));
        }
        actual.push(joined[t]);
        model.push(p.predicted_mbps);
        naive.push(baseline_seasonal_naive(&joined[..t], season)?);
        ma.push(baseline_moving_average(&joined[..t], ma_window)?);
    }
    Ok(vec![
        residuals(&actual, &model, "forecaster")?,
        residuals(&actual, &naive, "seasonal_naive")?,
        residuals(&actual, &ma, &format!("moving_average_{ma_window}"))?,
    ])
}

/// KPI row as exported to `kpi.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiRow {
    pub frame: u64,
    pub throughput_mbps: f64,
    pub latency_ms_video: f64,
    pub latency_ms_gaming: f64,
    pub latency_ms_voice: f64,
    pub drop_rate: f64,
    pub power_w: f64,
    pub ee_mbits_per_joule: f64,
}

impl From<&KpiRecord> for KpiRow {
    fn from(k: &KpiRecord) -> Self {
        KpiRow {
            frame: k.frame_index,
            throughput_mbps: k.throughput_mbps,
            latency_ms_video: k.class_latency_ms[0],
            latency_ms_gaming: k.class_latency_ms[1],
            latency_ms_voice: k.class_latency_ms[2],
            drop_rate: k.drop_rate,
            power_w: k.power_w,
            ee_mbits_per_joule: k.energy_efficiency,
        }
    }
}

pub fn write_kpi_csv(path: &Path, kpis: &[KpiRecord]) -> Result<()> {
    write_rows(path, kpis.iter().map(KpiRow::from))
}

pub fn read_kpi_csv(path: &Path) -> Result<Vec<KpiRow>> {
    read_rows(path)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Everything `compare_modes` needs from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub label: String,
    pub mode: Mode,
    /// Identifies the scenario (config minus the mode) and seed.
    pub scenario: String,
    pub kpis: Vec<KpiRow>,
    pub offered: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub label: String,
    pub mode: Mode,
    pub frames: usize,
    pub mean_throughput_mbps: f64,
    pub mean_energy_efficiency: f64,
    pub mean_drop_rate: f64,
    pub mean_power_w: f64,
}

pub fn aggregate(label: &str, mode: Mode, kpis: &[KpiRow]) -> ModeAggregate {
    let n = kpis.len().max(1) as f64;
    let mean = |f: fn(&KpiRow) -> f64| kpis.iter().map(f).sum::<f64>() / n;
    ModeAggregate {
        label: label.to_string(),
        mode,
        frames: kpis.len(),
        mean_throughput_mbps: mean(|k| k.throughput_mbps),
        mean_energy_efficiency: mean(|k| k.ee_mbits_per_joule),
        mean_drop_rate: mean(|k| k.drop_rate),
        mean_power_w: mean(|k| k.power_w),
    }
}

pub const METRICS: [&str; 3] = ["throughput_mbps", "energy_efficiency", "drop_rate"];

fn metric(a: &ModeAggregate, name: &str) -> f64 {
    match name {
        "throughput_mbps" => a.mean_throughput_mbps,
        "energy_efficiency" => a.mean_energy_efficiency,
        "drop_rate" => a.mean_drop_rate,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// `run` relative to `baseline` on one aggregate metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub metric: String,
    pub run: String,
    pub baseline: String,
    pub absolute: f64,
    /// `(run - baseline) / baseline`; 0 when both are 0.
    pub relative: f64,
}

pub fn delta(run: &ModeAggregate, baseline: &ModeAggregate, name: &str) -> Delta {
    let (a, b) = (metric(run, name), metric(baseline, name));
    let relative = if a == b { 0.0 } else { (a - b) / b };
    Delta { metric: name.to_string(), run: run.label.clone(), baseline: baseline.label.clone(), absolute: a - b, relative }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStats {
    pub source: String,
    pub stats: ResidualStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Headline {
    /// Relative energy-efficiency gain of proposed over always-steering.
    pub ee_vs_always_steering: Option<f64>,
    /// Relative throughput gain of proposed over always-sleeping.
    pub throughput_vs_always_sleeping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub aggregates: Vec<ModeAggregate>,
    pub deltas: Vec<Delta>,
    pub headline: Headline,
    pub residuals: Vec<NamedStats>,
}

/// Aggregates every run and computes deltas between every pair of runs. A
/// single run is compared with itself.
pub fn compare_modes(runs: &[RunData]) -> Result<ComparisonReport> {
    let first = runs.first().ok_or_else(|| Error::Eval("nothing to compare".into()))?;
    for r in runs {
        if r.scenario != first.scenario || r.kpis.len() != first.kpis.len() {
            return Err(Error::Eval(format!(
                "run {} does not share the scenario and duration of run {}",
                r.label, first.label
            )));
        }
    }
    let aggregates: Vec<ModeAggregate> = runs.iter().map(|r| aggregate(&r.label, r.mode, &r.kpis)).collect();
    let mut deltas = Vec::new();
    for a in &aggregates {
        for b in &aggregates {
            if a.label != b.label || aggregates.len() == 1 {
                deltas.extend(METRICS.iter().map(|m| delta(a, b, m)));
            }
        }
    }
    let find = |m: Mode| aggregates.iter().find(|a| a.mode == m);
    let mut headline = Headline::default();
    if let Some(p) = find(Mode::Proposed) {
        headline.ee_vs_always_steering = find(Mode::AlwaysSteering).map(|b| delta(p, b, "energy_efficiency").relative);
        headline.throughput_vs_always_sleeping = find(Mode::AlwaysSleeping).map(|b| delta(p, b, "throughput_mbps").relative);
    }
    Ok(ComparisonReport { scenario: first.scenario.clone(), aggregates, deltas, headline, residuals: Vec::new() })
}

impl ComparisonReport {
    pub fn with_residuals(mut self, series: &[ResidualSeries]) -> Self {
        self.residuals = series.iter().map(|s| NamedStats { source: s.source.clone(), stats: s.stats() }).collect();
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {}", self.scenario);
        let _ = writeln!(s, "\n{:<20} {:>7} {:>14} {:>12} {:>10} {:>10}", "run", "frames", "thr [Mbps]", "EE [Mb/J]", "drop", "power [W]");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{:<20} {:>7} {:>14.3} {:>12.5} {:>10.5} {:>10.2}",
                a.label, a.frames, a.mean_throughput_mbps, a.mean_energy_efficiency, a.mean_drop_rate, a.mean_power_w
            );
        }
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:+.2}%", 100.0 * x));
        let _ = writeln!(s, "\nproposed vs always_steering, energy efficiency: {}", pct(self.headline.ee_vs_always_steering));
        let _ = writeln!(s, "proposed vs always_sleeping, throughput:        {}", pct(self.headline.throughput_vs_always_sleeping));
        if !self.residuals.is_empty() {
            let _ = writeln!(s, "\n{:<20} {:>7} {:>10} {:>10} {:>10} {:>10}", "forecast", "n", "mean", "std", "MAE", "RMSE");
            for r in &self.residuals {
                let t = &r.stats;
                let _ = writeln!(s, "{:<20} {:>7} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", r.source, t.n, t.mean, t.std, t.mae, t.rmse);
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;
        write_rows(&dir.join("aggregates.csv"), &self.aggregates)?;
        write_rows(&dir.join("deltas.csv"), &self.deltas)?;
        Ok(())
    }
}

/// Per-run means over frames grouped by offered volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub run: String,
    pub volume_lo_mbps: f64,
    pub volume_hi_mbps: f64,
    pub frames: usize,
    pub throughput_mbps: f64,
    pub ee_mbits_per_joule: f64,
    pub drop_rate: f64,
}

pub fn volume_bins(runs: &[RunData], bin_mbps: f64) -> Result<Vec<BinRow>> {
    if !(bin_mbps > 0.0) {
        return Err(Error::Eval("bin width must be > 0".into()));
    }
    let mut rows = Vec::new();
    for r in runs {
        if r.offered.len() != r.kpis.len() {
            return Err(Error::Eval(format!("run {} has {} volumes for {} KPI rows", r.label, r.offered.len(), r.kpis.len())));
        }
        let mut bins: std::collections::BTreeMap<i64, Vec<&KpiRow>> = Default::default();
        for (v, k) in r.offered.iter().zip(&r.kpis) {
            bins.entry((v / bin_mbps).floor() as i64).or_default().push(k);
        }
        for (b, ks) in bins {
            let n = ks.len() as f64;
            rows.push(BinRow {
                run: r.label.clone(),
                volume_lo_mbps: b as f64 * bin_mbps,
                volume_hi_mbps: (b + 1) as f64 * bin_mbps,
                frames: ks.len(),
                throughput_mbps: ks.iter().map(|k| k.throughput_mbps).sum::<f64>() / n,
                ee_mbits_per_joule: ks.iter().map(|k| k.ee_mbits_per_joule).sum::<f64>() / n,
                drop_rate: ks.iter().map(|k| k.drop_rate).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub volume_mbps: f64,
    pub offered_mbps: f64,
    pub throughput_mbps: f64,
    pub ee_mbits_per_joule: f64,
    pub drop_rate: f64,
    /// Same segment and traffic with every cell awake.
    pub ee_no_sleep: f64,
    pub drop_rate_no_sleep: f64,
    /// False when the segment did not offer the target volume or the
    /// network carried less than 90% of it.
    pub reachable: bool,
}

struct SegmentMeans {
    offered: f64,
    throughput: f64,
    ee: f64,
    drop: f64,
}

fn run_segment(sc: &Scenario, volume: f64, index: u64, app: Option<&SleepingApp>) -> Result<SegmentMeans> {
    let cfg = &sc.config;
    let frames = ((cfg.eval.sweep_segment_s / sc.frame_s()).round() as u64).max(1);
    let multiplier = volume / sc.base_demand_mbps;
    let mut net = sc.network()?;
    let classes = &cfg.scenario.classes;
    let mut sources = build_sources(cfg.scenario.topology.n_ues, classes, derive_seed(cfg.seed, "sweep", index));
    let day_fraction = sc.profile.time_of_day_for(multiplier) / SECONDS_PER_DAY;
    let mut app = app.cloned();
    if let Some(a) = app.as_mut() {
        a.set_active(true);
    }
    let mut last = idle_stats(&net);
    let (mut off, mut thr, mut ee, mut drop) = (0.0, 0.0, 0.0, 0.0);
    for f in 0..frames {
        if let Some(a) = app.as_mut() {
            if f % a.config.epoch_frames == 0 {
                let s = a.config.state(&last, day_fraction);
                net.apply_sleep_mask(a.decide(&s, false)?)?;
            }
        }
        let iv = FrameInterval::nth(f, cfg.pipeline.frame_ms);
        let d = generate_frame_demand_scaled(&mut sources, classes, iv, multiplier, crate::par::Parallelism::Sequential);
        let assign = net.default_assignment();
        let out = net.step_frame(f, iv, &d, &assign)?;
        off += out.kpi.offered_mbps;
        thr += out.kpi.throughput_mbps;
        ee += out.kpi.energy_efficiency;
        drop += out.kpi.drop_rate;
        last = out.per_bs;
    }
    let n = frames as f64;
    Ok(SegmentMeans { offered: off / n, throughput: thr / n, ee: ee / n, drop: drop / n })
}

/// For each target volume, a fixed-length segment at that constant load with
/// the sleeping rApp active, paired with the same segment without it.
pub fn threshold_sweep(sc: &Scenario, volumes: &[f64], app: &SleepingApp) -> Result<Vec<SweepRow>> {
    if volumes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Eval("sweep volumes must be sorted".into()));
    }
    let idx: Vec<usize> = (0..volumes.len()).collect();
    par::map_slice(sc.config.parallelism, &idx, |&i| {
        let v = volumes[i];
        let with = run_segment(sc, v, i as u64, Some(app))?;
        let without = run_segment(sc, v, i as u64, None)?;
        let reachable = (with.offered - v).abs() <= 0.05 * v.max(1.0) && with.throughput >= 0.9 * with.offered;
        Ok(SweepRow {
            volume_mbps: v,
            offered_mbps: with.offered,
            throughput_mbps: with.throughput,
            ee_mbits_per_joule: with.ee,
            drop_rate: with.drop,
            ee_no_sleep: without.ee,
            drop_rate_no_sleep: without.drop,
            reachable,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u64, thr: f64, ee: f64, drop: f64) -> KpiRow {
        KpiRow {
            frame,
            throughput_mbps: thr,
            latency_ms_video: 1.0,
            latency_ms_gaming: 1.0,
            latency_ms_voice: 1.0,
            drop_rate: drop,
            power_w: 100.0,
            ee_mbits_per_joule: ee,
        }
    }

    fn run(label: &str, mode: Mode, scale: f64) -> RunData {
        RunData {
            label: label.into(),
            mode,
            scenario: "s".into(),
            kpis: (0..4).map(|f| row(f, 100.0 * scale + f as f64, 0.3 * scale, 0.01)).collect(),
            offered: vec![130.0, 135.0, 150.0, 230.0],
        }
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residuals(&[200.0, 210.0], &[195.0, 215.0], "m").unwrap().e, vec![5.0, -5.0]);
        assert!(residuals(&[1.0, 2.0], &[1.0, 2.0], "m").unwrap().e.iter().all(|&e| e == 0.0));
        assert!(residuals(&[1.0], &[1.0, 2.0], "m").is_err());
    }

    #[test]
    fn identical_runs_have_zero_deltas() {
        let r = compare_modes(&[run("a", Mode::Proposed, 1.0), run("b", Mode::AlwaysSteering, 1.0)]).unwrap();
        assert!(r.deltas.iter().all(|d| d.relative == 0.0 && d.absolute == 0.0));
        assert_eq!(r.headline.ee_vs_always_steering, Some(0.0));
        let single = compare_modes(&[run("a", Mode::Proposed, 1.0)]).unwrap();
        assert_eq!(single.deltas.len(), METRICS.len());
        assert!(single.deltas.iter().all(|d| d.absolute == 0.0 && d.relative == 0.0));
    }

    #[test]
    fn deltas_follow_aggregates() {
        let r = compare_modes(&[run("p", Mode::Proposed, 1.2), run("s", Mode::AlwaysSleeping, 1.0)]).unwrap();
        let (p, s) = (&r.aggregates[0], &r.aggregates[1]);
        let want = (p.mean_throughput_mbps - s.mean_throughput_mbps) / s.mean_throughput_mbps;
        assert!((r.headline.throughput_vs_always_sleeping.unwrap() - want).abs() < 1e-15);
        assert!(r.to_text().contains("always_sleeping"));
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let mut b = run("b", Mode::NoApp, 1.0);
        b.scenario = "other".into();
        assert!(compare_modes(&[run("a", Mode::Proposed, 1.0), b]).is_err());
        let mut c = run("c", Mode::NoApp, 1.0);
        c.kpis.pop();
        assert!(compare_modes(&[run("a", Mode::Proposed, 1.0), c]).is_err());
    }

    #[test]
    fn bins_partition_frames() {
        let rows = volume_bins(&[run("a", Mode::NoApp, 1.0)], 20.0).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.frames).sum::<usize>(), 4);
        assert_eq!((rows[0].volume_lo_mbps, rows[0].frames), (120.0, 2));
    }
}
