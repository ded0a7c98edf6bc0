//! Stage runners over an artifact directory. Each stage reads the files of
//! earlier stages, writes only its own subdirectory and leaves a manifest
//! listing the SHA-256 of what it read and wrote.
//!
//! ```text
//! <out>/train/       series_raw.csv series_smoothed.csv kpi.csv
//! <out>/forecaster/  model.ckpt loss.csv
//! <out>/apps/        steering.ckpt sleeping.ckpt *_rewards.csv
//! <out>/eval/<mode>/ kpi.csv series.csv decisions.csv predictions.csv objective.csv
//! <out>/sweep/       sweep.csv
//! <out>/report/      report.txt report.json aggregates.csv deltas.csv bins.csv residuals.csv
//! <out>/replay/      decisions.csv predictions.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{derive_seed, Mode, RunConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::evalkit::{self, ComparisonReport, RunData, SweepRow};
use crate::forecast::{load_model, save_model, write_loss_history, ForecastModel};
use crate::orchestrator::{read_decision_log, write_decision_log};
use crate::pipeline::{read_series_csv, write_series_csv};
use crate::rlapps::{load_sleeping, load_steering, save_sleeping, save_steering, write_episode_rewards, SleepingApp, SteeringApp};
use crate::runner::{self, Components, Prediction, Scenario};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub schema_version: u32,
    pub checkpoint_format: u32,
    pub config_hash: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub mode: Mode,
    /// Paths relative to the artifact root, mapped to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Paths of every artifact under one output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn forecaster(&self) -> PathBuf {
        self.root.join("forecaster")
    }

    pub fn apps(&self) -> PathBuf {
        self.root.join("apps")
    }

    pub fn eval(&self, mode: Mode) -> PathBuf {
        self.root.join("eval").join(mode.as_str())
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn replay(&self) -> PathBuf {
        self.root.join("replay")
    }

    pub fn raw_series(&self) -> PathBuf {
        self.train().join("series_raw.csv")
    }

    pub fn smoothed_series(&self) -> PathBuf {
        self.train().join("series_smoothed.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.forecaster().join("model.ckpt")
    }

    pub fn steering(&self) -> PathBuf {
        self.apps().join("steering.ckpt")
    }

    pub fn sleeping(&self) -> PathBuf {
        self.apps().join("sleeping.ckpt")
    }

    fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }
}

struct StageWriter<'a> {
    layout: &'a Layout,
    dir: PathBuf,
    stage: &'static str,
    cfg: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl<'a> StageWriter<'a> {
    fn new(layout: &'a Layout, dir: PathBuf, stage: &'static str, cfg: &'a RunConfig) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        let copy = dir.join(CONFIG_COPY);
        fs::write(&copy, cfg.to_toml()?)?;
        Ok(StageWriter { layout, dir, stage, cfg, inputs: BTreeMap::new(), outputs: vec![copy] })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(self.layout.relative(path), sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn finish(self) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(self.layout.relative(p), sha256_file(p)?);
        }
        let m = Manifest {
            stage: self.stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            checkpoint_format: checkpoint::FORMAT_VERSION,
            config_hash: self.cfg.hash(),
            scenario_hash: self.cfg.scenario_hash(),
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            inputs: self.inputs,
            outputs,
        };
        fs::write(self.dir.join(MANIFEST), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }
}

/// Warns when an upstream stage was produced under a different scenario, and
/// logs whether `file` still matches the hash its producer recorded.
fn check_upstream(layout: &Layout, dir: &Path, file: &Path, cfg: &RunConfig) -> Result<()> {
    let m = Manifest::read(&dir.join(MANIFEST))?;
    if m.scenario_hash != cfg.scenario_hash() {
        log::warn!("{} was produced under a different configuration", dir.display());
    }
    let key = layout.relative(file);
    let actual = sha256_file(file)?;
    match m.outputs.get(&key) {
        Some(h) if *h == actual => log::info!("{key}: hash {} matches its manifest", &actual[..12]),
        _ => log::warn!("{key}: hash {} does not match its manifest", &actual[..12]),
    }
    Ok(())
}

/// Step 1: the training day under default attachment.
pub fn simulate(cfg: &RunConfig, layout: &Layout) -> Result<Manifest> {
    let sc = Scenario::new(cfg.clone())?;
    let day = runner::simulate_training_day(&sc)?;
    let mut w = StageWriter::new(layout, layout.train(), "simulate", cfg)?;
    write_series_csv(&w.output("series_raw.csv"), &day.raw)?;
    write_series_csv(&w.output("series_smoothed.csv"), &day.smoothed)?;
    evalkit::write_kpi_csv(&w.output("kpi.csv"), &day.kpis)?;
    w.finish()
}

/// Steps 2-3: fits the forecaster on the smoothed training series.
pub fn train_forecaster(cfg: &RunConfig, layout: &Layout) -> Result<Manifest> {
    cfg.validate()?;
    let input = layout.smoothed_series();
    let smoothed = read_series_csv(&input)?;
    let model = runner::train_forecaster(cfg, &smoothed)?;
    let mut w = StageWriter::new(layout, layout.forecaster(), "train-forecaster", cfg)?;
    w.input(&input)?;
    save_model(&model, &w.output("model.ckpt"))?;
    write_loss_history(&w.output("loss.csv"), &model.history)?;
    w.finish()
}

/// Offline training of both apps on simulated training days.
pub fn train_apps(cfg: &RunConfig, layout: &Layout) -> Result<Manifest> {
    let sc = Scenario::new(cfg.clone())?;
    let (steering, sr) = runner::train_steering(&sc)?;
    let (sleeping, lr) = runner::train_sleeping(&sc)?;
    let mut w = StageWriter::new(layout, layout.apps(), "train-apps", cfg)?;
    save_steering(&steering, &w.output("steering.ckpt"))?;
    save_sleeping(&sleeping, &w.output("sleeping.ckpt"))?;
    write_episode_rewards(&w.output("steering_rewards.csv"), &sr)?;
    write_episode_rewards(&w.output("sleeping_rewards.csv"), &lr)?;
    w.finish()
}

fn load_forecaster(cfg: &RunConfig, layout: &Layout) -> Result<ForecastModel> {
    let path = layout.model();
    let model = load_model(&path)?;
    check_upstream(layout, &layout.forecaster(), &path, cfg)?;
    if model.config != cfg.forecaster.model {
        return Err(Error::Config(format!("{} was trained with a different model configuration", path.display())));
    }
    Ok(model)
}

fn load_steering_app(cfg: &RunConfig, layout: &Layout) -> Result<SteeringApp> {
    let path = layout.steering();
    let app = load_steering(cfg.rl.steering.clone(), &path, derive_seed(cfg.seed, "steering", 1))?;
    check_upstream(layout, &layout.apps(), &path, cfg)?;
    Ok(app)
}

fn load_sleeping_app(cfg: &RunConfig, layout: &Layout) -> Result<SleepingApp> {
    let path = layout.sleeping();
    let app = load_sleeping(cfg.rl.sleeping.clone(), &path, derive_seed(cfg.seed, "sleeping", 1))?;
    check_upstream(layout, &layout.apps(), &path, cfg)?;
    Ok(app)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ObjectiveRow {
    frame: u64,
    objective_delta: f64,
}

/// Steps 4-5: the evaluation day under `cfg.mode`.
pub fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<Manifest> {
    let sc = Scenario::new(cfg.clone())?;
    let mode = cfg.mode;
    let mut w = StageWriter::new(layout, layout.eval(mode), "evaluate", cfg)?;
    let model = if mode.needs_forecaster() {
        w.input(&layout.model())?;
        Some(load_forecaster(cfg, layout)?)
    } else {
        None
    };
    let history = if mode.needs_forecaster() {
        w.input(&layout.raw_series())?;
        read_series_csv(&layout.raw_series())?
    } else {
        Vec::new()
    };
    let steering = if mode.needs_steering() {
        w.input(&layout.steering())?;
        Some(load_steering_app(cfg, layout)?)
    } else {
        None
    };
    let sleeping = if mode.needs_sleeping() {
        w.input(&layout.sleeping())?;
        Some(load_sleeping_app(cfg, layout)?)
    } else {
        None
    };
    let out = runner::evaluate(&sc, mode, Components { forecaster: model.as_ref(), steering, sleeping, history: &history })?;
    evalkit::write_kpi_csv(&w.output("kpi.csv"), &out.kpis)?;
    write_series_csv(&w.output("series.csv"), &out.offered)?;
    if mode.needs_forecaster() {
        write_decision_log(&w.output("decisions.csv"), &out.decisions)?;
        evalkit::write_rows(&w.output("predictions.csv"), &out.predictions)?;
    }
    let objective = out.objective.iter().map(|&(frame, objective_delta)| ObjectiveRow { frame, objective_delta });
    evalkit::write_rows(&w.output("objective.csv"), objective)?;
    w.finish()
}

/// Fixed-load segments with the trained sleeping rApp at each volume.
pub fn sweep(cfg: &RunConfig, layout: &Layout, volumes: Option<&[f64]>) -> Result<(Manifest, Vec<SweepRow>)> {
    let sc = Scenario::new(cfg.clone())?;
    let mut w = StageWriter::new(layout, layout.sweep(), "sweep", cfg)?;
    w.input(&layout.sleeping())?;
    let app = load_sleeping_app(cfg, layout)?;
    let rows = evalkit::threshold_sweep(&sc, volumes.unwrap_or(&cfg.eval.sweep_volumes), &app)?;
    evalkit::write_rows(&w.output("sweep.csv"), &rows)?;
    Ok((w.finish()?, rows))
}

/// Compares every evaluated mode found under `eval/`, using only the CSVs.
pub fn compare(cfg: &RunConfig, layout: &Layout) -> Result<(Manifest, ComparisonReport)> {
    let mut w = StageWriter::new(layout, layout.report(), "compare", cfg)?;
    let mut runs = Vec::new();
    for mode in Mode::ALL {
        let dir = layout.eval(mode);
        if !dir.join(MANIFEST).exists() {
            continue;
        }
        let m = Manifest::read(&dir.join(MANIFEST))?;
        let (kpi, series) = (dir.join("kpi.csv"), dir.join("series.csv"));
        w.input(&kpi)?;
        w.input(&series)?;
        runs.push(RunData {
            label: mode.to_string(),
            mode,
            scenario: m.scenario_hash,
            kpis: evalkit::read_kpi_csv(&kpi)?,
            offered: read_series_csv(&series)?,
        });
    }
    if runs.is_empty() {
        return Err(Error::MissingArtifact(layout.eval(cfg.mode).join(MANIFEST)));
    }
    let mut report = evalkit::compare_modes(&runs)?;
    let preds_path = layout.eval(Mode::Proposed).join("predictions.csv");
    if let Some(proposed) = runs.iter().find(|r| r.mode == Mode::Proposed).filter(|_| preds_path.exists()) {
        w.input(&preds_path)?;
        w.input(&layout.raw_series())?;
        let preds: Vec<Prediction> = evalkit::read_rows(&preds_path)?;
        let previous = read_series_csv(&layout.raw_series())?;
        let res = evalkit::forecast_residuals(&previous, &proposed.offered, &preds, cfg.eval.ma_window)?;
        evalkit::write_residuals_csv(&w.output("residuals.csv"), &res)?;
        report = report.with_residuals(&res);
    }
    report.write(&w.dir)?;
    for f in ["report.txt", "report.json", "aggregates.csv", "deltas.csv"] {
        w.output(f);
    }
    evalkit::write_rows(&w.output("bins.csv"), evalkit::volume_bins(&runs, cfg.eval.bin_mbps)?)?;
    Ok((w.finish()?, report))
}

/// Prediction and orchestration over a recorded series, without the network.
/// The training day supplies the history the first windows need.
pub fn replay(cfg: &RunConfig, layout: &Layout, series: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut w = StageWriter::new(layout, layout.replay(), "replay", cfg)?;
    w.input(&layout.model())?;
    w.input(&layout.raw_series())?;
    w.input(series)?;
    let model = load_forecaster(cfg, layout)?;
    let history = read_series_csv(&layout.raw_series())?;
    let values = read_series_csv(series)?;
    let (log, preds) = runner::replay(cfg, &model, &history, &values)?;
    write_decision_log(&w.output("decisions.csv"), &log)?;
    evalkit::write_rows(&w.output("predictions.csv"), &preds)?;
    w.finish()
}

/// The whole loop: every stage `modes` need, then a comparison.
pub fn run(cfg: &RunConfig, layout: &Layout, modes: &[Mode]) -> Result<ComparisonReport> {
    simulate(cfg, layout)?;
    if modes.iter().any(|m| m.needs_forecaster()) {
        train_forecaster(cfg, layout)?;
    }
    if modes.iter().any(|m| m.needs_steering() || m.needs_sleeping()) {
        train_apps(cfg, layout)?;
    }
    for &mode in modes {
        evaluate(&RunConfig { mode, ..cfg.clone() }, layout)?;
    }
    Ok(compare(cfg, layout)?.1)
}

/// Reads back the decision log an evaluation wrote.
pub fn read_eval_decisions(layout: &Layout, mode: Mode) -> Result<Vec<crate::orchestrator::LogEntry>> {
    read_decision_log(&layout.eval(mode).join("decisions.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scenario.profile.time_warp = 720.0;
        cfg.duration_s = Some(30.0);
        cfg.mode = Mode::NoApp;
        cfg
    }

    #[test]
    fn relative_paths_use_forward_slashes() {
        let l = Layout::new("/tmp/x");
        assert_eq!(l.relative(&l.eval(Mode::NoApp).join("kpi.csv")), "eval/no_app/kpi.csv");
    }

    #[test]
    fn missing_upstream_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let l = Layout::new(dir.path());
        let err = train_forecaster(&tiny(), &l).unwrap_err();
        assert!(err.to_string().contains("series_smoothed.csv"), "{err}");
    }

    #[test]
    fn manifest_lists_outputs_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let l = Layout::new(dir.path());
        let m = evaluate(&tiny(), &l).unwrap();
        assert_eq!(m.outputs["eval/no_app/kpi.csv"], sha256_file(&l.eval(Mode::NoApp).join("kpi.csv")).unwrap());
        assert!(m.outputs.contains_key("eval/no_app/config.toml"));
        assert!(m.inputs.is_empty());
        assert_eq!(Manifest::read(&l.eval(Mode::NoApp).join(MANIFEST)).unwrap(), m);
    }

    #[test]
    fn single_run_compares_to_itself() {
        let dir = tempfile::tempdir().unwrap();
        let l = Layout::new(dir.path());
        evaluate(&tiny(), &l).unwrap();
        let (_, report) = compare(&tiny(), &l).unwrap();
        assert_eq!(report.aggregates.len(), 1);
        assert!(report.deltas.iter().all(|d| d.absolute == 0.0));
    }
}
