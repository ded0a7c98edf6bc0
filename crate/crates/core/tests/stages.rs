use std::path::Path;

use ricsim_core::config::{Mode, RunConfig};
use ricsim_core::evalkit::read_kpi_csv;
use ricsim_core::orchestrator::{audit_log, Decision};
use ricsim_core::stages::{self, sha256_file, Layout, Manifest, MANIFEST};

fn shipped(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn quick() -> RunConfig {
    let mut cfg = shipped("ci.toml");
    cfg.forecaster.train.epochs = 1;
    cfg.forecaster.train.max_pairs_per_epoch = 128;
    cfg.rl.sleeping_episodes = 1;
    cfg
}

#[test]
fn shipped_configs_parse() {
    let def = shipped("default.toml");
    let ci = shipped("ci.toml");
    assert_eq!(def.scenario.profile.time_warp, 1.0);
    assert_eq!(ci.scenario.profile.time_warp, 60.0);
    assert_eq!(def.orchestrator.thresholds, ci.orchestrator.thresholds);
    assert_eq!(RunConfig::from_toml(&def.to_toml().unwrap()).unwrap(), def);
}

#[test]
fn no_app_minute_has_sixty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let l = Layout::new(dir.path());
    let cfg = RunConfig { mode: Mode::NoApp, duration_s: Some(60.0), ..shipped("ci.toml") };
    stages::run(&cfg, &l, &[Mode::NoApp]).unwrap();
    assert_eq!(read_kpi_csv(&l.eval(Mode::NoApp).join("kpi.csv")).unwrap().len(), 60);
}

#[test]
fn proposed_day_uses_both_apps_and_records_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let l = Layout::new(dir.path());
    let cfg = quick();
    stages::run(&cfg, &l, &[Mode::Proposed]).unwrap();
    let log = stages::read_eval_decisions(&l, Mode::Proposed).unwrap();
    assert_eq!(log.len() as u64, 1440);
    assert!(log.iter().any(|e| e.decision == Decision::ActivateSteering && e.s == 0));
    assert!(log.iter().any(|e| e.s == 1));
    assert!(log.iter().any(|e| e.v == 1));
    assert_eq!(audit_log(&log, cfg.orchestrator.lead_frames), 0);

    let m = Manifest::read(&l.eval(Mode::Proposed).join(MANIFEST)).unwrap();
    assert_eq!(m.inputs["forecaster/model.ckpt"], sha256_file(&l.model()).unwrap());
    let upstream = Manifest::read(&l.forecaster().join(MANIFEST)).unwrap();
    assert_eq!(upstream.outputs["forecaster/model.ckpt"], m.inputs["forecaster/model.ckpt"]);
    assert_eq!(m.config_hash, cfg.hash());
}

#[test]
fn replay_reproduces_the_logged_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let l = Layout::new(dir.path());
    let cfg = RunConfig { duration_s: Some(300.0), ..quick() };
    stages::simulate(&cfg, &l).unwrap();
    stages::train_forecaster(&cfg, &l).unwrap();
    stages::train_apps(&cfg, &l).unwrap();
    stages::evaluate(&cfg, &l).unwrap();
    stages::replay(&cfg, &l, &l.eval(Mode::Proposed).join("series.csv")).unwrap();
    let live = std::fs::read(l.eval(Mode::Proposed).join("decisions.csv")).unwrap();
    let replayed = std::fs::read(l.replay().join("decisions.csv")).unwrap();
    assert_eq!(live, replayed);
}

#[test]
fn sweep_with_one_volume_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let l = Layout::new(dir.path());
    let mut cfg = quick();
    cfg.eval.sweep_segment_s = 30.0;
    stages::train_apps(&cfg, &l).unwrap();
    let (_, rows) = stages::sweep(&cfg, &l, Some(&[150.0])).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].volume_mbps, 150.0);
}

#[test]
fn evaluate_without_upstream_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let l = Layout::new(dir.path());
    let err = stages::evaluate(&RunConfig { mode: Mode::AlwaysSleeping, ..quick() }, &l).unwrap_err();
    assert!(err.to_string().contains("sleeping.ckpt"), "{err}");
}
