use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ci_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ci.toml")
}

fn ricsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ricsim"))
        .arg("--config")
        .arg(ci_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RICSIM_SEED")
        .env_remove("RICSIM_MODE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_app_run_writes_one_kpi_row_per_second() {
    let dir = tempfile::tempdir().unwrap();
    let o = ricsim(dir.path(), &["--mode", "no-app", "--duration", "60", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kpi = std::fs::read_to_string(dir.path().join("eval/no_app/kpi.csv")).unwrap();
    let mut lines = kpi.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frame,throughput_mbps,latency_ms_video,latency_ms_gaming,latency_ms_voice,drop_rate,power_w,ee_mbits_per_joule"
    );
    assert_eq!(lines.count(), 60);
    assert!(dir.path().join("eval/no_app/manifest.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(ricsim(d.path(), &["--mode", "no_app", "--duration", "90", "--seed", "4", "run"]).status.success());
    }
    for f in ["train/series_raw.csv", "eval/no_app/kpi.csv", "eval/no_app/series.csv", "report/aggregates.csv", "eval/no_app/manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_on_a_single_run_reports_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ricsim(dir.path(), &["--mode", "no-app", "--duration", "30", "evaluate"]).status.success());
    let o = ricsim(dir.path(), &["compare"]);
    assert!(o.status.success());
    let deltas = std::fs::read_to_string(dir.path().join("report/deltas.csv")).unwrap();
    assert!(deltas.lines().skip(1).all(|l| l.ends_with(",0.0,0.0")), "{deltas}");
}

#[test]
fn missing_upstream_fails_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = ricsim(dir.path(), &["train-forecaster"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing upstream artifact") && err.contains("series_smoothed.csv"), "{err}");
}

#[test]
fn invalid_config_is_rejected_with_module_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nunknown_key = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ricsim")).arg("--config").arg(&cfg).arg("show-config").output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: config:"));
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ricsim"))
        .arg("show-config")
        .env("RICSIM_CONFIG", ci_config())
        .env("RICSIM_SEED", "42")
        .env("RICSIM_MODE", "always_sleeping")
        .env("RICSIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("seed = 42"), "{text}");
    assert!(text.contains("mode = \"always_sleeping\""));
    assert!(text.contains("time_warp = 60.0"));
}
