//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 7-9 share the trained runs of criterion 8.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ricsim_core::config::{Mode, RunConfig};
use ricsim_core::evalkit::{ComparisonReport, SweepRow};
use ricsim_core::forecast::train::predict_pairs;
use ricsim_core::forecast::{autocorrelation, baseline_moving_average, decompose, train, ForecastModel, Mat, ModelConfig, TrainConfig};
use ricsim_core::orchestrator::{audit_log, read_decision_log};
use ricsim_core::par::Parallelism;
use ricsim_core::pipeline::{make_windows, savgol_coefficients, smooth_values, EdgeMode, SgFilterConfig};
use ricsim_core::rlapps::{act, td_targets, DqnAgent, DqnConfig, Mlp, Transition};
use ricsim_core::stages::{self, Layout};
use ricsim_core::traffic::{base_demand_mbps, calibrate_profile_with, synthetic_diurnal_series, ProfileShape, TrafficClassSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1_decomposition() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(8..=512);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-500.0..500.0)).collect();
        let k = 2 * rng.random_range(0..=((n - 1) / 2).min(12)) + 1;
        let d = decompose(&x, k).expect("decompose");
        for i in 0..n {
            worst = worst.max((d.seasonal[i] + d.trend[i] - x[i]).abs());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    outcome(worst <= 1e-12 && fast, format!("max |seasonal + trend - x| = {worst:.2e}, {time}"))
}

fn brute_autocorrelation(q: &[f64], k: &[f64]) -> Vec<f64> {
    let l = q.len();
    (0..l).map(|tau| (0..l).map(|t| q[t] * k[(t + l - tau) % l]).sum::<f64>() / l as f64).collect()
}

fn c2_autocorrelation() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let l = rng.random_range(2..=1024);
        let q: Vec<f64> = (0..l).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k: Vec<f64> = (0..l).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = autocorrelation(&q, &k);
        for (a, b) in fast.iter().zip(brute_autocorrelation(&q, &k)) {
            worst = worst.max((a - b).abs());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    outcome(worst <= 1e-8 && fast, format!("max |fft - brute| = {worst:.2e}, {time}"))
}

fn c3_savgol() -> Outcome {
    let cfg = SgFilterConfig { window: 11, poly_order: 3, edge: EdgeMode::Interp };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let deg = rng.random_range(0..=3);
        let c: Vec<f64> = (0..=deg).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..64)
            .map(|i| {
                let t = (i as f64 - 32.0) / 8.0;
                c.iter().rev().fold(0.0, |acc, a| acc * t + a)
            })
            .collect();
        let y = smooth_values(&x, &cfg).expect("smooth");
        for (a, b) in x.iter().zip(&y) {
            worst = worst.max((a - b).abs());
        }
    }
    let n = 200_000;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let sm = smooth_values(&noise, &SgFilterConfig { edge: EdgeMode::Mirror, ..cfg }).expect("smooth");
    let inner = &sm[5..n - 5];
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    let var = inner.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inner.len() as f64;
    let predicted: f64 = savgol_coefficients(&cfg).iter().map(|c| c * c).sum();
    let rel = (var - predicted).abs() / predicted;
    outcome(
        worst <= 1e-9 && rel <= 0.05,
        format!("polynomial error {worst:.2e}; noise variance ratio {var:.4} vs sum c^2 {predicted:.4} ({:.2}% off)", 100.0 * rel),
    )
}

fn c4_gradient() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig { input_len: 16, label_len: 8, d_model: 8, heads: 2, d_ff: 16, ma_kernel: 5, ..Default::default() };
    let mut model = ForecastModel::new(cfg, 4).expect("model");
    let x: Vec<f64> = (0..16).map(|t| (t as f64 * 0.7).sin() + 0.1 * t as f64).collect();
    let y = [0.8];
    let (_, grads) = model.loss_and_grad(&x, &y).expect("grad");
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in 0..model.params.tensors.len() {
        for i in 0..model.params.tensors[p].data.len() {
            let orig = model.params.tensors[p].data[i];
            model.params.tensors[p].data[i] = orig + eps;
            let up = model.loss_and_grad(&x, &y).expect("grad").0;
            model.params.tensors[p].data[i] = orig - eps;
            let down = model.loss_and_grad(&x, &y).expect("grad").0;
            model.params.tensors[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[p].data[i];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
            count += 1;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(120));
    outcome(worst <= 1e-4 && fast, format!("{count} parameters, worst relative error {worst:.2e}, {time}"))
}

fn std_of(e: &[f64]) -> f64 {
    let m = e.iter().sum::<f64>() / e.len() as f64;
    (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / e.len() as f64).sqrt()
}

fn rms(e: &[f64]) -> f64 {
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

fn c5_forecast_skill() -> Outcome {
    let t = Instant::now();
    let table = TrafficClassSpec::reference_table();
    let base = base_demand_mbps(60, &table);
    let day = 1440;
    let shape = ProfileShape { time_warp: 86_400.0 / day as f64, ..Default::default() };
    let profile = calibrate_profile_with(298.0, 116.0, base, &shape).expect("profile");
    let raw = synthetic_diurnal_series(&profile, base, 2 * day, 1.0, 0.05, 5);
    let series = smooth_values(&raw, &SgFilterConfig::default()).expect("smooth");
    let data = make_windows(&series, 96, 1, 0.5).expect("windows");
    let mut model = ForecastModel::new(ModelConfig::default(), 5).expect("model");
    let tc = TrainConfig { learning_rate: 1e-4, epochs: 10, ..Default::default() };
    if let Err(e) = train(&mut model, &data, &tc) {
        return outcome(false, format!("training failed: {e}"));
    }
    let pred = predict_pairs(&model, &data, data.test_indices(), Parallelism::Parallel).expect("predict");
    let frames: Vec<usize> = data.test_indices().map(|p| data.target_frame(p)).collect();
    let e_model: Vec<f64> = pred.iter().map(|(p, y)| y - p).collect();
    let e_naive: Vec<f64> = frames.iter().map(|&f| series[f] - series[f - day]).collect();
    let e_ma: Vec<f64> =
        frames.iter().map(|&f| series[f] - baseline_moving_average(&series[..f], 12).expect("ma")).collect();
    let ratio = rms(&e_model) / rms(&e_naive);
    let (sm, sn, sa) = (std_of(&e_model), std_of(&e_naive), std_of(&e_ma));
    let (fast, time) = within(t, Duration::from_secs(15 * 60));
    outcome(
        ratio <= 0.7 && sm < sn && sm < sa && fast,
        format!(
            "RMSE {:.3} vs seasonal naive {:.3} (ratio {ratio:.3}); residual std {sm:.3} vs {sn:.3} and MA12 {sa:.3}; {time}",
            rms(&e_model),
            rms(&e_naive)
        ),
    )
}

fn constant_net(outputs: &[f64]) -> Mlp {
    let h = 4;
    let mut last = Mat::zeros(1, outputs.len());
    last.data.copy_from_slice(outputs);
    Mlp::from_params(vec![Mat::zeros(2, h), Mat::zeros(1, h), Mat::zeros(h, outputs.len()), last])
}

fn c6_dqn() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let target = constant_net(&[2.0, 1.0]);
    let tr = Transition { state: vec![0.0, 0.0], action: 0, reward: 0.5, next_state: vec![0.3, -0.2], terminal: false };
    let y = td_targets(&[&tr], &target, 0.9)[0];
    let td_ok = (y - 2.3).abs() <= 1e-12;
    ok &= td_ok;
    notes.push(format!("TD target {y}"));

    let cfg = DqnConfig { alpha: 1e-3, batch_size: 4, hidden_dims: vec![8], ..Default::default() };
    let mut agent = DqnAgent::new(cfg, 2, 3, 6).expect("agent");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..64 {
        let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let t = Transition { state: s.clone(), action: rng.random_range(0..3), reward: rng.random_range(-1.0..1.0), next_state: s, terminal: false };
        agent.observe(t).expect("observe");
    }
    let initial = agent.target.params.clone();
    let mut before_sync_equal = true;
    for u in 1..=1000u64 {
        agent.train_step().expect("train");
        if u < 1000 {
            before_sync_equal &= agent.target.params == initial;
        }
    }
    let synced = agent.target.params == agent.online.params && agent.updates == 1000;
    ok &= before_sync_equal && synced;
    notes.push(format!("target frozen for 999 updates: {before_sync_equal}, exact copy at 1000: {synced}"));

    let cfg = DqnConfig { alpha: 1e-2, batch_size: 1, hidden_dims: vec![16], ..Default::default() };
    let mut agent = DqnAgent::new(cfg, 2, 2, 7).expect("agent");
    let s = vec![0.4, -0.7];
    agent.observe(Transition { state: s.clone(), action: 1, reward: 1.0, next_state: s.clone(), terminal: true }).expect("observe");
    for _ in 0..2000 {
        agent.train_step().expect("train");
    }
    let q = agent.online.q_values(&s)[1];
    let conv = (q - 1.0).abs() <= 1e-2;
    ok &= conv;
    notes.push(format!("single-transition Q {q:.5}"));

    let cfg = DqnConfig::default();
    let net = constant_net(&[5.0, 0.0, 0.0, 0.0]);
    let mut counts = [0usize; 4];
    let trials = 100_000;
    for i in 0..trials {
        counts[act(&net, &[0.0, 0.0], (i % 3000) as u64, &cfg, None, &mut rng)] += 1;
    }
    let expect = trials as f64 / 4.0;
    let worst = counts.iter().map(|&c| (c as f64 - expect).abs() / expect).fold(0.0, f64::max);
    let uni = worst <= 0.02;
    ok &= uni;
    notes.push(format!("exploration counts {counts:?} (worst {:.2}% off)", 100.0 * worst));
    outcome(ok, notes.join("; "))
}

fn ci_config(seed: u64) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ci.toml");
    let mut cfg = RunConfig::load(&path).expect("configs/ci.toml");
    cfg.seed = seed;
    cfg
}

struct SeedRun {
    seed: u64,
    dir: PathBuf,
    report: ComparisonReport,
    per_mode: Vec<Duration>,
}

fn train_and_compare(seed: u64, root: &Path) -> Result<SeedRun, String> {
    let cfg = ci_config(seed);
    let dir = root.join(format!("seed{seed}"));
    let layout = Layout::new(&dir);
    let t = Instant::now();
    stages::simulate(&cfg, &layout).map_err(|e| e.to_string())?;
    stages::train_forecaster(&cfg, &layout).map_err(|e| e.to_string())?;
    stages::train_apps(&cfg, &layout).map_err(|e| e.to_string())?;
    let shared = t.elapsed();
    let mut per_mode = Vec::new();
    for mode in Mode::ALL {
        let t = Instant::now();
        stages::evaluate(&RunConfig { mode, ..cfg.clone() }, &layout).map_err(|e| e.to_string())?;
        per_mode.push(shared + t.elapsed());
    }
    let (_, report) = stages::compare(&cfg, &layout).map_err(|e| e.to_string())?;
    Ok(SeedRun { seed, dir, report, per_mode })
}

fn c7_orchestrator(run: &SeedRun) -> Outcome {
    let log = match read_decision_log(&Layout::new(&run.dir).eval(Mode::Proposed).join("decisions.csv")) {
        Ok(l) => l,
        Err(e) => return outcome(false, e.to_string()),
    };
    let exclusive = log.iter().filter(|e| e.s + e.v > 1).count();
    let violations = audit_log(&log, ci_config(run.seed).orchestrator.lead_frames);
    let steer = log.iter().filter(|e| e.s == 1).count();
    let sleep = log.iter().filter(|e| e.v == 1).count();
    outcome(
        exclusive == 0 && violations == 0 && !log.is_empty(),
        format!("{} frames, S+V>1 in {exclusive}, lead audit violations {violations}; steering {steer} frames, sleeping {sleep}", log.len()),
    )
}

fn c8_end_to_end(runs: &[SeedRun]) -> Outcome {
    let mut ok = runs.len() == 3;
    let mut parts = Vec::new();
    for r in runs {
        let h = &r.report.headline;
        let ee = h.ee_vs_always_steering.unwrap_or(f64::NAN);
        let thr = h.throughput_vs_always_sleeping.unwrap_or(f64::NAN);
        let slow = r.per_mode.iter().any(|d| *d > Duration::from_secs(30 * 60));
        ok &= ee >= 0.10 && thr >= 0.03 && !slow;
        let worst = r.per_mode.iter().max().copied().unwrap_or_default();
        parts.push(format!(
            "seed {}: EE vs always-steering {:+.2}%, throughput vs always-sleeping {:+.2}% (slowest mode {:.0}s)",
            r.seed,
            100.0 * ee,
            100.0 * thr,
            worst.as_secs_f64()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn row(rows: &[SweepRow], v: f64) -> Option<&SweepRow> {
    rows.iter().find(|r| r.volume_mbps == v)
}

fn c9_sweep(run: &SeedRun) -> Outcome {
    let cfg = ci_config(run.seed);
    let rows = match stages::sweep(&cfg, &Layout::new(&run.dir), None) {
        Ok((_, rows)) => rows,
        Err(e) => return outcome(false, e.to_string()),
    };
    let table: Vec<String> =
        rows.iter().map(|r| format!("{:.0}: EE {:.4} drop {:.4}", r.volume_mbps, r.ee_mbits_per_joule, r.drop_rate)).collect();
    let (Some(low), Some(mid), Some(high)) = (row(&rows, 120.0), row(&rows, 140.0), row(&rows, 190.0)) else {
        return outcome(false, "sweep lacks the 120/140/190 Mbps rows".into());
    };
    let knee = low.ee_mbits_per_joule > mid.ee_mbits_per_joule;
    let cap = 2.0 * high.drop_rate;
    let calm = low.drop_rate < cap && mid.drop_rate < cap;
    outcome(knee && calm, format!("EE falls 120->140: {knee}; drop below 2x the 190 value ({cap:.4}): {calm}; [{}]", table.join(", ")))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("read_dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism(root: &Path) -> Outcome {
    let mut cfg = ci_config(10);
    cfg.duration_s = Some(240.0);
    cfg.forecaster.train.epochs = 1;
    cfg.forecaster.train.max_pairs_per_epoch = 256;
    cfg.rl.sleeping_episodes = 1;
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| root.join(format!("det-{n}"))).collect();
    for (i, d) in dirs.iter().enumerate() {
        let c = RunConfig { parallelism: if i == 2 { Parallelism::Sequential } else { Parallelism::Parallel }, ..cfg.clone() };
        if let Err(e) = stages::run(&c, &Layout::new(d), &Mode::ALL) {
            return outcome(false, e.to_string());
        }
    }
    let reference = csv_files(&dirs[0]);
    let mut differing = Vec::new();
    for other in &dirs[1..] {
        let files = csv_files(other);
        if files.len() != reference.len() {
            differing.push(format!("{} has {} CSV files", other.display(), files.len()));
            continue;
        }
        for (a, b) in reference.iter().zip(&files) {
            if fs::read(a).ok() != fs::read(b).ok() {
                differing.push(a.strip_prefix(&dirs[0]).unwrap_or(a).display().to_string());
            }
        }
    }
    outcome(
        differing.is_empty() && !reference.is_empty(),
        format!("{} CSV files compared across two parallel runs and one sequential run; differing: {differing:?}", reference.len()),
    )
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("decomposition identity", c1_decomposition()));
    results.push(("autocorrelation oracle", c2_autocorrelation()));
    results.push(("Savitzky-Golay", c3_savgol()));
    results.push(("gradient check", c4_gradient()));
    results.push(("forecast skill", c5_forecast_skill()));
    results.push(("DQN correctness", c6_dqn()));
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3 {
        match train_and_compare(seed, root.path()) {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let first = runs.iter().find(|r| r.seed == 0);
    results.push(("orchestrator invariant", first.map_or_else(|| outcome(false, failures.join("; ")), c7_orchestrator)));
    let mut e2e = c8_end_to_end(&runs);
    if !failures.is_empty() {
        e2e = outcome(false, format!("{}; {}", e2e.detail, failures.join("; ")));
    }
    results.push(("directional end-to-end", e2e));
    results.push(("threshold-sweep pattern", first.map_or_else(|| outcome(false, failures.join("; ")), c9_sweep)));
    results.push(("determinism", c10_determinism(root.path())));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} of {} acceptance criteria failed", results.len());
        std::process::exit(1);
    }
}
