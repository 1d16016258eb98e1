use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_servobench");
const STUB: &str = env!("CARGO_BIN_EXE_servobench-stub-estimator");

fn servobench(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("SERVOBENCH_ESTIMATOR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn ordered_pairs(frames: usize, window: usize) -> usize {
    (0..frames)
        .flat_map(|i| (0..frames).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && i.abs_diff(j) <= window)
        .count()
}

#[test]
fn dataset_counts_match_enumeration() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"scene":{"n_points":300},"dataset":{"window":10,"trajectory":{"synthetic":{"frames":50,"seed":3}}}}"#,
    );
    let o = servobench(&["dataset", "--config", &cfg, "--out", "ds"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expected = ordered_pairs(50, 10);
    assert!(stdout(&o).contains(&format!("pairs: {expected}")), "{}", stdout(&o));
    let out = dir.path().join("ds");
    let lines = fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), expected);
    assert_eq!(fs::read_dir(out.join("images")).unwrap().count(), 50);
    assert_eq!(fs::read_dir(out.join("poses")).unwrap().count(), 50);
    assert_eq!(json(&out.join("resolved_config.json"))["dataset"]["window"], 10);
}

#[test]
fn dataset_from_pose_directory() {
    let dir = TempDir::new().unwrap();
    let first = write(&dir, "a.json", r#"{"dataset":{"trajectory":{"synthetic":{"frames":4}}}}"#);
    assert_eq!(code(&servobench(&["dataset", "--config", &first, "--out", "a"], dir.path())), 0);
    let poses = dir.path().join("a/poses");
    let second = write(
        &dir,
        "b.json",
        &format!(r#"{{"dataset":{{"window":1,"trajectory":{{"dir":{:?}}}}}}}"#, poses.to_str().unwrap()),
    );
    let o = servobench(&["dataset", "--config", &second, "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("pairs: 6"));
    assert!(!dir.path().join("b/poses").exists());
}

#[test]
fn dataset_usage_errors() {
    let dir = TempDir::new().unwrap();
    let o = servobench(&["dataset", "--config", "nope.json", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config not found"));
    let cfg = write(&dir, "w0.json", r#"{"dataset":{"window":0}}"#);
    let o = servobench(&["dataset", "--config", &cfg, "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("window"));
    let cfg = write(&dir, "typo.json", r#"{"dataset":{"windw":3}}"#);
    assert_eq!(code(&servobench(&["dataset", "--config", &cfg, "--out", "x"], dir.path())), 2);
    let cfg = write(&dir, "gap.json", r#"{"dataset":{"trajectory":{"dir":"/nonexistent/poses"}}}"#);
    assert_eq!(code(&servobench(&["dataset", "--config", &cfg, "--out", "x"], dir.path())), 2);
}

#[test]
fn run_noise_free_preset_converges() {
    let dir = TempDir::new().unwrap();
    let o = servobench(&["run", "--preset", "paper-sec7-noisefree", "--out", "r"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(&dir.path().join("r/summary.json"));
    assert_eq!(summary["converged"], true);
    assert!(summary["final_t_err_mm"].as_f64().unwrap() <= 1.0);
    let csv = fs::read_to_string(dir.path().join("r/run.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(rows as u64, summary["iters_used"].as_u64().unwrap());
    assert!(csv.starts_with("iter,tx,ty,tz,qw,qx,qy,qz,"));
    let resolved = json(&dir.path().join("r/resolved_config.json"));
    assert_eq!(resolved["servo"]["preset"], "paper-sec7-noisefree");
}

#[test]
fn run_at_goal_converges_at_iteration_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", "{}");
    let o = servobench(&["run", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("r/run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn run_not_converged_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", r#"{"servo":{"preset":"paper-sec7-noisefree","max_iters":5}}"#);
    let o = servobench(&["run", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(code(&o), 1);
    assert_eq!(json(&dir.path().join("r/summary.json"))["iters_used"], 5);
}

#[test]
fn run_is_reproducible_and_seeded() {
    let dir = TempDir::new().unwrap();
    for (out, seed) in [("a", "4"), ("b", "4"), ("c", "5")] {
        let o = servobench(&["run", "--preset", "paper-sec7-noisy", "--seed", seed, "--out", out], dir.path());
        assert_eq!(code(&o), 0);
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("run.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn run_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&servobench(&["run", "--out", "r"], dir.path())), 2);
    assert_eq!(code(&servobench(&["run", "--preset", "bogus", "--out", "r"], dir.path())), 2);
    // random presets need an explicit offset for a single run
    assert_eq!(code(&servobench(&["run", "--preset", "random-noisy", "--out", "r"], dir.path())), 2);
    let cfg = write(&dir, "c.json", r#"{"servo":{"lambda":20}}"#);
    let o = servobench(&["run", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda * dt"));
}

fn external_config(dir: &TempDir, command: &[&str], max_iters: usize) -> String {
    let cfg = serde_json::json!({
        "servo": {
            "preset": "paper-sec7-noisefree",
            "max_iters": max_iters,
            "estimator": {"kind": "external", "command": command, "timeout_s": 1.0}
        },
        "scene": {"n_points": 200}
    });
    write(dir, "ext.json", &cfg.to_string())
}

#[test]
fn run_with_external_stub() {
    let dir = TempDir::new().unwrap();
    let cfg = external_config(&dir, &[STUB], 4);
    let o = servobench(&["run", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    // identity estimates command zero velocity, so the camera never moves
    let summary = json(&dir.path().join("r/summary.json"));
    assert_eq!(summary["iters_used"], 4);
    assert_eq!(summary["initial_t_err_mm"], summary["final_t_err_mm"]);
}

#[test]
fn estimator_failures_exit_three() {
    let dir = TempDir::new().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (&[STUB, "--mode", "silent"], "did not answer"),
        (&[STUB, "--mode", "malformed", "--after", "2"], "iteration 2"),
        (&[STUB, "--mode", "die"], "dead"),
        (&[STUB, "--mode", "error"], "stub refuses"),
        (&[STUB, "--mode", "no-handshake"], "failed to start"),
        (&["/nonexistent/estimator"], "failed to start"),
    ];
    for (argv, needle) in cases {
        let cfg = external_config(&dir, argv, 10);
        let o = servobench(&["run", "--config", &cfg, "--out", "r"], dir.path());
        assert_eq!(code(&o), 3, "{argv:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{argv:?}: {}", stderr(&o));
    }
}

#[test]
fn env_var_overrides_external_command() {
    let dir = TempDir::new().unwrap();
    let cfg = external_config(&dir, &["/nonexistent/estimator"], 3);
    let o = Command::new(BIN)
        .args(["run", "--config", &cfg, "--out", "r"])
        .current_dir(dir.path())
        .env("SERVOBENCH_ESTIMATOR", format!("'{STUB}' --mode identity"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let resolved = json(&dir.path().join("r/resolved_config.json"));
    assert_eq!(resolved["servo"]["config"]["estimator"]["command"][0], STUB);
}

#[test]
fn bench_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = servobench(
            &["bench", "--preset", "random-noisy", "--trials", "12", "--seed", "7", "--out", out],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "bench_summary.json"), read("b", "bench_summary.json"));
    assert_eq!(read("a", "bench_trials.jsonl"), read("b", "bench_trials.jsonl"));
    let s = json(&dir.path().join("a/bench_summary.json"));
    let keys: Vec<_> = s.as_object().unwrap().keys().cloned().collect();
    assert_eq!(
        keys,
        ["converged", "med_iters", "med_r_err_deg", "med_t_err_mm", "rate", "trials"]
    );
}

#[test]
fn bench_noise_free_rate_is_one() {
    let dir = TempDir::new().unwrap();
    let o = servobench(&["bench", "--preset", "paper-sec7-noisefree", "--trials", "10", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(json(&dir.path().join("b/bench_summary.json"))["rate"], 1.0);
}

#[test]
fn bench_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&servobench(&["bench", "--preset", "nope", "--out", "b"], dir.path())), 2);
    assert_eq!(
        code(&servobench(&["bench", "--preset", "random-noisy", "--trials", "0", "--out", "b"], dir.path())),
        2
    );
}

fn metric(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("{key} missing from {out}"))
        .parse()
        .unwrap()
}

#[test]
fn eval_loss_on_exported_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", r#"{"dataset":{"window":2,"trajectory":{"synthetic":{"frames":6}}}}"#);
    assert_eq!(code(&servobench(&["dataset", "--config", &cfg, "--out", "ds"], dir.path())), 0);
    let manifest = dir.path().join("ds/manifest.jsonl");
    let m = manifest.to_str().unwrap();

    let o = servobench(&["eval-loss", "--manifest", m, "--predictions", m], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(metric(&out, "mean_loss") < 1e-9);
    assert_eq!(metric(&out, "mean_t_err_mm"), 0.0);
    assert!(metric(&out, "mean_r_err_deg") < 1e-9);

    // doubling the predicted quaternion costs beta * |q| = beta per record
    let doubled: String = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            for c in v["q"].as_array_mut().unwrap() {
                *c = (c.as_f64().unwrap() * 2.0).into();
            }
            v.to_string() + "\n"
        })
        .collect();
    let p = write(&dir, "doubled.jsonl", &doubled);
    let o = servobench(&["eval-loss", "--manifest", m, "--predictions", &p, "--beta", "10"], dir.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!((metric(&out, "mean_loss") - 10.0).abs() < 1e-9);
    assert!(metric(&out, "mean_r_err_deg") < 1e-9);
}

#[test]
fn eval_loss_rejects_misaligned_records() {
    let dir = TempDir::new().unwrap();
    let a = r#"{"cur":"a.ppm","des":"b.ppm","x":[0,0,0],"q":[1,0,0,0]}"#;
    let b = r#"{"cur":"b.ppm","des":"a.ppm","x":[0,0,0],"q":[1,0,0,0]}"#;
    let m = write(&dir, "m.jsonl", &format!("{a}\n{b}\n"));
    let short = write(&dir, "short.jsonl", &format!("{a}\n"));
    let swapped = write(&dir, "swapped.jsonl", &format!("{b}\n{a}\n"));
    let o = servobench(&["eval-loss", "--manifest", &m, "--predictions", &short], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mismatch"));
    let o = servobench(&["eval-loss", "--manifest", &m, "--predictions", &swapped], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("misaligned"));
    let o = servobench(&["eval-loss", "--manifest", &m, "--predictions", &m, "--beta", "-1"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn report_lists_per_axis_residuals() {
    let dir = TempDir::new().unwrap();
    let o = servobench(&["report", "--out", "rep", "--trials", "10"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("rep/report.json"));
    let free = &r["runs"][0];
    assert_eq!(free["preset"], "paper-sec7-noisefree");
    let t0: Vec<f64> = free["initial"]["t_mm"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (got, want) in t0.iter().zip([91.4, 92.3, 36.7]) {
        assert!((got - want).abs() < 1e-9, "{t0:?}");
    }
    let r0: Vec<f64> = free["initial"]["r_deg"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (got, want) in r0.iter().zip([8.0, 10.0, -5.0]) {
        assert!((got - want).abs() < 1e-9, "{r0:?}");
    }
    assert!(free["residual_t_pct"].as_f64().unwrap() < 1.0);
    assert_eq!(r["noisy_benchmark"]["trials"], 10);
}
