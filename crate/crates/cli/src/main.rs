//! `servobench`: dataset export, servo runs, benchmarks and loss evaluation.
//!
//! Exit codes: 0 success or converged, 1 ran but did not converge,
//! 2 usage or configuration error, 3 estimator failure.

mod config;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use servobench_core::dataset::{
    export_dataset, load_trajectory, read_manifest, synthetic_trajectory, write_trajectory, ManifestRecord,
};
use servobench_core::loss::{pose_loss, rotation_error_deg, translation_error, LossConfig, DEFAULT_BETA};
use servobench_core::pose::{relative, PoseVector};
use servobench_core::servo::{self, default_desired_pose, ServoConfig, ServoError, ServoRun};

use config::{FileConfig, ResolvedConfig, TrajectorySource, ESTIMATOR_ENV};

pub const EXIT_NOT_CONVERGED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ESTIMATOR: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(e: io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ServoError> for CliError {
    fn from(e: ServoError) -> Self {
        let code = if e.is_estimator_failure() { EXIT_ESTIMATOR } else { EXIT_USAGE };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "servobench", version, about = "Visual servoing simulation and benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a trajectory and write the pair manifest.
    Dataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one closed-loop servo simulation.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Preset to start from; overrides servo.preset in the config.
        #[arg(long)]
        preset: Option<String>,
        /// Noise seed for the oracle estimator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run seeded trials of a preset and summarize them.
    Bench {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a manifest with the pose loss.
    EvalLoss {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
    },
    /// Reproduce the house-scene experiment and report per-axis residuals.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dataset { config, out } => cmd_dataset(&config, &out),
        Command::Run {
            config,
            out,
            preset,
            seed,
        } => cmd_run(config.as_deref(), &out, preset, seed),
        Command::Bench {
            preset,
            trials,
            seed,
            out,
        } => cmd_bench(&preset, trials, seed, &out),
        Command::EvalLoss {
            manifest,
            predictions,
            beta,
        } => cmd_eval_loss(&manifest, &predictions, beta),
        Command::Report { out, seed, trials } => cmd_report(&out, seed, trials),
        Command::Presets => {
            for name in servo::PRESET_NAMES {
                let p = servo::preset(name).expect("listed preset exists");
                println!("{name}\t{}", p.description);
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::usage(format!("cannot create {}: {e}", out.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(CliError::io)
}

fn cmd_dataset(config_path: &Path, out: &Path) -> Result<u8, CliError> {
    let cfg = config::load(config_path)?;
    cfg.validate_render()?;
    if cfg.dataset.window == 0 {
        return Err(CliError::usage("dataset.window must be at least 1"));
    }
    create_out(out)?;
    config::echo(
        out,
        &ResolvedConfig {
            command: "dataset".into(),
            camera: cfg.camera(),
            splat_radius: cfg.render().splat_radius,
            scene: cfg.render().scene,
            dataset: Some(cfg.dataset.clone()),
            servo: None,
        },
    )?;
    let traj = match &cfg.dataset.trajectory {
        TrajectorySource::Synthetic(spec) => {
            let traj = synthetic_trajectory(spec, &default_desired_pose()).map_err(|e| CliError::usage(e.to_string()))?;
            write_trajectory(&traj, &out.join("poses")).map_err(|e| CliError::usage(e.to_string()))?;
            traj
        }
        TrajectorySource::Dir(dir) => load_trajectory(dir).map_err(|e| CliError::usage(e.to_string()))?,
    };
    let render = cfg.render();
    let scene = render.scene.generate().map_err(|e| CliError::usage(e.to_string()))?;
    let manifest = export_dataset(
        &traj,
        &scene,
        &render.intrinsics,
        render.splat_radius,
        cfg.dataset.window,
        out,
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    println!("frames: {}", traj.len());
    println!("pairs: {}", manifest.records.len());
    println!("manifest: {}", manifest.path.display());
    Ok(0)
}

#[derive(Serialize)]
struct RunSummary {
    converged: bool,
    iters_used: usize,
    initial_t_err_mm: f64,
    initial_r_err_deg: f64,
    final_t_err_mm: f64,
    final_r_err_deg: f64,
}

impl RunSummary {
    fn of(run: &ServoRun) -> Self {
        let first = run.records[0];
        let (final_t_err_mm, final_r_err_deg) = run.final_errors();
        Self {
            converged: run.converged,
            iters_used: run.iters_used,
            initial_t_err_mm: first.t_err_mm,
            initial_r_err_deg: first.r_err_deg,
            final_t_err_mm,
            final_r_err_deg,
        }
    }
}

fn cmd_run(config_path: Option<&Path>, out: &Path, preset: Option<String>, seed: Option<u64>) -> Result<u8, CliError> {
    let mut cfg = match config_path {
        Some(p) => config::load(p)?,
        None if preset.is_some() => FileConfig::default(),
        None => return Err(CliError::usage("run needs --config or --preset")),
    };
    if preset.is_some() {
        cfg.servo.preset = preset;
    }
    cfg.validate_render()?;
    let env = std::env::var(ESTIMATOR_ENV).ok();
    let resolved = cfg.resolve_servo(seed, env.as_deref())?;
    create_out(out)?;
    config::echo(
        out,
        &ResolvedConfig {
            command: "run".into(),
            camera: cfg.camera(),
            splat_radius: cfg.render().splat_radius,
            scene: cfg.render().scene,
            dataset: None,
            servo: Some(resolved.clone()),
        },
    )?;
    let run = servo::run(&resolved.config)?;
    run.write_csv(&out.join("run.csv")).map_err(CliError::io)?;
    let summary = RunSummary::of(&run);
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} after {} iterations: t_err {:.6} mm, r_err {:.6} deg",
        if run.converged { "converged" } else { "not converged" },
        summary.iters_used,
        summary.final_t_err_mm,
        summary.final_r_err_deg
    );
    Ok(if run.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_bench(name: &str, trials: usize, seed: u64, out: &Path) -> Result<u8, CliError> {
    let preset = servo::preset(name).ok_or_else(|| config::unknown_preset(name))?;
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    create_out(out)?;
    let bench = servo::benchmark(&preset, trials, seed)?;
    write_json(&out.join("bench_summary.json"), &bench.summary)?;
    servobench_core::dataset::write_jsonl(&out.join("bench_trials.jsonl"), &bench.outcomes).map_err(CliError::io)?;
    let s = &bench.summary;
    println!(
        "{name}: {}/{} converged (rate {:.3}), median t_err {:.6} mm, median r_err {:.6} deg, median iters {}",
        s.converged, s.trials, s.rate, s.med_t_err_mm, s.med_r_err_deg, s.med_iters
    );
    Ok(0)
}

fn read_records(path: &Path, what: &str) -> Result<Vec<ManifestRecord>, CliError> {
    read_manifest(path).map_err(|e| CliError::usage(format!("{what}: {e}")))
}

fn cmd_eval_loss(manifest: &Path, predictions: &Path, beta: f64) -> Result<u8, CliError> {
    let cfg = LossConfig::new(beta).map_err(CliError::usage)?;
    let gt = read_records(manifest, "manifest")?;
    let pred = read_records(predictions, "predictions")?;
    if gt.len() != pred.len() {
        return Err(CliError::usage(format!(
            "record count mismatch: {} in manifest, {} in predictions",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(CliError::usage("manifest has no records"));
    }
    let (mut loss, mut t_err, mut r_err) = (0.0, 0.0, 0.0);
    for (line, (g, p)) in gt.iter().zip(&pred).enumerate() {
        if (g.cur.as_str(), g.des.as_str()) != (p.cur.as_str(), p.des.as_str()) {
            return Err(CliError::usage(format!(
                "record {} is misaligned: manifest pair ({}, {}), prediction pair ({}, {})",
                line + 1,
                g.cur,
                g.des,
                p.cur,
                p.des
            )));
        }
        let bad = |e: servobench_core::pose::PoseError| CliError::usage(format!("record {}: {e}", line + 1));
        loss += pose_loss(&p.x.into(), &p.q, &g.x.into(), &g.q, &cfg).map_err(bad)?;
        let (gv, pv) = (g.pose_vector().map_err(bad)?, p.pose_vector().map_err(bad)?);
        t_err += translation_error(&pv, &gv);
        r_err += rotation_error_deg(&pv, &gv);
    }
    let n = gt.len() as f64;
    println!("records: {}", gt.len());
    println!("mean_loss: {}", loss / n);
    println!("mean_t_err_mm: {}", t_err / n);
    println!("mean_r_err_deg: {}", r_err / n);
    Ok(0)
}

/// Residual `c_T_c*` split per axis: translation in mm, intrinsic XYZ angles in degrees.
#[derive(Serialize)]
struct AxisResidual {
    t_mm: [f64; 3],
    r_deg: [f64; 3],
}

impl AxisResidual {
    fn between(cfg: &ServoConfig, pose: &servobench_core::pose::PoseSE3) -> Self {
        let rel = PoseVector::from_pose(&relative(pose, &cfg.desired_pose));
        let (a, b, c) = rel.q.to_euler_xyz();
        Self {
            t_mm: (rel.x * 1000.0).into(),
            r_deg: [a, b, c].map(f64::to_degrees),
        }
    }
}

#[derive(Serialize)]
struct ReportRun {
    preset: String,
    noise_seed: u64,
    converged: bool,
    iters_used: usize,
    initial: AxisResidual,
    residual: AxisResidual,
    initial_t_err_mm: f64,
    initial_r_err_deg: f64,
    final_t_err_mm: f64,
    final_r_err_deg: f64,
    /// Final error as a percentage of the initial error.
    residual_t_pct: f64,
    residual_r_pct: f64,
    straightness_deg: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    runs: Vec<ReportRun>,
    noisy_benchmark: servo::BenchmarkSummary,
}

fn report_run(name: &str, seed: u64) -> Result<ReportRun, CliError> {
    let preset = servo::preset(name).ok_or_else(|| config::unknown_preset(name))?;
    let offset = match preset.offset {
        servo::OffsetSampler::Fixed(o) => o.pose(),
        servo::OffsetSampler::Uniform { .. } => unreachable!("report presets use a fixed offset"),
    };
    let cfg = preset.config(&offset, seed);
    let run = servo::run(&cfg)?;
    let first = run.records[0];
    let last = run.records[run.records.len() - 1];
    let (final_t_err_mm, final_r_err_deg) = run.final_errors();
    Ok(ReportRun {
        preset: name.into(),
        noise_seed: seed,
        converged: run.converged,
        iters_used: run.iters_used,
        initial: AxisResidual::between(&cfg, &first.pose),
        residual: AxisResidual::between(&cfg, &last.pose),
        initial_t_err_mm: first.t_err_mm,
        initial_r_err_deg: first.r_err_deg,
        final_t_err_mm,
        final_r_err_deg,
        residual_t_pct: 100.0 * final_t_err_mm / first.t_err_mm,
        residual_r_pct: 100.0 * final_r_err_deg / first.r_err_deg,
        straightness_deg: servo::straightness(&run, &cfg.desired_pose).ok(),
    })
}

fn fmt3(v: [f64; 3]) -> String {
    format!("[{:+.4}, {:+.4}, {:+.4}]", v[0], v[1], v[2])
}

fn cmd_report(out: &Path, seed: u64, trials: usize) -> Result<u8, CliError> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    create_out(out)?;
    let runs = vec![
        report_run("paper-sec7-noisefree", seed)?,
        report_run("paper-sec7-noisy", seed)?,
    ];
    let noisy = servo::preset("paper-sec7-noisy").expect("built-in preset");
    let bench = servo::benchmark(&noisy, trials, seed)?;
    for r in &runs {
        println!("{} (noise seed {})", r.preset, r.noise_seed);
        println!("  initial   t [mm] {}  r xyz [deg] {}", fmt3(r.initial.t_mm), fmt3(r.initial.r_deg));
        println!("  residual  t [mm] {}  r xyz [deg] {}", fmt3(r.residual.t_mm), fmt3(r.residual.r_deg));
        println!(
            "  {} after {} iterations; residual {:.3}% translation, {:.3}% rotation",
            if r.converged { "converged" } else { "not converged" },
            r.iters_used,
            r.residual_t_pct,
            r.residual_r_pct
        );
        if let Some(s) = r.straightness_deg {
            println!("  max deviation from straight line: {s:.3e} deg");
        }
    }
    let s = &bench.summary;
    println!(
        "paper-sec7-noisy over {} trials: rate {:.3}, median t_err {:.4} mm, median r_err {:.4} deg",
        s.trials, s.rate, s.med_t_err_mm, s.med_r_err_deg
    );
    write_json(
        &out.join("report.json"),
        &Report {
            runs,
            noisy_benchmark: bench.summary,
        },
    )?;
    Ok(0)
}
