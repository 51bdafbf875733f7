//! `rcsim`: run scenarios, sweeps, detector calibration and model checks.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a
//! verification check failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resilient_consensus::detector::{calibrate_thresholds, CalibrationOptions, DetectorParams};
use resilient_consensus::plant::RobotModel;
use resilient_consensus::simkit::verify::verify_scenario;
use resilient_consensus::simkit::{
    monte_carlo, render_svg, run_scenario, seconds_to_steps, write_csv, write_summary, AttackChoice, Grid,
    RunOptions, ScenarioConfig, SimError,
};

#[derive(Parser)]
#[command(
    name = "rcsim",
    version,
    about = "Attack-resilient multi-robot consensus simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trajectory.
    Run(RunArgs),
    /// Sweep team size, compromised fraction and attack kind. Without
    /// --config the base scenario has collision avoidance off.
    Montecarlo(SweepArgs),
    /// Derive detector thresholds from attack-free runs.
    Calibrate(CalibrateArgs),
    /// Check model, gain and partition invariants.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "RCSIM_OUT", default_value = "rcsim-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Detector `key = value` fragment overriding the scenario's detector.
    #[arg(long)]
    detector: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the SVG plot.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Team sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 12, 16, 20, 24])]
    n: Vec<usize>,
    /// Compromised fractions, as percentages or in (0, 1).
    #[arg(long, value_delimiter = ',', default_values_t = [25.0, 50.0, 75.0])]
    fractions: Vec<f64>,
    /// Attack kinds: none, deception, dos, sequential.
    #[arg(long, value_delimiter = ',', default_values_t = ["deception".to_string(), "dos".to_string()])]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 400)]
    runs: usize,
    /// Allowed per-robot false-alarm probability over the horizon.
    #[arg(long, default_value_t = 0.005)]
    far: f64,
    /// Drift `ν` in residual standard deviations above the mean.
    #[arg(long, default_value_t = 1.0)]
    drift_sigmas: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Input(String),
    Runtime(String),
    Check,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Montecarlo(a) => cmd_montecarlo(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check) => ExitCode::from(3),
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        // An unreadable config is an input problem, not a runtime one.
        Some(path) => ScenarioConfig::load(path).map_err(|e| Failure::Input(e.to_string()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(d) = c.duration {
        cfg.max_duration = d;
    }
    if let Some(path) = &c.detector {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        cfg.detector = DetectorParams::from_fragment(&text)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let log = run_scenario(&cfg, RunOptions::default())?;
    let out = &a.common.out;
    ensure_dir(out)?;
    write_csv(&log, &out.join("trajectory.csv"))?;
    if !a.no_svg {
        write_file(&out.join("trajectory.svg"), &render_svg(&log, cfg.arena))?;
    }
    let json = serde_json::to_string_pretty(&log.summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&out.join("summary.json"), &format!("{json}\n"))?;
    println!("{}", log.summary.to_line());
    for t in &log.transitions {
        println!(
            "transition step={} robot={} from={} to={}",
            t.step, t.robot, t.from, t.to
        );
    }
    match &log.summary.failure {
        Some(f) => Err(Failure::Runtime(format!("run diverged: {f}"))),
        None => Ok(()),
    }
}

fn parse_fraction(v: f64) -> Result<f64, Failure> {
    let f = if v >= 1.0 { v / 100.0 } else { v };
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(Failure::Input(format!("fraction {v} outside (0, 100)")))
    }
}

fn cmd_montecarlo(a: SweepArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.common)?;
    if a.common.config.is_none() {
        // Large teams cannot pack inside the consensus radius at the default
        // spacing; same base as scenarios/sweep_base.json.
        cfg.collision_avoidance = false;
    }
    let kinds = a
        .kinds
        .iter()
        .map(|k| {
            AttackChoice::parse(k.trim()).ok_or_else(|| Failure::Input(format!("unknown attack kind `{k}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fractions = a
        .fractions
        .iter()
        .map(|&f| parse_fraction(f))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = Grid {
        n: a.n,
        fractions,
        kinds,
        ..Grid::default()
    };
    let stats = monte_carlo(&cfg, &grid, a.runs, a.jobs)?;
    let out = &a.common.out;
    ensure_dir(out)?;
    write_summary(&stats, &out.join("summary.csv"))?;
    for c in &stats.cells {
        println!(
            "cell n={} fraction={:.2} kind={} runs={} successes={} rate={:.3} detected={} connected={} \
             property_violations={} partial={} stranded={} errors={}",
            c.n,
            c.fraction,
            c.kind.label(),
            c.runs,
            c.successes,
            c.successes as f64 / c.runs as f64,
            c.detection_completed,
            c.connected_throughout,
            c.property_violations,
            c.partial,
            c.stranded,
            c.errors,
        );
    }
    println!("total property_violations={}", stats.property_violations());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let model = RobotModel::single_integrator(cfg.dt, cfg.process_noise, cfg.measurement_noise)
        .map_err(|e| Failure::Input(e.to_string()))?;
    let opts = CalibrationOptions {
        horizon: seconds_to_steps(cfg.max_duration, cfg.dt) as usize,
        target_far: a.far,
        runs: a.runs,
        drift_sigmas: a.drift_sigmas,
        stale_tol: cfg.detector.stale_tol,
        tau_dos: cfg.detector.tau_dos,
        mu1: cfg.detector.mu1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = calibrate_thresholds(&model, &opts, &mut rng).map_err(|e| Failure::Input(e.to_string()))?;
    let path = if a.common.out.extension().is_some() {
        if let Some(parent) = a.common.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        a.common.out.clone()
    } else {
        ensure_dir(&a.common.out)?;
        a.common.out.join("detector.conf")
    };
    write_file(&path, &report.params.to_fragment())?;
    let p = &report.params;
    println!(
        "tau_dec={} drift={} mu0={:e} residual_mean={} residual_std={} allowed_exceedances={} stale={}/{}",
        p.tau_dec,
        p.drift,
        p.mu0,
        report.residual_mean,
        report.residual_std,
        report.allowed_exceedances,
        report.stale_count,
        report.samples
    );
    println!("wrote={}", path.display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let cfg = match &a.common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            // Parse without validating gains, so broken gains reach the checks.
            serde_json::from_str::<ScenarioConfig>(&text).map_err(|e| Failure::Input(e.to_string()))?
        }
        None => ScenarioConfig::default(),
    };
    let checks = verify_scenario(&cfg);
    let mut failed = false;
    for c in &checks {
        println!(
            "check={} status={} {}",
            c.name,
            if c.passed { "ok" } else { "FAIL" },
            c.evidence
        );
        failed |= !c.passed;
    }
    if failed {
        Err(Failure::Check)
    } else {
        Ok(())
    }
}
