//! Seeded sweeps over team size, compromised fraction and attack kind.
//!
//! Cells are enumerated as `for n { for fraction { for kind } }`. Run `r` of
//! cell `c` uses `mix_seed(base.seed, c, r)` for everything, so results do
//! not depend on how many worker threads execute the sweep.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::binomial_interval;

use super::config::{AttackConfig, ScenarioConfig};
use super::run::{run_scenario, RunOptions, RunSummary};
use super::{mix_seed, SimError};

const STREAM_TARGETS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackChoice {
    None,
    Deception,
    Dos,
    /// Deception on half the compromised robots, DoS on the rest later.
    Sequential,
}

impl AttackChoice {
    pub fn label(self) -> &'static str {
        match self {
            AttackChoice::None => "none",
            AttackChoice::Deception => "deception",
            AttackChoice::Dos => "dos",
            AttackChoice::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => AttackChoice::None,
            "deception" => AttackChoice::Deception,
            "dos" => AttackChoice::Dos,
            "sequential" => AttackChoice::Sequential,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: Vec<usize>,
    /// Compromised fraction of the team, in `(0, 1)`.
    pub fractions: Vec<f64>,
    pub kinds: Vec<AttackChoice>,
    pub start_s: f64,
    /// Start of the DoS half of a sequential attack.
    pub second_start_s: f64,
    pub alpha_bounds: [f64; 2],
    pub delay_prob: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n: vec![8, 12, 16, 20, 24],
            fractions: vec![0.25, 0.5, 0.75],
            kinds: vec![AttackChoice::Deception, AttackChoice::Dos],
            start_s: 3.0,
            second_start_s: 8.0,
            alpha_bounds: [0.2, 0.5],
            delay_prob: 0.95,
        }
    }
}

impl Grid {
    pub fn cells(&self) -> Vec<(usize, f64, AttackChoice)> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &f in &self.fractions {
                for &k in &self.kinds {
                    out.push((n, f, k));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: &str, msg: String| {
            Err(SimError::Invalid {
                field: field.into(),
                msg,
            })
        };
        if self.n.iter().any(|&n| n < 2) {
            return invalid("n", "team sizes must be at least 2".into());
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return invalid("fractions", "fractions must lie in (0, 1)".into());
        }
        if self.n.is_empty() || self.fractions.is_empty() || self.kinds.is_empty() {
            return invalid("grid", "every axis needs at least one value".into());
        }
        Ok(())
    }
}

/// Number of compromised robots for a fraction of `n`, at least one and
/// leaving at least one clean robot.
pub fn compromised_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// The scenario run `run` of cell `cell` executes.
pub fn cell_scenario(base: &ScenarioConfig, grid: &Grid, cell: usize, run: usize) -> ScenarioConfig {
    let (n, fraction, kind) = grid.cells()[cell];
    let seed = mix_seed(base.seed, cell as u64, run as u64);
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.n_robots = n;
    cfg.initial_positions = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TARGETS);
    let m = compromised_count(n, fraction);
    let mut targets: Vec<usize> = sample(&mut rng, n, m).into_vec();
    let deception = |targets: Vec<usize>, start_s| AttackConfig::Deception {
        targets,
        start_s,
        alpha_bounds: grid.alpha_bounds,
        alpha: None,
    };
    let dos = |targets: Vec<usize>, start_s| AttackConfig::Dos {
        targets,
        start_s,
        delay_prob: grid.delay_prob,
    };
    cfg.attacks = match kind {
        AttackChoice::None => Vec::new(),
        AttackChoice::Deception => vec![deception(targets, grid.start_s)],
        AttackChoice::Dos => vec![dos(targets, grid.start_s)],
        AttackChoice::Sequential if targets.len() < 2 => vec![deception(targets, grid.start_s)],
        AttackChoice::Sequential => {
            let second = targets.split_off(targets.len() / 2);
            vec![deception(targets, grid.start_s), dos(second, grid.second_start_s)]
        }
    };
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub cell: usize,
    pub run: usize,
    pub seed: u64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn consensus(&self) -> bool {
        self.summary.as_ref().is_some_and(|s| s.consensus)
    }

    /// All attacks detected and the proximity graph connected at every step.
    pub fn property_applies(&self) -> bool {
        self.summary
            .as_ref()
            .is_some_and(|s| s.all_detected() && s.connected_throughout && s.failure.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub n: usize,
    pub fraction: f64,
    pub kind: AttackChoice,
    pub compromised: usize,
    pub runs: usize,
    pub errors: usize,
    pub successes: usize,
    pub success_ci_low: f64,
    pub success_ci_high: f64,
    pub mean_time_s: Option<f64>,
    pub median_time_s: Option<f64>,
    pub p90_time_s: Option<f64>,
    pub initially_connected: usize,
    pub connected_throughout: usize,
    pub detection_completed: usize,
    pub correctly_classified: usize,
    pub property_applicable: usize,
    pub property_violations: usize,
    /// Runs that lost connectivity and missed consensus.
    pub partial: usize,
    pub stranded: usize,
    pub false_alarm_runs: usize,
    pub max_coupling_radius: Option<f64>,
    pub coupling_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloStats {
    pub cells: Vec<CellStats>,
    pub outcomes: Vec<RunOutcome>,
}

impl MonteCarloStats {
    pub fn property_violations(&self) -> usize {
        self.cells.iter().map(|c| c.property_violations).sum()
    }
}

fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    Some(sorted[idx])
}

fn cell_stats(grid: &Grid, cell: usize, outcomes: &[RunOutcome]) -> CellStats {
    let (n, fraction, kind) = grid.cells()[cell];
    let summaries: Vec<&RunSummary> = outcomes.iter().filter_map(|o| o.summary.as_ref()).collect();
    let count = |f: &dyn Fn(&RunSummary) -> bool| summaries.iter().filter(|s| f(s)).count();
    let successes = outcomes.iter().filter(|o| o.consensus()).count();
    let (lo, hi) = binomial_interval(successes, outcomes.len().max(1), 0.95);
    let mut times: Vec<f64> = summaries.iter().filter_map(|s| s.consensus_time_s()).collect();
    times.sort_by(f64::total_cmp);
    let radii = summaries.iter().flat_map(|s| s.coupling_radii.iter().copied());
    CellStats {
        n,
        fraction,
        kind,
        compromised: if kind == AttackChoice::None {
            0
        } else {
            compromised_count(n, fraction)
        },
        runs: outcomes.len(),
        errors: outcomes.iter().filter(|o| o.error.is_some()).count() + count(&|s| s.failure.is_some()),
        successes,
        success_ci_low: lo,
        success_ci_high: hi,
        mean_time_s: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        median_time_s: percentile(&times, 0.5),
        p90_time_s: percentile(&times, 0.9),
        initially_connected: count(&|s| s.initially_connected),
        connected_throughout: count(&|s| s.connected_throughout),
        detection_completed: count(&|s| s.all_detected()),
        correctly_classified: count(&|s| s.all_classified()),
        property_applicable: outcomes.iter().filter(|o| o.property_applies()).count(),
        property_violations: outcomes
            .iter()
            .filter(|o| o.property_applies() && !o.consensus())
            .count(),
        partial: count(&|s| !s.connected_throughout && !s.consensus),
        stranded: count(&|s| s.stranded),
        false_alarm_runs: count(&|s| !s.false_alarms.is_empty()),
        max_coupling_radius: radii.fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r)))),
        coupling_failures: summaries.iter().map(|s| s.coupling_failures).sum(),
    }
}

/// Runs every cell of `grid` `runs_per_cell` times on `parallelism` threads.
/// A failing run is recorded in its outcome and does not stop the sweep.
pub fn monte_carlo(
    base: &ScenarioConfig,
    grid: &Grid,
    runs_per_cell: usize,
    parallelism: usize,
) -> Result<MonteCarloStats, SimError> {
    if runs_per_cell == 0 {
        return Err(SimError::Invalid {
            field: "runs".into(),
            msg: "need at least one run per cell".into(),
        });
    }
    grid.validate()?;
    base.validate()?;
    let cells = grid.cells().len();
    let jobs: Vec<(usize, usize)> = (0..cells)
        .flat_map(|c| (0..runs_per_cell).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::Model(e.to_string()))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, run)| {
                let cfg = cell_scenario(base, grid, cell, run);
                let result = run_scenario(&cfg, RunOptions { record: false });
                let (summary, error) = match result {
                    Ok(log) => (Some(log.summary), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                RunOutcome {
                    cell,
                    run,
                    seed: cfg.seed,
                    summary,
                    error,
                }
            })
            .collect()
    });
    let stats = (0..cells)
        .map(|c| cell_stats(grid, c, &outcomes[c * runs_per_cell..(c + 1) * runs_per_cell]))
        .collect();
    Ok(MonteCarloStats {
        cells: stats,
        outcomes,
    })
}

pub const SUMMARY_COLUMNS: [&str; 24] = [
    "n",
    "fraction",
    "kind",
    "compromised",
    "runs",
    "errors",
    "successes",
    "success_ci_low",
    "success_ci_high",
    "mean_time_s",
    "median_time_s",
    "p90_time_s",
    "initially_connected",
    "connected_throughout",
    "detection_completed",
    "correctly_classified",
    "property_applicable",
    "property_violations",
    "partial",
    "stranded",
    "false_alarm_runs",
    "max_coupling_radius",
    "coupling_failures",
    "success_rate",
];

/// One row per cell; missing values are empty fields.
pub fn write_summary(stats: &MonteCarloStats, path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let fail = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => SimError::io(path, io),
        other => SimError::Csv {
            line: 0,
            msg: format!("{other:?}"),
        },
    };
    let f = |v: f64| format!("{v:.8e}");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.8e}"));
    w.write_record(SUMMARY_COLUMNS).map_err(fail)?;
    for c in &stats.cells {
        w.write_record([
            c.n.to_string(),
            f(c.fraction),
            c.kind.label().to_string(),
            c.compromised.to_string(),
            c.runs.to_string(),
            c.errors.to_string(),
            c.successes.to_string(),
            f(c.success_ci_low),
            f(c.success_ci_high),
            opt(c.mean_time_s),
            opt(c.median_time_s),
            opt(c.p90_time_s),
            c.initially_connected.to_string(),
            c.connected_throughout.to_string(),
            c.detection_completed.to_string(),
            c.correctly_classified.to_string(),
            c.property_applicable.to_string(),
            c.property_violations.to_string(),
            c.partial.to_string(),
            c.stranded.to_string(),
            c.false_alarm_runs.to_string(),
            opt(c.max_coupling_radius),
            c.coupling_failures.to_string(),
            f(c.successes as f64 / c.runs.max(1) as f64),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))?;
    Ok(())
}
