//! Scenario configuration, the seeded run loop, trajectory files and the
//! Monte Carlo sweep.

use std::io;
use std::path::Path;

use thiserror::Error;

mod config;
mod montecarlo;
mod run;
mod trajectory;
pub mod verify;

pub use config::{seconds_to_steps, AttackConfig, ScenarioConfig};
pub use montecarlo::{
    cell_scenario, compromised_count, monte_carlo, write_summary, AttackChoice, CellStats, Grid,
    MonteCarloStats, RunOutcome, SUMMARY_COLUMNS,
};
pub use run::{
    place_robots, run_scenario, DetectionRecord, RunOptions, RunSummary, TrajectoryLog, TrajectoryRecord,
};
pub use trajectory::{parse_records, read_csv, render_svg, write_csv, write_records, CSV_COLUMNS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("trajectory CSV line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("initial placement failed after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("{0}")]
    Model(String),
}

impl SimError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        SimError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the error is a problem with the inputs rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::Invalid { .. } | SimError::Parse(_) | SimError::Placement { .. }
        )
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `run` in sweep cell `cell`:
/// `splitmix64(splitmix64(splitmix64(base) ⊕ cell) ⊕ run)`.
pub fn mix_seed(base: u64, cell: u64, run: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ cell) ^ run)
}
