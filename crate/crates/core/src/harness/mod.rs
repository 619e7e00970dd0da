//! Scenario files, end-to-end runs, comparison tables and report files.

mod compare;
mod report;
mod run;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use compare::{compare_placements, compare_signal_types, PlacementRow, SignalRow, MANTISSA_SWEEP};
pub use report::{emit_comparison, emit_reports, Format};
pub use run::{run_scenario, Aggregate, OccasionRecord, RunReport, TruthRecord};
pub use scenario::{
    parse_scenario, AttackerConfig, ProcessingConfig, Scenario, SceneConfig, SecurityConfig, SignalConfig,
    SniffConfig, TamperConfig,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("occasion {occasion}: {message}")]
    Runtime { occasion: u64, message: String },
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Io { .. } | HarnessError::Runtime { .. } => 2,
        }
    }
}
