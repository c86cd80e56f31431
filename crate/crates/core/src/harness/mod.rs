//! Scenario-driven runs that produce traces, drift reports and plots, plus
//! the deformation benchmark.

mod bench;
mod report;
mod run;
mod scenario;

use thiserror::Error;

use crate::lung_model::LungError;
use crate::session::SessionError;
use crate::timesync::SyncError;

pub use bench::{bench_deform, BenchReport, BenchSpec, FRAME_BUDGET_MS};
pub use report::{format_seconds, svg_plot, trace_csv, write_report};
pub use run::{build_session_inputs, run_scenario, simulate, RunOptions, RunOutcome, SessionInputs, TraceRow};
pub use scenario::{KernelSpec, MeshSpec, Mode, NetworkSpec, ParamChange, Scenario, MAX_PARTICIPANTS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Session(SessionError),
    #[error(transparent)]
    Lung(#[from] LungError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SessionError> for HarnessError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Io(io) => HarnessError::Transport(io.to_string()),
            other => HarnessError::Session(other),
        }
    }
}

impl HarnessError {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 2,
            HarnessError::Transport(_) => 3,
            _ => 1,
        }
    }
}
