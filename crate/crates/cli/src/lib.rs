//! Experiment orchestration on top of `smq-core`: parameter sweeps,
//! summary CSVs and SVG figures.

pub mod plan;
pub mod plot;
pub mod preset;
pub mod run;

use thiserror::Error;

pub use plan::{ExperimentPlan, Sources, SweepAxis};
pub use plot::{emit_plots, render, PlotKind};
pub use run::{run_experiment, RunOutcome};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or plan.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] smq_core::Error),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    /// Process exit status: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        use smq_core::Error as E;
        match self {
            CliError::Invalid(_) => 1,
            CliError::Core(E::InvalidConfig(_) | E::InvalidArgument(_) | E::Parse(_)) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<std::path::PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
