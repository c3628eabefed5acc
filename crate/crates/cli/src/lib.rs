//! Configuration loading, experiment runs and sweeps for `safeid`.

use std::path::PathBuf;

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{load_config, RunConfig};
pub use metrics::RunMetrics;
pub use runner::{run, simulate, sweep};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error{}: {message}", path.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        message: String,
    },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Run(#[from] safeid::Error),
}
