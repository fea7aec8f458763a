//! Command-line front end for `coop-rl`: configuration files, seeded
//! training runs, sweeps, theory verification and greedy evaluation.

pub mod config;
pub mod eval;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, RunConfig};
pub use eval::{eval, EvalOptions, EvalReport};
pub use run::{sweep, train, SweepAxis, SweepReport, SweepRow, SweepSpec, TrainReport};
pub use verify::{verify, VerifyOptions, VerifyReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] coop_rl::AgentError),
    #[error(transparent)]
    Net(#[from] coop_rl::net::NetError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
