//! Run orchestration: configuration, checkpoints, metric streams, training,
//! evaluation, pairwise utility analysis and the numerical check suites.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;
pub mod suites;

use std::path::PathBuf;

use crate::gpl::GplError;
use crate::osbg::OsbgError;
use crate::world::WorldError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest};
pub use config::{OpenSpec, RunConfig};
pub use metrics::{MetricRecord, MetricsWriter};
pub use run::{evaluate, run_training};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not fit the configured networks:\n{0}")]
    Incompatible(String),
    #[error(transparent)]
    Gpl(#[from] GplError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Osbg(#[from] OsbgError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
