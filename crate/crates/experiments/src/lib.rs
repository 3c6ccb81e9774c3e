//! Experiment harness for PMI-feedback channel estimation.
//!
//! Each driver takes an [`ExperimentConfig`] and returns an
//! [`ExperimentOutput`] whose rows do not depend on the thread count: every
//! trial draws from its own seeded stream and rows are sorted before
//! emission.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crb_experiment;
pub mod dataset;
pub mod fdd;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind, InitKind, Method};
pub use dataset::{ChannelDataset, DatasetError};
pub use output::{ExperimentOutput, ResultRow, SummaryRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Core(#[from] pmi_core::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Runs `f` on a dedicated pool with `threads` workers (rayon's default when
/// `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Dispatches on `config.experiment`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    with_threads(config.threads, || match config.experiment {
        ExperimentKind::Crb => crb_experiment::run_crb_experiment(config),
        ExperimentKind::Fdd => fdd::run_fdd_experiment(config),
        ExperimentKind::AblateTau | ExperimentKind::AblateInit => fdd::run_ablation(config),
        ExperimentKind::VerifyTheory => verify::run_theory_verification(config).map(|r| r.output()),
    })?
}
