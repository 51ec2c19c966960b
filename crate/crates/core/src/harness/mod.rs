//! Experiment orchestration behind the `dagvi` command line: suites, run
//! directories, evaluation and aggregation.

mod config;
mod run;
mod suite;

use std::path::Path;

pub use config::{load_flat_config, parse_flat_config, to_flat_config};
pub use run::{
    aggregate, artifact_version, dataset_fingerprint, eval_run, materialize, reproduce, run_member,
    train_run, write_aggregate_csv, AggregateRow, EvalOptions, RunManifest, SuiteOutcome,
};
pub use suite::{
    build_suite, suite_train_config, DataSource, ExperimentSuite, SuiteId, SuiteOptions, SuiteRun,
    D100_BUDGET_SECS, DEFAULT_SEEDS,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sem(#[from] crate::sem::SemError),
    #[error(transparent)]
    Vi(#[from] crate::vi::ViError),
    #[error(transparent)]
    Sampler(#[from] crate::dag_sampler::SamplerError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Usage problems (bad flags or config values) as opposed to failures
    /// while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::UnknownSuite(_)
                | HarnessError::Config(_)
                | HarnessError::Vi(crate::vi::ViError::Config(_))
        ) || matches!(
            self,
            HarnessError::Sem(crate::sem::SemError::InvalidParameter(_))
        )
    }
}
