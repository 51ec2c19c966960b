//! Named experiment suites.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sem::{DatasetSpec, GraphFamily, MechanismKind};
use crate::vi::{ModelKind, PriorSpec, TrainConfig};

use super::HarnessError;

pub const DEFAULT_SEEDS: usize = 10;
/// Per-dataset wall-clock budget of the d = 100 suites.
pub const D100_BUDGET_SECS: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteId {
    #[serde(rename = "linear-er-d10")]
    LinearErD10,
    #[serde(rename = "linear-sf-d10")]
    LinearSfD10,
    #[serde(rename = "linear-er-d50")]
    LinearErD50,
    #[serde(rename = "linear-sf-d50")]
    LinearSfD50,
    #[serde(rename = "nonlinear-er-d10")]
    NonlinearErD10,
    #[serde(rename = "nonlinear-sf-d10")]
    NonlinearSfD10,
    #[serde(rename = "nonlinear-er-d50")]
    NonlinearErD50,
    #[serde(rename = "nonlinear-sf-d50")]
    NonlinearSfD50,
    #[serde(rename = "linear-d100")]
    LinearD100,
    #[serde(rename = "nonlinear-d100")]
    NonlinearD100,
    #[serde(rename = "sachs")]
    Sachs,
}

impl SuiteId {
    pub const ALL: [SuiteId; 11] = [
        SuiteId::LinearErD10,
        SuiteId::LinearSfD10,
        SuiteId::LinearErD50,
        SuiteId::LinearSfD50,
        SuiteId::NonlinearErD10,
        SuiteId::NonlinearSfD10,
        SuiteId::NonlinearErD50,
        SuiteId::NonlinearSfD50,
        SuiteId::LinearD100,
        SuiteId::NonlinearD100,
        SuiteId::Sachs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteId::LinearErD10 => "linear-er-d10",
            SuiteId::LinearSfD10 => "linear-sf-d10",
            SuiteId::LinearErD50 => "linear-er-d50",
            SuiteId::LinearSfD50 => "linear-sf-d50",
            SuiteId::NonlinearErD10 => "nonlinear-er-d10",
            SuiteId::NonlinearSfD10 => "nonlinear-sf-d10",
            SuiteId::NonlinearErD50 => "nonlinear-er-d50",
            SuiteId::NonlinearSfD50 => "nonlinear-sf-d50",
            SuiteId::LinearD100 => "linear-d100",
            SuiteId::NonlinearD100 => "nonlinear-d100",
            SuiteId::Sachs => "sachs",
        }
    }

    /// `(d, graph, mechanism)` of a synthetic suite; `None` for Sachs.
    fn synthetic(self) -> Option<(usize, GraphFamily, MechanismKind)> {
        use GraphFamily::{Er, Sf};
        use MechanismKind::{Gp, Linear};
        Some(match self {
            SuiteId::LinearErD10 => (10, Er, Linear),
            SuiteId::LinearSfD10 => (10, Sf, Linear),
            SuiteId::LinearErD50 => (50, Er, Linear),
            SuiteId::LinearSfD50 => (50, Sf, Linear),
            SuiteId::NonlinearErD10 => (10, Er, Gp),
            SuiteId::NonlinearSfD10 => (10, Sf, Gp),
            SuiteId::NonlinearErD50 => (50, Er, Gp),
            SuiteId::NonlinearSfD50 => (50, Sf, Gp),
            SuiteId::LinearD100 => (100, Er, Linear),
            SuiteId::NonlinearD100 => (100, Er, Gp),
            SuiteId::Sachs => return None,
        })
    }
}

impl fmt::Display for SuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SuiteId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| HarnessError::UnknownSuite(s.to_string()))
    }
}

/// Where a run's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(DatasetSpec),
    /// Real data; the seed drives the train/validation shuffle.
    Sachs {
        data: PathBuf,
        edges: PathBuf,
        seed: u64,
        val_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRun {
    pub seed: u64,
    pub data: DataSource,
    pub train: TrainConfig,
    pub prior: PriorSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSuite {
    pub id: SuiteId,
    pub runs: Vec<SuiteRun>,
    /// Posterior draws per metric evaluation.
    pub eval_samples: usize,
}

/// Trainer settings shared by every suite. Batch size, patience and the
/// number of graph draws per step are not fixed by the method; these values
/// came out of a small sweep on the d = 10 suites.
pub fn suite_train_config(model: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        t: 0.3,
        batch_size: 64,
        patience: 20,
        train_samples: 4,
        model,
        seed,
        ..TrainConfig::default()
    }
}

/// Options that change how a suite is built.
#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Number of seeds (`0..seeds`); defaults to 10.
    pub seeds: Option<usize>,
    /// Sachs data and consensus-edge files; required for the `sachs` suite.
    pub sachs: Option<(PathBuf, PathBuf)>,
    /// Overrides the d = 100 budget, or sets one on any suite.
    pub time_budget_secs: Option<f64>,
}

pub fn build_suite(id: SuiteId, opts: &SuiteOptions) -> Result<ExperimentSuite, HarnessError> {
    let seeds = opts.seeds.unwrap_or(DEFAULT_SEEDS);
    if seeds == 0 {
        return Err(HarnessError::Config(
            "a suite needs at least one seed".into(),
        ));
    }
    let mut runs = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let (data, model, budget) = match id.synthetic() {
            Some((d, graph, mechanism)) => {
                let model = match mechanism {
                    MechanismKind::Linear => ModelKind::Linear,
                    MechanismKind::Gp => ModelKind::Mlp,
                };
                let budget = (d >= 100).then_some(D100_BUDGET_SECS);
                (
                    DataSource::Synthetic(DatasetSpec::new(d, graph, mechanism, seed)),
                    model,
                    budget,
                )
            }
            None => {
                let (data, edges) = opts.sachs.clone().ok_or_else(|| {
                    HarnessError::Config(
                        "the sachs suite needs --sachs-data and --sachs-edges".into(),
                    )
                })?;
                let source = DataSource::Sachs {
                    data,
                    edges,
                    seed,
                    val_fraction: 0.2,
                };
                (source, ModelKind::Mlp, None)
            }
        };
        let mut train = suite_train_config(model, seed);
        train.time_budget_secs = opts.time_budget_secs.or(budget);
        runs.push(SuiteRun {
            seed,
            data,
            train,
            prior: PriorSpec::default(),
        });
    }
    Ok(ExperimentSuite {
        id,
        runs,
        eval_samples: crate::eval::DEFAULT_SAMPLES,
    })
}
