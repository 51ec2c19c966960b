//! Single runs (data → train → eval) and suite reproduction.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{
    auc_pr, auc_roc, heldout_mse, mean_edge_probs, write_scores_csv, MetricsReport, MseMode,
};
use crate::sem::{generate, load_dataset, load_sachs, save_dataset, Dataset};
use crate::vi::{load_train_result, save_train_result, train, PriorSpec, StopReason, TrainConfig};

use super::suite::{DataSource, ExperimentSuite, SuiteRun};
use super::HarnessError;

/// Files that make up a dataset directory, in fingerprint order.
const DATASET_FILES: [&str; 5] = [
    "X_train.csv",
    "X_val.csv",
    "X_test.csv",
    "adjacency.csv",
    "meta.json",
];

pub fn artifact_version() -> String {
    option_env!("DAGVI_VERSION")
        .map(str::to_string)
        .unwrap_or_else(|| format!("dagvi-{}", env!("CARGO_PKG_VERSION")))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// SHA-256 over the name, length and bytes of each dataset file present.
pub fn dataset_fingerprint(dir: &Path) -> Result<String, HarnessError> {
    let mut h = Sha256::new();
    let mut any = false;
    for name in DATASET_FILES {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        any = true;
    }
    if !any {
        return Err(HarnessError::Missing(format!(
            "{} contains no dataset files",
            dir.display()
        )));
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// `manifest.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub run_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub dataset_fingerprint: String,
    pub train: TrainConfig,
    pub prior: PriorSpec,
    pub stop_reason: StopReason,
    pub started_unix: f64,
    pub finished_unix: f64,
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    pub fn read(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = Self::path(run_dir);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    fn write(&self) -> Result<(), HarnessError> {
        let path = Self::path(&self.run_dir);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))
    }
}

/// Generates or loads the data of `source` and writes it to `dir`.
pub fn materialize(source: &DataSource, dir: &Path) -> Result<Dataset, HarnessError> {
    let dataset = match source {
        DataSource::Synthetic(spec) => generate(spec)?.0,
        DataSource::Sachs {
            data,
            edges,
            seed,
            val_fraction,
        } => load_sachs(data, edges, *seed, *val_fraction)?,
    };
    save_dataset(&dataset, dir)?;
    Ok(dataset)
}

/// Trains on the dataset in `dataset_dir` and writes the run directory.
pub fn train_run(
    dataset_dir: &Path,
    run_dir: &Path,
    config: &TrainConfig,
    prior: &PriorSpec,
) -> Result<RunManifest, HarnessError> {
    let started_unix = unix_now();
    let dataset = load_dataset(dataset_dir)?;
    let fingerprint = dataset_fingerprint(dataset_dir)?;
    let result = match train(&dataset, config, prior) {
        Ok(r) => r,
        Err(e) => {
            // keep what was learned before a divergence for inspection
            if let crate::vi::ViError::Diverged { trajectory, .. } = &e {
                let path = run_dir.join("trajectory.csv");
                if std::fs::create_dir_all(run_dir).is_ok() {
                    if let Ok(file) = std::fs::File::create(&path) {
                        let _ = crate::vi::write_trajectory_csv(
                            trajectory,
                            std::io::BufWriter::new(file),
                        );
                    }
                }
            }
            return Err(e.into());
        }
    };
    save_train_result(&result, config, prior, run_dir)?;
    let manifest = RunManifest {
        version: artifact_version(),
        run_dir: run_dir.to_path_buf(),
        dataset_dir: std::path::absolute(dataset_dir)
            .map_err(|e| HarnessError::io(dataset_dir, e))?,
        dataset_fingerprint: fingerprint,
        train: config.clone(),
        prior: *prior,
        stop_reason: result.stop_reason,
        started_unix,
        finished_unix: unix_now(),
    };
    manifest.write()?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub samples: usize,
    /// Evaluation RNG seed; the run's training seed when unset.
    pub seed: Option<u64>,
    pub mse_mode: MseMode,
    /// Dataset directory; the one recorded in the run manifest when unset.
    pub dataset_dir: Option<PathBuf>,
    /// Defaults to the dataset directory name.
    pub dataset_id: Option<String>,
    pub write_scores: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: crate::eval::DEFAULT_SAMPLES,
            seed: None,
            mse_mode: MseMode::Sampled,
            dataset_dir: None,
            dataset_id: None,
            write_scores: false,
        }
    }
}

/// Computes the metrics of a trained run and writes `metrics.json` (and
/// optionally `scores.csv`) into the run directory. AUCs are absent without
/// a ground-truth graph, MSE without test rows.
pub fn eval_run(run_dir: &Path, opts: &EvalOptions) -> Result<MetricsReport, HarnessError> {
    let run = load_train_result(run_dir)?;
    let dataset_dir = match &opts.dataset_dir {
        Some(d) => d.clone(),
        None => RunManifest::read(run_dir)?.dataset_dir,
    };
    let dataset = load_dataset(&dataset_dir)?;
    if dataset.dim() != run.posterior.dim() {
        return Err(HarnessError::Config(format!(
            "run has {} variables, dataset {} has {}",
            run.posterior.dim(),
            dataset_dir.display(),
            dataset.dim()
        )));
    }
    let seed = opts.seed.unwrap_or(run.config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = mean_edge_probs(&run.posterior, opts.samples, &mut rng)?;
    let (auc_roc, auc_pr) = match &dataset.truth {
        Some(g) => (
            auc_roc(&scores.s, &g.adjacency),
            auc_pr(&scores.s, &g.adjacency),
        ),
        None => (None, None),
    };
    let x_test = dataset.test();
    let mse = if x_test.rows() > 0 {
        Some(heldout_mse(
            &run.models,
            &run.posterior,
            &x_test,
            opts.samples,
            opts.mse_mode,
            &mut rng,
        )?)
    } else {
        None
    };
    let dataset_id = opts.dataset_id.clone().unwrap_or_else(|| {
        dataset_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let report = MetricsReport {
        auc_roc,
        auc_pr,
        mse,
        m: opts.samples,
        seed,
        dataset_id,
    };
    let path = run_dir.join("metrics.json");
    report
        .write(&path)
        .map_err(|e| HarnessError::io(&path, e))?;
    if opts.write_scores {
        let path = run_dir.join("scores.csv");
        write_scores_csv(&scores, &path).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(report)
}

/// Data, training and evaluation of one suite member under
/// `root/seed-<k>/{data,run}`.
pub fn run_member(
    suite: &ExperimentSuite,
    run: &SuiteRun,
    root: &Path,
) -> Result<MetricsReport, HarnessError> {
    let base = root.join(format!("seed-{}", run.seed));
    let data_dir = base.join("data");
    let run_dir = base.join("run");
    materialize(&run.data, &data_dir)?;
    train_run(&data_dir, &run_dir, &run.train, &run.prior)?;
    let opts = EvalOptions {
        samples: suite.eval_samples,
        dataset_id: Some(format!("{}/seed-{}", suite.id, run.seed)),
        ..EvalOptions::default()
    };
    eval_run(&run_dir, &opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub suite: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
    pub runs: usize,
    pub complete: bool,
}

/// Mean and spread of each metric over the runs that report it.
pub fn aggregate(suite: &str, reports: &[MetricsReport], complete: bool) -> Vec<AggregateRow> {
    let pick: [(&str, fn(&MetricsReport) -> Option<f64>); 3] = [
        ("auc_roc", |r| r.auc_roc),
        ("auc_pr", |r| r.auc_pr),
        ("mse", |r| r.mse),
    ];
    let mut rows = Vec::new();
    for (metric, f) in pick {
        let xs: Vec<f64> = reports.iter().filter_map(f).collect();
        if xs.is_empty() {
            continue;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(AggregateRow {
            suite: suite.to_string(),
            metric: metric.to_string(),
            mean,
            std,
            runs: xs.len(),
            complete,
        });
    }
    rows
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "suite,metric,mean,std,runs,complete")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.suite, r.metric, r.mean, r.std, r.runs, r.complete
        )?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub reports: Vec<(u64, MetricsReport)>,
    pub failures: Vec<(u64, String)>,
    pub rows: Vec<AggregateRow>,
}

impl SuiteOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.mean)
    }
}

/// Runs every member of `suite` with up to `jobs` in parallel and writes
/// `out/<suite>/aggregate.csv` plus a per-seed `runs.csv`. A failing seed is
/// recorded and the aggregate marked incomplete.
pub fn reproduce(
    suite: &ExperimentSuite,
    out: &Path,
    jobs: usize,
) -> Result<SuiteOutcome, HarnessError> {
    let root = out.join(suite.id.name());
    std::fs::create_dir_all(&root).map_err(|e| HarnessError::io(&root, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<(u64, Result<MetricsReport, HarnessError>)> = pool.install(|| {
        suite
            .runs
            .par_iter()
            .map(|run| (run.seed, run_member(suite, run, &root)))
            .collect()
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(m) => reports.push((seed, m)),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let just: Vec<MetricsReport> = reports.iter().map(|(_, m)| m.clone()).collect();
    let rows = aggregate(suite.id.name(), &just, failures.is_empty());

    let path = root.join("aggregate.csv");
    let file = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    write_aggregate_csv(&rows, std::io::BufWriter::new(file))
        .map_err(|e| HarnessError::io(&path, e))?;

    let path = root.join("runs.csv");
    let mut text = String::from("seed,auc_roc,auc_pr,mse,error\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (seed, m) in &reports {
        text.push_str(&format!(
            "{seed},{},{},{},\n",
            fmt(m.auc_roc),
            fmt(m.auc_pr),
            fmt(m.mse)
        ));
    }
    for (seed, e) in &failures {
        text.push_str(&format!("{seed},,,,\"{}\"\n", e.replace('"', "'")));
    }
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;

    Ok(SuiteOutcome {
        reports,
        failures,
        rows,
    })
}
