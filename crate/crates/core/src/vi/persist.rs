//! Run-directory files: `params.json`, `trajectory.csv`, `train_config.json`
//! and `summary.json`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dag_sampler::PosteriorParams;

use super::{
    EpochRecord, FunctionalModels, PriorSpec, StopReason, TrainConfig, TrainResult, ViError,
};

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    edge_logits: crate::diffcore::Tensor,
    score_mean: crate::diffcore::Tensor,
    score_log_scale: crate::diffcore::Tensor,
    model: FunctionalModels,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    train: TrainConfig,
    prior: PriorSpec,
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    best_epoch: usize,
    best_val_elbo: f64,
    stop_epoch: usize,
    stop_reason: StopReason,
    wall_clock_secs: f64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ViError {
    ViError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ViError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ViError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// `epoch,train_elbo,val_elbo,recon,kl_edges,kl_scores`; `val_elbo` is empty
/// on epochs without a validation check.
pub fn write_trajectory_csv<W: Write>(
    trajectory: &[EpochRecord],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "epoch,train_elbo,val_elbo,recon,kl_edges,kl_scores")?;
    for e in trajectory {
        let val = e.val.map(|v| v.elbo.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch, e.train.elbo, val, e.train.recon, e.train.kl_edges, e.train.kl_scores
        )?;
    }
    Ok(())
}

pub fn save_train_result(
    result: &TrainResult,
    config: &TrainConfig,
    prior: &PriorSpec,
    dir: &Path,
) -> Result<(), ViError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(
        &dir.join("params.json"),
        &ParamsFile {
            edge_logits: result.posterior.edge_logits.clone(),
            score_mean: result.posterior.score_mean.clone(),
            score_log_scale: result.posterior.score_log_scale.clone(),
            model: result.models.clone(),
        },
    )?;
    write_json(
        &dir.join("train_config.json"),
        &ConfigFile {
            train: config.clone(),
            prior: *prior,
        },
    )?;
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            best_epoch: result.best_epoch,
            best_val_elbo: result.best_val_elbo,
            stop_epoch: result.stop_epoch,
            stop_reason: result.stop_reason,
            wall_clock_secs: result.wall_clock_secs,
        },
    )?;
    let path = dir.join("trajectory.csv");
    let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_trajectory_csv(&result.trajectory, std::io::BufWriter::new(file))
        .map_err(|e| io_err(&path, e))
}

/// Trained parameters and the configuration they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedRun {
    pub posterior: PosteriorParams,
    pub models: FunctionalModels,
    pub config: TrainConfig,
    pub prior: PriorSpec,
}

pub fn load_train_result(dir: &Path) -> Result<TrainedRun, ViError> {
    let params_path = dir.join("params.json");
    let p: ParamsFile = read_json(&params_path)?;
    let posterior = PosteriorParams::new(p.edge_logits, p.score_mean, p.score_log_scale)
        .map_err(|e| io_err(&params_path, e))?;
    p.model.validate().map_err(|e| io_err(&params_path, e))?;
    if p.model.dim() != posterior.dim() {
        return Err(io_err(
            &params_path,
            "model and posterior dimensions differ",
        ));
    }
    let c: ConfigFile = read_json(&dir.join("train_config.json"))?;
    Ok(TrainedRun {
        posterior,
        models: p.model,
        config: c.train,
        prior: c.prior,
    })
}
