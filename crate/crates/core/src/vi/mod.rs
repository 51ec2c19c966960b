//! Variational training of the DAG posterior and the node mechanisms.

mod model;
mod objective;
mod persist;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dag_sampler::{PosteriorNoise, PosteriorParams, Relaxation, SamplerError};
use crate::diffcore::{AdamConfig, AdamState, DiffError, Tape, Tensor};
use crate::sem::Dataset;

pub use model::{reconstruct, FunctionalModels, ModelKind, ModelVars};
pub use objective::{
    elbo_loss, flat_names, flat_params, kl_edges, kl_edges_on_tape, kl_scores, kl_scores_on_tape,
    negative_elbo_on_tape, recon_loss, recon_loss_on_tape, ElboTerms, LossNodes, ParamVars,
    PriorSpec,
};
pub use persist::{load_train_result, save_train_result, write_trajectory_csv, TrainedRun};

#[derive(Debug, thiserror::Error)]
pub enum ViError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        trajectory: Vec<EpochRecord>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Flat training configuration; every field has a default so partial JSON
/// files are accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Temperature of the topological sigmoid.
    pub t: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    pub kl_edge_weight: f64,
    pub kl_score_weight: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs between validation checks.
    pub val_period: usize,
    /// Checks without improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub model: ModelKind,
    pub hidden: usize,
    /// Posterior draws per training step.
    pub train_samples: usize,
    /// Posterior draws per validation estimate.
    pub val_samples: usize,
    /// `1 × d` score log-scales instead of one shared value.
    pub per_dim_scale: bool,
    /// Stop after this many seconds (checked once per epoch).
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            t: 0.3,
            tau: 1.0,
            kl_edge_weight: 1.0,
            kl_score_weight: 1.0,
            batch_size: 256,
            max_epochs: 500,
            val_period: 10,
            patience: 5,
            weight_decay: 1e-4,
            seed: 0,
            model: ModelKind::Linear,
            hidden: 32,
            train_samples: 1,
            val_samples: 8,
            per_dim_scale: false,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ViError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ViError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("t", self.t)?;
        positive("tau", self.tau)?;
        for (name, v) in [
            ("kl_edge_weight", self.kl_edge_weight),
            ("kl_score_weight", self.kl_score_weight),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ViError::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("val_period", self.val_period),
            ("patience", self.patience),
            ("train_samples", self.train_samples),
            ("val_samples", self.val_samples),
        ] {
            if v == 0 {
                return Err(ViError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return Err(ViError::Config(
                "hidden must be at least 1 for the mlp model".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One row of the loss trajectory. Training columns are batch averages;
/// `val` is present on validation-check epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: ElboTerms,
    pub val: Option<ElboTerms>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    TimeBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    /// Parameters at the best validation check.
    pub posterior: PosteriorParams,
    pub models: FunctionalModels,
    pub trajectory: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_elbo: f64,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_clock_secs: f64,
}

/// Initial posterior: `φ = −1`, `μ ~ N(0, 0.1²)`, `log σ = ln 0.1`.
pub fn init_posterior<R: Rng + ?Sized>(
    d: usize,
    per_dim_scale: bool,
    rng: &mut R,
) -> Result<PosteriorParams, ViError> {
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mean = Tensor::from_fn(1, d, |_, _| normal.sample(rng));
    let log_scale = if per_dim_scale {
        Tensor::full(1, d, 0.1f64.ln())
    } else {
        Tensor::scalar(0.1f64.ln())
    };
    Ok(PosteriorParams::new(
        Tensor::full(d, d, -1.0),
        mean,
        log_scale,
    )?)
}

/// Validation ELBO averaged over posterior draws (straight-through forward,
/// i.e. binary graphs).
pub fn evaluate_elbo(
    x: &Tensor,
    params: &PosteriorParams,
    models: &FunctionalModels,
    prior: &PriorSpec,
    config: &TrainConfig,
    noise: &[PosteriorNoise],
) -> Result<ElboTerms, ViError> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, models, false);
    let xv = tape.constant(x.clone());
    let nodes = negative_elbo_on_tape(
        &mut tape,
        &vars,
        xv,
        noise,
        prior,
        config,
        Relaxation::StraightThrough,
    )?;
    Ok(nodes.terms(&tape, params.dim(), config))
}

fn unflatten(flat: &[Tensor], params: &mut PosteriorParams, models: &mut FunctionalModels) {
    params.edge_logits = flat[0].clone();
    params.score_mean = flat[1].clone();
    params.score_log_scale = flat[2].clone();
    for (dst, src) in models.tensors_mut().into_iter().zip(&flat[3..]) {
        *dst = src.clone();
    }
}

fn mean_terms(terms: &[ElboTerms]) -> ElboTerms {
    let n = terms.len() as f64;
    ElboTerms {
        elbo: terms.iter().map(|t| t.elbo).sum::<f64>() / n,
        recon: terms.iter().map(|t| t.recon).sum::<f64>() / n,
        kl_edges: terms.iter().map(|t| t.kl_edges).sum::<f64>() / n,
        kl_scores: terms.iter().map(|t| t.kl_scores).sum::<f64>() / n,
    }
}

/// Stochastic maximization of the ELBO with Adam and early stopping.
///
/// Each step draws one posterior DAG per `train_samples` on a shuffled
/// batch. Every `val_period` epochs the validation ELBO is estimated with
/// `val_samples` draws from a fixed noise set (the same draws at every
/// check), and training stops after `patience` checks without improvement.
/// The parameters of the best check are returned.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    prior: &PriorSpec,
) -> Result<TrainResult, ViError> {
    config.validate()?;
    prior.validate()?;
    let start = Instant::now();
    let d = dataset.dim();
    if d < 2 {
        return Err(ViError::Config(format!(
            "need at least 2 variables, got {d}"
        )));
    }
    let x_train = dataset.train();
    let x_val = dataset.val();
    if x_train.rows() == 0 || x_val.rows() == 0 {
        return Err(ViError::Config(
            "dataset needs non-empty training and validation splits".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_posterior(d, config.per_dim_scale, &mut rng)?;
    let mut models = FunctionalModels::init(config.model, d, config.hidden, &mut rng)?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a11_da7a);
    let val_noise: Vec<PosteriorNoise> = (0..config.val_samples)
        .map(|_| PosteriorNoise::draw(d, &mut val_rng))
        .collect();

    let names = flat_names(&models);
    let mut flat = flat_params(&params, &models);
    let mut adam = AdamState::new(config.adam(), &flat);
    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    let mut trajectory = Vec::new();
    let mut best: Option<(f64, usize, PosteriorParams, FunctionalModels)> = None;
    let mut bad_checks = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut stop_epoch = config.max_epochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut batch_terms = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let xb = x_train.select_rows(chunk);
            let noise: Vec<PosteriorNoise> = (0..config.train_samples)
                .map(|_| PosteriorNoise::draw(d, &mut rng))
                .collect();
            let mut tape = Tape::new();
            let vars: Vec<_> = flat.iter().map(|t| tape.param(t.clone())).collect();
            let pv = ParamVars::from_flat(&vars, &models);
            let xv = tape.constant(xb);
            let nodes = negative_elbo_on_tape(
                &mut tape,
                &pv,
                xv,
                &noise,
                prior,
                config,
                Relaxation::StraightThrough,
            )
            .map_err(|e| diverged(epoch, e.to_string(), &trajectory))?;
            batch_terms.push(nodes.terms(&tape, d, config));
            let grads = tape.backward(nodes.loss)?;
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.update(&mut flat, &g, &names)
                .map_err(|e| diverged(epoch, e.to_string(), &trajectory))?;
        }
        unflatten(&flat, &mut params, &mut models);

        let is_check = epoch % config.val_period == 0 || epoch == config.max_epochs;
        let over_budget = config
            .time_budget_secs
            .is_some_and(|b| start.elapsed().as_secs_f64() > b);
        let val = if is_check || over_budget {
            let terms = evaluate_elbo(&x_val, &params, &models, prior, config, &val_noise)
                .map_err(|e| diverged(epoch, e.to_string(), &trajectory))?;
            if !terms.is_finite() {
                return Err(diverged(
                    epoch,
                    format!("validation ELBO {terms:?}"),
                    &trajectory,
                ));
            }
            Some(terms)
        } else {
            None
        };
        trajectory.push(EpochRecord {
            epoch,
            train: mean_terms(&batch_terms),
            val,
        });
        if let Some(v) = val {
            if best.as_ref().is_none_or(|b| v.elbo > b.0) {
                best = Some((v.elbo, epoch, params.clone(), models.clone()));
                bad_checks = 0;
            } else {
                bad_checks += 1;
            }
        }
        if over_budget {
            stop_reason = StopReason::TimeBudget;
            stop_epoch = epoch;
            break;
        }
        if bad_checks >= config.patience {
            stop_reason = StopReason::EarlyStop;
            stop_epoch = epoch;
            break;
        }
    }

    let (best_val_elbo, best_epoch, posterior, models) =
        best.expect("the final epoch is always a check");
    Ok(TrainResult {
        posterior,
        models,
        trajectory,
        best_epoch,
        best_val_elbo,
        stop_epoch,
        stop_reason,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn diverged(epoch: usize, reason: String, trajectory: &[EpochRecord]) -> ViError {
    ViError::Diverged {
        epoch,
        reason,
        trajectory: trajectory.to_vec(),
    }
}
