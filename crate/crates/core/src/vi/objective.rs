//! ELBO terms, each available as a plain value and as a tape node.

use serde::{Deserialize, Serialize};

use crate::dag_sampler::{
    sample_on_tape, AdjacencySample, PosteriorNoise, PosteriorParams, PosteriorVars, Relaxation,
};
use crate::diffcore::{log_sigmoid, sigmoid, Tape, Tensor, Var};

use super::model::{reconstruct, FunctionalModels, ModelVars};
use super::{TrainConfig, ViError};

/// Independent Bernoulli(ρ) edges and `N(mean, scale²)` scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub edge_prob: f64,
    pub score_mean: f64,
    pub score_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            edge_prob: 0.01,
            score_mean: 0.0,
            score_scale: 0.1,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ViError> {
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(ViError::Config(format!(
                "prior edge probability must be in (0, 1), got {}",
                self.edge_prob
            )));
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return Err(ViError::Config(format!(
                "prior score scale must be positive, got {}",
                self.score_scale
            )));
        }
        if !self.score_mean.is_finite() {
            return Err(ViError::Config("prior score mean must be finite".into()));
        }
        Ok(())
    }
}

/// Sum of squared residuals.
pub fn recon_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64, ViError> {
    if x.shape() != x_hat.shape() {
        return Err(ViError::Shape(format!(
            "data {:?} vs reconstruction {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    Ok(x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub fn recon_loss_on_tape(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var, ViError> {
    let r = tape.sub(x, x_hat)?;
    let sq = tape.square(r)?;
    Ok(tape.sum(sq)?)
}

fn off_diagonal(d: usize) -> Tensor {
    Tensor::from_fn(d, d, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// `Σ_{i≠j} KL(Bernoulli(sigmoid(φ_ij)) ‖ Bernoulli(ρ))`, written with
/// `ln θ = logσ(φ)` and `ln(1 − θ) = logσ(−φ)` so saturated logits stay finite.
pub fn kl_edges(params: &PosteriorParams, prior: &PriorSpec) -> f64 {
    let d = params.dim();
    let (ln_rho, ln_1m_rho) = (prior.edge_prob.ln(), (-prior.edge_prob).ln_1p());
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let phi = params.edge_logits.get(i, j);
                total += sigmoid(phi) * (log_sigmoid(phi) - ln_rho)
                    + sigmoid(-phi) * (log_sigmoid(-phi) - ln_1m_rho);
            }
        }
    }
    total
}

pub fn kl_edges_on_tape(
    tape: &mut Tape,
    edge_logits: Var,
    prior: &PriorSpec,
) -> Result<Var, ViError> {
    let d = tape.value(edge_logits).rows();
    let (ln_rho, ln_1m_rho) = (prior.edge_prob.ln(), (-prior.edge_prob).ln_1p());
    let neg = tape.neg(edge_logits)?;
    let theta = tape.sigmoid(edge_logits)?;
    let one_minus = tape.sigmoid(neg)?;
    let ln_theta = tape.log_sigmoid(edge_logits)?;
    let ln_one_minus = tape.log_sigmoid(neg)?;
    let a = tape.add_scalar(ln_theta, -ln_rho)?;
    let a = tape.mul(theta, a)?;
    let b = tape.add_scalar(ln_one_minus, -ln_1m_rho)?;
    let b = tape.mul(one_minus, b)?;
    let kl = tape.add(a, b)?;
    let kl = tape.mul_const(kl, &off_diagonal(d))?;
    Ok(tape.sum(kl)?)
}

/// `Σ_i ln(s/σ_i) + (σ_i² + (μ_i − m)²)/(2s²) − 1/2`.
pub fn kl_scores(params: &PosteriorParams, prior: &PriorSpec) -> f64 {
    let s = prior.score_scale;
    (0..params.dim())
        .map(|i| {
            let log_sigma = if params.score_log_scale.cols() == 1 {
                params.score_log_scale.item()
            } else {
                params.score_log_scale.get(0, i)
            };
            let sigma = log_sigma.exp();
            let mu = params.score_mean.get(0, i) - prior.score_mean;
            s.ln() - log_sigma + (sigma * sigma + mu * mu) / (2.0 * s * s) - 0.5
        })
        .sum()
}

pub fn kl_scores_on_tape(
    tape: &mut Tape,
    score_mean: Var,
    score_log_scale: Var,
    prior: &PriorSpec,
) -> Result<Var, ViError> {
    let d = tape.value(score_mean).cols();
    let s = prior.score_scale;
    let log_sigma = if tape.value(score_log_scale).cols() == 1 {
        tape.broadcast_cols(score_log_scale, d)?
    } else {
        score_log_scale
    };
    let two_log_sigma = tape.scale(log_sigma, 2.0)?;
    let var = tape.exp(two_log_sigma)?;
    let centered = tape.add_scalar(score_mean, -prior.score_mean)?;
    let mu_sq = tape.square(centered)?;
    let quad = tape.add(var, mu_sq)?;
    let quad = tape.scale(quad, 1.0 / (2.0 * s * s))?;
    let kl = tape.sub(quad, log_sigma)?;
    let kl = tape.add_scalar(kl, s.ln() - 0.5)?;
    Ok(tape.sum(kl)?)
}

/// The three ELBO components and their weighted combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// `[−recon − λ1·kl_edges − λ2·kl_scores] / d`, to be maximized.
    pub elbo: f64,
    pub recon: f64,
    pub kl_edges: f64,
    pub kl_scores: f64,
}

impl ElboTerms {
    pub fn combine(
        recon: f64,
        kl_edges: f64,
        kl_scores: f64,
        d: usize,
        config: &TrainConfig,
    ) -> Self {
        Self {
            elbo: -(recon + config.kl_edge_weight * kl_edges + config.kl_score_weight * kl_scores)
                / d as f64,
            recon,
            kl_edges,
            kl_scores,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.elbo.is_finite()
            && self.recon.is_finite()
            && self.kl_edges.is_finite()
            && self.kl_scores.is_finite()
    }
}

/// ELBO of one batch under a given DAG draw.
pub fn elbo_loss(
    x: &Tensor,
    sample: &AdjacencySample,
    models: &FunctionalModels,
    params: &PosteriorParams,
    prior: &PriorSpec,
    config: &TrainConfig,
) -> Result<ElboTerms, ViError> {
    let x_hat = models.predict(x, &sample.hard)?;
    let terms = ElboTerms::combine(
        recon_loss(x, &x_hat)?,
        kl_edges(params, prior),
        kl_scores(params, prior),
        params.dim(),
        config,
    );
    if !terms.is_finite() {
        return Err(ViError::NonFinite(format!("ELBO components {terms:?}")));
    }
    Ok(terms)
}

/// Every trainable tensor on a tape.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub posterior: PosteriorVars,
    pub model: ModelVars,
}

impl ParamVars {
    pub fn register(
        tape: &mut Tape,
        params: &PosteriorParams,
        models: &FunctionalModels,
        requires_grad: bool,
    ) -> Self {
        Self {
            posterior: PosteriorVars::register(tape, params, requires_grad),
            model: models.register(tape, requires_grad),
        }
    }

    /// Wraps vars laid out as [`flat_params`] returns them.
    pub fn from_flat(vars: &[Var], models: &FunctionalModels) -> Self {
        Self {
            posterior: PosteriorVars {
                edge_logits: vars[0],
                score_mean: vars[1],
                score_log_scale: vars[2],
            },
            model: models.bind(vars[3..].to_vec()),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let p = &self.posterior;
        let mut v = vec![p.edge_logits, p.score_mean, p.score_log_scale];
        v.extend(&self.model.vars);
        v
    }
}

/// `[φ, μ, log σ, θ...]`, the order used by [`ParamVars::from_flat`].
pub fn flat_params(params: &PosteriorParams, models: &FunctionalModels) -> Vec<Tensor> {
    let mut v = vec![
        params.edge_logits.clone(),
        params.score_mean.clone(),
        params.score_log_scale.clone(),
    ];
    v.extend(models.tensors().into_iter().cloned());
    v
}

pub fn flat_names(models: &FunctionalModels) -> Vec<&'static str> {
    let mut v = vec!["edge_logits", "score_mean", "score_log_scale"];
    v.extend(models.names());
    v
}

/// Tape nodes of a negative-ELBO evaluation.
#[derive(Clone, Debug)]
pub struct LossNodes {
    /// `(mean recon + λ1·kl_edges + λ2·kl_scores) / d`, to be minimized.
    pub loss: Var,
    pub recon: Var,
    pub kl_edges: Var,
    pub kl_scores: Var,
    /// Binary DAG of each posterior draw.
    pub graphs: Vec<Tensor>,
}

impl LossNodes {
    pub fn terms(&self, tape: &Tape, d: usize, config: &TrainConfig) -> ElboTerms {
        ElboTerms::combine(
            tape.value(self.recon).item(),
            tape.value(self.kl_edges).item(),
            tape.value(self.kl_scores).item(),
            d,
            config,
        )
    }
}

/// Negative ELBO of batch `x`, averaging the reconstruction term over one
/// posterior draw per entry of `noise`.
pub fn negative_elbo_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    x: Var,
    noise: &[PosteriorNoise],
    prior: &PriorSpec,
    config: &TrainConfig,
    relaxation: Relaxation,
) -> Result<LossNodes, ViError> {
    if noise.is_empty() {
        return Err(ViError::Config(
            "at least one posterior draw is needed".into(),
        ));
    }
    let d = tape.value(x).cols();
    let mut recon_sum: Option<Var> = None;
    let mut graphs = Vec::with_capacity(noise.len());
    for nz in noise {
        let sample = sample_on_tape(tape, &vars.posterior, nz, config.t, config.tau, relaxation)?;
        debug_assert!(crate::dag_sampler::is_acyclic(&sample.hard));
        let x_hat = reconstruct(tape, &vars.model, x, sample.adjacency)?;
        let r = recon_loss_on_tape(tape, x, x_hat)?;
        recon_sum = Some(match recon_sum {
            None => r,
            Some(acc) => tape.add(acc, r)?,
        });
        graphs.push(sample.hard);
    }
    let recon = tape.scale(recon_sum.expect("non-empty"), 1.0 / noise.len() as f64)?;
    let kl_e = kl_edges_on_tape(tape, vars.posterior.edge_logits, prior)?;
    let kl_s = kl_scores_on_tape(
        tape,
        vars.posterior.score_mean,
        vars.posterior.score_log_scale,
        prior,
    )?;
    let weighted_e = tape.scale(kl_e, config.kl_edge_weight)?;
    let weighted_s = tape.scale(kl_s, config.kl_score_weight)?;
    let total = tape.add(recon, weighted_e)?;
    let total = tape.add(total, weighted_s)?;
    let loss = tape.scale(total, 1.0 / d as f64)?;
    Ok(LossNodes {
        loss,
        recon,
        kl_edges: kl_e,
        kl_scores: kl_s,
        graphs,
    })
}
