//! The sampler expressed on a [`Tape`] so the ELBO can be differentiated
//! through it.

use crate::diffcore::{Tape, Tensor, Var};

use super::{
    compose_dag, sample_edges, topological_matrix, PosteriorNoise, PosteriorParams, PriorityScores,
    SamplerError,
};

/// Tape handles for the variational parameters.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub edge_logits: Var,
    pub score_mean: Var,
    pub score_log_scale: Var,
}

impl PosteriorVars {
    pub fn register(tape: &mut Tape, params: &PosteriorParams, requires_grad: bool) -> Self {
        Self {
            edge_logits: tape.leaf(params.edge_logits.clone(), requires_grad),
            score_mean: tape.leaf(params.score_mean.clone(), requires_grad),
            score_log_scale: tape.leaf(params.score_log_scale.clone(), requires_grad),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relaxation {
    /// Forward pass uses the binary sample, backward pass the relaxation.
    StraightThrough,
    /// Forward and backward both use the continuous relaxation.
    Soft,
}

/// A draw recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeSample {
    /// The adjacency fed to downstream computations.
    pub adjacency: Var,
    /// Binary DAG of this draw.
    pub hard: Tensor,
    pub scores: PriorityScores,
}

/// Records one posterior draw with the given noise.
///
/// The soft adjacency is `Ŵ ∘ sigmoid(grad(p)/t)` with a zeroed diagonal.
/// Under [`Relaxation::StraightThrough`] the returned node carries the
/// binary DAG in the forward pass and routes gradients into that soft
/// adjacency.
pub fn sample_on_tape(
    tape: &mut Tape,
    vars: &PosteriorVars,
    noise: &PosteriorNoise,
    t: f64,
    tau: f64,
    relaxation: Relaxation,
) -> Result<TapeSample, SamplerError> {
    let d = tape.value(vars.edge_logits).rows();
    if noise.normal.len() != d {
        return Err(SamplerError::Dimension(format!(
            "expected {d} normal draws, got {}",
            noise.normal.len()
        )));
    }

    // p = μ + σ·ε
    let eps = tape.constant(Tensor::row(noise.normal.clone()));
    let sigma = tape.exp(vars.score_log_scale)?;
    let sigma = if tape.value(sigma).cols() == 1 {
        tape.broadcast_cols(sigma, d)?
    } else {
        sigma
    };
    let shift = tape.mul(sigma, eps)?;
    let p = tape.add(vars.score_mean, shift)?;

    // sigmoid((p_j − p_i) / t)
    let p_cols = tape.broadcast_rows(p, d)?;
    let p_rows = tape.transpose(p_cols)?;
    let grad = tape.sub(p_cols, p_rows)?;
    let grad = tape.scale(grad, 1.0 / t)?;
    let topo_soft = tape.sigmoid(grad)?;

    // sigmoid((φ + g1 − g0) / τ)
    let gdiff = noise
        .gumbel
        .present
        .zip_map(&noise.gumbel.absent, |a, b| a - b);
    let gdiff = tape.constant(gdiff);
    let logits = tape.add(vars.edge_logits, gdiff)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let w_soft = tape.sigmoid(logits)?;

    let soft = tape.mul(w_soft, topo_soft)?;
    let off_diag = Tensor::from_fn(d, d, |i, j| if i == j { 0.0 } else { 1.0 });
    let soft = tape.mul_const(soft, &off_diag)?;

    // Binary draw from the same values through the plain sampler.
    let scores = PriorityScores(tape.value(p).data().to_vec());
    let params = PosteriorParams {
        edge_logits: tape.value(vars.edge_logits).clone(),
        score_mean: tape.value(vars.score_mean).clone(),
        score_log_scale: tape.value(vars.score_log_scale).clone(),
    };
    let edges = sample_edges(&params, tau, &noise.gumbel)?;
    let topo = topological_matrix(&scores, t)?;
    let hard = compose_dag(&edges, &topo, scores.clone())?.hard;

    let adjacency = match relaxation {
        Relaxation::StraightThrough => tape.straight_through(hard.clone(), soft)?,
        Relaxation::Soft => soft,
    };
    Ok(TapeSample {
        adjacency,
        hard,
        scores,
    })
}
