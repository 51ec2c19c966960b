//! Permutation-based DAG samplers used only as runtime baselines.
//!
//! Both build a relaxed permutation matrix, harden it to a permutation `Π`
//! and assemble the DAG as the matrix product `Πᵀ U Π` with `U` the strictly
//! upper-triangular all-ones mask. The product is evaluated densely, as the
//! relaxed (differentiable) form of these samplers requires.
//!
//! The Sinkhorn baseline hardens greedily (row by row, best unused column)
//! instead of with the Hungarian algorithm.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::diffcore::{softmax, Axis, Tensor};

use super::SamplerError;

pub const DEFAULT_SINKHORN_ITERATIONS: usize = 20;

#[derive(Clone, Debug)]
pub struct BaselineSample {
    /// Doubly-stochastic (Sinkhorn) or row-stochastic (SoftSort) relaxation.
    pub relaxed: Tensor,
    /// `permutation[row] = column` of the hardened matrix.
    pub permutation: Vec<usize>,
    pub hard: Tensor,
    pub dag: Tensor,
}

fn upper_mask(d: usize) -> Tensor {
    Tensor::from_fn(d, d, |i, j| if j > i { 1.0 } else { 0.0 })
}

fn permutation_matrix(perm: &[usize]) -> Tensor {
    let d = perm.len();
    let mut m = Tensor::zeros(d, d);
    for (r, &c) in perm.iter().enumerate() {
        m.set(r, c, 1.0);
    }
    m
}

fn assemble_dag(hard: &Tensor) -> Result<Tensor, SamplerError> {
    let u = upper_mask(hard.rows());
    Ok(hard.transpose().matmul(&u)?.matmul(hard)?)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Gumbel-Sinkhorn: perturb, alternate row/column normalisation in log
/// space for a fixed number of iterations, then harden greedily.
pub fn baseline_sinkhorn_sample<R: Rng + ?Sized>(
    logits: &Tensor,
    iterations: usize,
    tau: f64,
    rng: &mut R,
) -> Result<BaselineSample, SamplerError> {
    if tau <= 0.0 {
        return Err(SamplerError::NonPositiveTemperature {
            name: "tau",
            value: tau,
        });
    }
    let d = logits.rows();
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut log_alpha = logits.map(|x| x / tau);
    for v in log_alpha.data_mut() {
        *v += gumbel.sample(rng) / tau;
    }
    for _ in 0..iterations {
        let la = log_alpha.data_mut();
        for i in 0..d {
            let row = &mut la[i * d..(i + 1) * d];
            let lse = log_sum_exp(row.iter().copied());
            row.iter_mut().for_each(|v| *v -= lse);
        }
        for j in 0..d {
            let lse = log_sum_exp((0..d).map(|i| la[i * d + j]));
            for i in 0..d {
                la[i * d + j] -= lse;
            }
        }
    }
    let relaxed = log_alpha.map(f64::exp);

    let mut used = vec![false; d];
    let mut permutation = Vec::with_capacity(d);
    for i in 0..d {
        let row = relaxed.row_slice(i);
        let mut best = usize::MAX;
        for j in 0..d {
            if !used[j] && (best == usize::MAX || row[j] > row[best]) {
                best = j;
            }
        }
        used[best] = true;
        permutation.push(best);
    }
    let hard = permutation_matrix(&permutation);
    let dag = assemble_dag(&hard)?;
    Ok(BaselineSample {
        relaxed,
        permutation,
        hard,
        dag,
    })
}

/// Gumbel-Top-k with the SoftSort relaxation
/// `P_ij = softmax_j(−|sorted_i − s_j| / τ)`, hardened by argsort.
pub fn baseline_topk_sample<R: Rng + ?Sized>(
    scores: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<BaselineSample, SamplerError> {
    if tau <= 0.0 {
        return Err(SamplerError::NonPositiveTemperature {
            name: "tau",
            value: tau,
        });
    }
    let d = scores.len();
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let perturbed: Vec<f64> = scores.iter().map(|s| s + gumbel.sample(rng)).collect();
    let mut permutation: Vec<usize> = (0..d).collect();
    permutation.sort_by(|&a, &b| perturbed[b].total_cmp(&perturbed[a]));
    let logits = Tensor::from_fn(d, d, |i, j| {
        -(perturbed[permutation[i]] - perturbed[j]).abs() / tau
    });
    let relaxed = softmax(&logits, Axis::Cols);
    let hard = permutation_matrix(&permutation);
    let dag = assemble_dag(&hard)?;
    Ok(BaselineSample {
        relaxed,
        permutation,
        hard,
        dag,
    })
}
