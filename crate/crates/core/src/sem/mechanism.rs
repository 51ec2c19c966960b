use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dag_sampler::topological_order;
use crate::diffcore::Tensor;

use super::{GroundTruthGraph, SemError};

pub const NOISE_VARIANCE: f64 = 1.0;
const GP_JITTER: f64 = 1e-6;
const GP_MAX_JITTER: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Linear,
    Gp,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Linear => "linear",
            MechanismKind::Gp => "gp",
        }
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(MechanismKind::Linear),
            "gp" | "nonlinear" | "gp-nonlinear" => Ok(MechanismKind::Gp),
            _ => Err(SemError::InvalidParameter(format!(
                "unknown mechanism `{s}` (expected linear or gp)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    /// `weights[j][i]` is the coefficient of parent `j` in node `i`.
    Linear { weights: Tensor },
    /// Function values drawn during simulation, one column per node
    /// (zero for parentless nodes), with the jitter each node needed.
    Gp {
        lengthscale: f64,
        values: Tensor,
        jitter: Vec<f64>,
    },
}

impl Mechanism {
    pub fn kind(&self) -> MechanismKind {
        match self {
            Mechanism::Linear { .. } => MechanismKind::Linear,
            Mechanism::Gp { .. } => MechanismKind::Gp,
        }
    }

    pub fn noise_variance(&self) -> f64 {
        NOISE_VARIANCE
    }
}

fn order_of(graph: &GroundTruthGraph) -> Result<Vec<usize>, SemError> {
    topological_order(&graph.adjacency).ok_or(SemError::Cyclic)
}

/// Edge weights with uniform sign and magnitude uniform in `[0.5, 2]`.
pub fn gen_linear_mechanism<R: Rng + ?Sized>(
    graph: &GroundTruthGraph,
    rng: &mut R,
) -> Result<Mechanism, SemError> {
    order_of(graph)?;
    let d = graph.dim();
    let mut weights = Tensor::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if graph.adjacency.get(i, j) != 0.0 {
                let magnitude = rng.random_range(0.5..=2.0);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                weights.set(i, j, sign * magnitude);
            }
        }
    }
    Ok(Mechanism::Linear { weights })
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `X_i = Σ_j w_ji X_j + ε_i`, nodes visited in topological order.
pub fn simulate_linear<R: Rng + ?Sized>(
    graph: &GroundTruthGraph,
    mechanism: &Mechanism,
    n: usize,
    rng: &mut R,
) -> Result<Tensor, SemError> {
    let Mechanism::Linear { weights } = mechanism else {
        return Err(SemError::InvalidParameter(
            "simulate_linear needs a linear mechanism".into(),
        ));
    };
    let d = graph.dim();
    if weights.shape() != [d, d] {
        return Err(SemError::InvalidParameter(format!(
            "weights {:?} do not match d = {d}",
            weights.shape()
        )));
    }
    let order = order_of(graph)?;
    // noise drawn row-major up front so the stream does not depend on the order
    let mut x = Tensor::from_fn(n, d, |_, _| standard_normal(rng));
    for &i in &order {
        let parents = graph.parents(i);
        if parents.is_empty() {
            continue;
        }
        for r in 0..n {
            let mean: f64 = parents
                .iter()
                .map(|&j| weights.get(j, i) * x.get(r, j))
                .sum();
            x.set(r, i, x.get(r, i) + mean);
        }
    }
    Ok(x)
}

fn rbf_kernel(inputs: &[Vec<f64>], lengthscale: f64) -> DMatrix<f64> {
    let n = inputs.len();
    let scale = 2.0 * lengthscale * lengthscale;
    DMatrix::from_fn(n, n, |a, b| {
        let sq: f64 = inputs[a]
            .iter()
            .zip(&inputs[b])
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        (-sq / scale).exp()
    })
}

/// Draw `f ~ N(0, K)` with the smallest jitter in `1e-6, 1e-5, …, 1e-3`
/// that makes `K` factorizable.
fn draw_gp<R: Rng + ?Sized>(
    kernel: DMatrix<f64>,
    node: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), SemError> {
    let n = kernel.nrows();
    let z: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    let mut jitter = GP_JITTER;
    loop {
        let mut k = kernel.clone();
        for a in 0..n {
            k[(a, a)] += jitter;
        }
        if let Some(chol) = k.cholesky() {
            let f = chol.l() * nalgebra::DVector::from_vec(z);
            return Ok((f.iter().copied().collect(), jitter));
        }
        if jitter >= GP_MAX_JITTER {
            return Err(SemError::Factorization { node, jitter, n });
        }
        jitter *= 10.0;
    }
}

/// Additive-noise data with one Gaussian-process function per node with
/// parents (unit-lengthscale RBF kernel over the parent values).
/// Parentless nodes are pure standard-normal noise.
pub fn simulate_gp<R: Rng + ?Sized>(
    graph: &GroundTruthGraph,
    n: usize,
    rng: &mut R,
) -> Result<(Tensor, Mechanism), SemError> {
    let d = graph.dim();
    let order = order_of(graph)?;
    let mut x = Tensor::from_fn(n, d, |_, _| standard_normal(rng));
    let mut values = Tensor::zeros(n, d);
    let mut jitters = vec![0.0; d];
    for &i in &order {
        let parents = graph.parents(i);
        if parents.is_empty() {
            continue;
        }
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|r| parents.iter().map(|&j| x.get(r, j)).collect())
            .collect();
        let (f, jitter) = draw_gp(rbf_kernel(&inputs, 1.0), i, rng)?;
        jitters[i] = jitter;
        for (r, fr) in f.into_iter().enumerate() {
            values.set(r, i, fr);
            x.set(r, i, x.get(r, i) + fr);
        }
    }
    Ok((
        x,
        Mechanism::Gp {
            lengthscale: 1.0,
            values,
            jitter: jitters,
        },
    ))
}
