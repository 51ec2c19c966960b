//! Per-node mechanisms `X̂_i = f_i(A_{:,i} ∘ X)`.
//!
//! All nodes are evaluated together. Linear: `X̂ = X (A ∘ C) + b` where
//! `C[j][i]` is the coefficient of `X_j` in node `i`. MLP: node `i` owns
//! hidden units `i·h .. (i+1)·h` of one wide layer, so the input mask is `A`
//! repeated `h` times per column and a constant block-sum matrix collects
//! each node's output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};

use super::ViError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = ViError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(ViError::Config(format!(
                "unknown model kind `{s}` (expected linear or mlp)"
            ))),
        }
    }
}

/// Mechanism parameters θ for all nodes.
///
/// Linear: `coef` (d × d) and `bias` (1 × d). MLP: `w1` (d × dh), `b1`
/// (1 × dh), `w2` (1 × dh), `b2` (1 × d); column `i·h + k` of `w1` holds the
/// input weights of hidden unit `k` of node `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FunctionalModels {
    Linear {
        coef: Tensor,
        bias: Tensor,
    },
    Mlp {
        hidden: usize,
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
}

fn fan_in_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl FunctionalModels {
    /// Hidden-layer weights uniform in `±1/√fan_in`, biases zero.
    ///
    /// Output-side weights start at zero: under the hard mask a coefficient
    /// only trains while its edge is sampled, and a wrong-signed random start
    /// would drive the edge logit down before the coefficient can recover.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        d: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, ViError> {
        match kind {
            ModelKind::Linear => Ok(FunctionalModels::Linear {
                coef: Tensor::zeros(d, d),
                bias: Tensor::zeros(1, d),
            }),
            ModelKind::Mlp => {
                if hidden == 0 {
                    return Err(ViError::Config("hidden width must be at least 1".into()));
                }
                let dh = d * hidden;
                Ok(FunctionalModels::Mlp {
                    hidden,
                    w1: fan_in_uniform(d, dh, d, rng),
                    b1: Tensor::zeros(1, dh),
                    w2: Tensor::zeros(1, dh),
                    b2: Tensor::zeros(1, d),
                })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            FunctionalModels::Linear { .. } => ModelKind::Linear,
            FunctionalModels::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FunctionalModels::Linear { bias, .. } => bias.cols(),
            FunctionalModels::Mlp { b2, .. } => b2.cols(),
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self {
            FunctionalModels::Linear { .. } => &["coef", "bias"],
            FunctionalModels::Mlp { .. } => &["w1", "b1", "w2", "b2"],
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            FunctionalModels::Linear { coef, bias } => vec![coef, bias],
            FunctionalModels::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            FunctionalModels::Linear { coef, bias } => vec![coef, bias],
            FunctionalModels::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    /// Shape and finiteness checks, e.g. after deserialization.
    pub fn validate(&self) -> Result<(), ViError> {
        let d = self.dim();
        let expected: Vec<[usize; 2]> = match self {
            FunctionalModels::Linear { .. } => vec![[d, d], [1, d]],
            FunctionalModels::Mlp { hidden, .. } => {
                if *hidden == 0 {
                    return Err(ViError::Config("hidden width must be at least 1".into()));
                }
                let dh = d * hidden;
                vec![[d, dh], [1, dh], [1, dh], [1, d]]
            }
        };
        for ((name, t), shape) in self.names().iter().zip(self.tensors()).zip(expected) {
            if t.shape() != shape {
                return Err(ViError::Config(format!(
                    "model tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ViError::NonFinite(format!("model tensor `{name}`")));
            }
        }
        Ok(())
    }

    /// Registers the tensors on a tape in [`FunctionalModels::names`] order.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ModelVars {
        let vars = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        self.bind(vars)
    }

    /// Wraps already-registered vars (in [`FunctionalModels::names`] order).
    pub fn bind(&self, vars: Vec<Var>) -> ModelVars {
        let d = self.dim();
        match self {
            FunctionalModels::Linear { .. } => ModelVars { vars, mlp: None },
            FunctionalModels::Mlp { hidden, .. } => {
                let h = *hidden;
                let dh = d * h;
                let expand = Tensor::from_fn(d, dh, |i, c| if c / h == i { 1.0 } else { 0.0 });
                let block_sum = Tensor::from_fn(dh, d, |c, i| if c / h == i { 1.0 } else { 0.0 });
                ModelVars {
                    vars,
                    mlp: Some((expand, block_sum)),
                }
            }
        }
    }

    /// Deterministic prediction for a fixed adjacency.
    pub fn predict(&self, x: &Tensor, adjacency: &Tensor) -> Result<Tensor, ViError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let av = tape.constant(adjacency.clone());
        let out = reconstruct(&mut tape, &vars, xv, av)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles for a [`FunctionalModels`] plus the constant expansion
/// matrices of the MLP kind.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub vars: Vec<Var>,
    mlp: Option<(Tensor, Tensor)>,
}

/// `X̂` for a batch `x` (n × d) and adjacency `a` (d × d) on the tape.
/// Column `i` of `a` masks the inputs of node `i`; a zero diagonal keeps
/// `X̂_i` independent of `X_i`.
pub fn reconstruct(tape: &mut Tape, model: &ModelVars, x: Var, a: Var) -> Result<Var, ViError> {
    let [n, d] = tape.value(x).shape();
    if tape.value(a).shape() != [d, d] {
        return Err(ViError::Shape(format!(
            "adjacency {:?} does not match {d} data columns",
            tape.value(a).shape()
        )));
    }
    match &model.mlp {
        None => {
            let (coef, bias) = (model.vars[0], model.vars[1]);
            let masked = tape.mul(a, coef)?;
            let lin = tape.matmul(x, masked)?;
            let b = tape.broadcast_rows(bias, n)?;
            Ok(tape.add(lin, b)?)
        }
        Some((expand, block_sum)) => {
            let (w1, b1, w2, b2) = (model.vars[0], model.vars[1], model.vars[2], model.vars[3]);
            let e = tape.constant(expand.clone());
            let mask = tape.matmul(a, e)?;
            let w1m = tape.mul(w1, mask)?;
            let pre = tape.matmul(x, w1m)?;
            let b1b = tape.broadcast_rows(b1, n)?;
            let pre = tape.add(pre, b1b)?;
            let hidden = tape.relu(pre)?;
            let w2b = tape.broadcast_rows(w2, n)?;
            let weighted = tape.mul(hidden, w2b)?;
            let bs = tape.constant(block_sum.clone());
            let out = tape.matmul(weighted, bs)?;
            let b2b = tape.broadcast_rows(b2, n)?;
            Ok(tape.add(out, b2b)?)
        }
    }
}
