use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;

use super::SemError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphFamily {
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "SF")]
    Sf,
}

impl GraphFamily {
    pub fn name(self) -> &'static str {
        match self {
            GraphFamily::Er => "ER",
            GraphFamily::Sf => "SF",
        }
    }
}

impl std::str::FromStr for GraphFamily {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "er" => Ok(GraphFamily::Er),
            "sf" => Ok(GraphFamily::Sf),
            _ => Err(SemError::InvalidParameter(format!(
                "unknown graph family `{s}` (expected er or sf)"
            ))),
        }
    }
}

/// A generated causal graph. `adjacency[i][j] = 1` is an edge `i → j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthGraph {
    pub adjacency: Tensor,
    pub family: Option<GraphFamily>,
    pub seed: Option<u64>,
}

impl GroundTruthGraph {
    pub fn dim(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.adjacency.get(j, node) != 0.0)
            .collect()
    }

    /// Undirected degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let d = self.dim();
        let mut deg = vec![0; d];
        for i in 0..d {
            for j in 0..d {
                if self.adjacency.get(i, j) != 0.0 {
                    deg[i] += 1;
                    deg[j] += 1;
                }
            }
        }
        deg
    }
}

fn check_dim(d: usize) -> Result<(), SemError> {
    if d < 2 {
        return Err(SemError::InvalidParameter(format!(
            "d must be at least 2, got {d}"
        )));
    }
    Ok(())
}

/// Erdős-Rényi DAG: a uniformly random node order, then each pair that
/// respects it is kept independently with probability
/// `expected_edges / (d(d−1)/2)`.
pub fn gen_er_dag<R: Rng + ?Sized>(
    d: usize,
    expected_edges: f64,
    rng: &mut R,
) -> Result<GroundTruthGraph, SemError> {
    check_dim(d)?;
    let max_edges = (d * (d - 1) / 2) as f64;
    if !(0.0..=max_edges).contains(&expected_edges) {
        return Err(SemError::InvalidParameter(format!(
            "expected_edges must lie in [0, {max_edges}], got {expected_edges}"
        )));
    }
    let prob = expected_edges / max_edges;
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut adjacency = Tensor::zeros(d, d);
    for a in 0..d {
        for b in a + 1..d {
            if rng.random::<f64>() < prob {
                adjacency.set(order[a], order[b], 1.0);
            }
        }
    }
    Ok(GroundTruthGraph {
        adjacency,
        family: Some(GraphFamily::Er),
        seed: None,
    })
}

/// Scale-free DAG by preferential attachment.
///
/// Nodes arrive one at a time; each newcomer links to `min(m, arrived)`
/// distinct earlier nodes drawn with probability proportional to
/// `degree + 1`, and every edge points from the earlier node to the newcomer.
/// Arrival order is a random permutation of the labels.
pub fn gen_sf_dag<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    rng: &mut R,
) -> Result<GroundTruthGraph, SemError> {
    check_dim(d)?;
    if m == 0 {
        return Err(SemError::InvalidParameter(
            "attachment count m must be at least 1".into(),
        ));
    }
    let mut arrival: Vec<usize> = (0..d).collect();
    arrival.shuffle(rng);
    let mut degree = vec![0usize; d];
    let mut adjacency = Tensor::zeros(d, d);
    for k in 1..d {
        let mut chosen: Vec<usize> = Vec::with_capacity(m.min(k));
        for _ in 0..m.min(k) {
            let total: usize = (0..k)
                .filter(|t| !chosen.contains(t))
                .map(|t| degree[t] + 1)
                .sum();
            let mut r = rng.random_range(0..total);
            let target = (0..k)
                .filter(|t| !chosen.contains(t))
                .find(|&t| {
                    let w = degree[t] + 1;
                    if r < w {
                        true
                    } else {
                        r -= w;
                        false
                    }
                })
                .expect("weights cover the range");
            chosen.push(target);
        }
        for &t in &chosen {
            degree[t] += 1;
            degree[k] += 1;
            adjacency.set(arrival[t], arrival[k], 1.0);
        }
    }
    Ok(GroundTruthGraph {
        adjacency,
        family: Some(GraphFamily::Sf),
        seed: None,
    })
}
