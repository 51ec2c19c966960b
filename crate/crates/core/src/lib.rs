//! Variational causal discovery over DAGs sampled without an acyclicity
//! constraint.

pub mod dag_sampler;
pub mod diffcore;
pub mod eval;
pub mod harness;
pub mod sem;
pub mod vi;
