//! Flat key-value run configuration.
//!
//! A config file is one JSON object whose keys are the trainer fields
//! (`lr`, `t`, `batch_size`, ...) plus the prior keys `edge_prior`,
//! `score_mean` and `score_scale`. Keys mirror the CLI flags with `-`
//! replaced by `_`.

use std::path::Path;

use serde_json::{Map, Value};

use crate::vi::{PriorSpec, TrainConfig};

use super::HarnessError;

const PRIOR_KEYS: [&str; 3] = ["edge_prior", "score_mean", "score_scale"];

/// Splits a flat object into trainer and prior settings. Unknown keys are
/// rejected.
pub fn parse_flat_config(text: &str) -> Result<(TrainConfig, PriorSpec), HarnessError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| HarnessError::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(HarnessError::Config("config must be a JSON object".into()));
    };
    let mut prior = PriorSpec::default();
    for key in PRIOR_KEYS {
        let Some(v) = map.remove(key) else { continue };
        let x = v
            .as_f64()
            .ok_or_else(|| HarnessError::Config(format!("`{key}` must be a number")))?;
        match key {
            "edge_prior" => prior.edge_prob = x,
            "score_mean" => prior.score_mean = x,
            _ => prior.score_scale = x,
        }
    }
    let train: TrainConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    train.validate()?;
    prior.validate()?;
    Ok((train, prior))
}

pub fn load_flat_config(path: &Path) -> Result<(TrainConfig, PriorSpec), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_flat_config(&text).map_err(|e| match e {
        HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// The inverse of [`parse_flat_config`].
pub fn to_flat_config(train: &TrainConfig, prior: &PriorSpec) -> Value {
    let mut map = match serde_json::to_value(train).expect("config serializes") {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    map.insert("edge_prior".into(), prior.edge_prob.into());
    map.insert("score_mean".into(), prior.score_mean.into());
    map.insert("score_scale".into(), prior.score_scale.into());
    Value::Object(map)
}
