//! Posterior summaries and structure/prediction metrics.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dag_sampler::{HardDagSampler, PosteriorParams};
use crate::diffcore::Tensor;
use crate::vi::{FunctionalModels, ViError};

pub const DEFAULT_SAMPLES: usize = 100;

/// Edge frequencies over `m` posterior draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub s: Tensor,
    pub m: usize,
}

/// `S = (1/M) Σ A⁽ᵐ⁾` over `m` binary DAG draws.
pub fn mean_edge_probs<R: Rng + ?Sized>(
    params: &PosteriorParams,
    m: usize,
    rng: &mut R,
) -> Result<ScoreMatrix, ViError> {
    if m == 0 {
        return Err(ViError::Config(
            "at least one posterior sample is needed".into(),
        ));
    }
    let d = params.dim();
    let mut counts = vec![0u32; d * d];
    let sampler = HardDagSampler::new(params);
    for _ in 0..m {
        let a = sampler.sample(rng)?;
        for (c, &v) in counts.iter_mut().zip(a.data()) {
            *c += v as u32;
        }
    }
    let s = Tensor::new(
        d,
        d,
        counts.into_iter().map(|c| c as f64 / m as f64).collect(),
    )
    .expect("d × d");
    Ok(ScoreMatrix { s, m })
}

/// Off-diagonal `(score, is_edge)` pairs.
fn labelled(scores: &Tensor, truth: &Tensor) -> Vec<(f64, bool)> {
    let d = scores.rows();
    assert_eq!(
        scores.shape(),
        truth.shape(),
        "score and truth matrices must match"
    );
    let mut out = Vec::with_capacity(d * d.saturating_sub(1));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                out.push((scores.get(i, j), truth.get(i, j) != 0.0));
            }
        }
    }
    out
}

/// Area under the ROC curve as the Mann-Whitney statistic with midranks
/// for ties, over off-diagonal entries. `None` when all labels agree.
pub fn auc_roc(scores: &Tensor, truth: &Tensor) -> Option<f64> {
    let mut pairs = labelled(scores, truth);
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < pairs.len() {
        let mut end = k;
        while end + 1 < pairs.len() && pairs[end + 1].0 == pairs[k].0 {
            end += 1;
        }
        // ranks k+1 ..= end+1 share their mean
        let midrank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += midrank * pairs[k..=end].iter().filter(|p| p.1).count() as f64;
        k = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Average precision: `Σ ΔRecall · Precision` over descending score
/// thresholds, tied scores entering together. `None` without positives.
pub fn auc_pr(scores: &Tensor, truth: &Tensor) -> Option<f64> {
    let mut pairs = labelled(scores, truth);
    let pos = pairs.iter().filter(|p| p.1).count();
    if pos == 0 {
        return None;
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut k = 0;
    while k < pairs.len() {
        let mut end = k;
        while end + 1 < pairs.len() && pairs[end + 1].0 == pairs[k].0 {
            end += 1;
        }
        let group_pos = pairs[k..=end].iter().filter(|p| p.1).count();
        tp += group_pos;
        fp += end + 1 - k - group_pos;
        if group_pos > 0 {
            ap += (group_pos as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        k = end + 1;
    }
    Some(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseMode {
    /// Average over posterior DAG draws.
    Sampled,
    /// One graph: the score matrix thresholded at 0.5.
    ModeGraph,
}

/// Mean squared residual per entry of `x_test` under the learned mechanisms.
pub fn heldout_mse<R: Rng + ?Sized>(
    models: &FunctionalModels,
    params: &PosteriorParams,
    x_test: &Tensor,
    m: usize,
    mode: MseMode,
    rng: &mut R,
) -> Result<f64, ViError> {
    if m == 0 {
        return Err(ViError::Config(
            "at least one posterior sample is needed".into(),
        ));
    }
    if x_test.rows() == 0 {
        return Err(ViError::Config("empty test set".into()));
    }
    let mse_for = |a: &Tensor| -> Result<f64, ViError> {
        let pred = models.predict(x_test, a)?;
        Ok(crate::vi::recon_loss(x_test, &pred)? / x_test.len() as f64)
    };
    match mode {
        MseMode::Sampled => {
            let mut total = 0.0;
            let sampler = HardDagSampler::new(params);
            for _ in 0..m {
                total += mse_for(&sampler.sample(rng)?)?;
            }
            Ok(total / m as f64)
        }
        MseMode::ModeGraph => {
            let s = mean_edge_probs(params, m, rng)?;
            // a majority edge set of acyclic draws can still contain a cycle;
            // keep it only when it is a DAG, else fall back to sampled mode
            let a = s.s.map(|p| if p > 0.5 { 1.0 } else { 0.0 });
            if crate::dag_sampler::is_acyclic(&a) {
                mse_for(&a)
            } else {
                heldout_mse(models, params, x_test, m, MseMode::Sampled, rng)
            }
        }
    }
}

/// Contents of `metrics.json`. Absent metrics are omitted from the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc_roc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc_pr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub dataset_id: String,
}

impl MetricsReport {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metrics serialize");
        std::fs::write(path, text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// `scores.csv`: `d` rows of comma-separated frequencies.
pub fn write_scores_csv(scores: &ScoreMatrix, path: &Path) -> std::io::Result<()> {
    let mut text = String::new();
    for i in 0..scores.s.rows() {
        let row: Vec<String> = scores
            .s
            .row_slice(i)
            .iter()
            .map(|v| v.to_string())
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)
}
