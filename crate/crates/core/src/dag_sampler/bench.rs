//! Wall-clock comparison of the proposed sampler against the permutation
//! baselines.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diffcore::Tensor;

use super::{
    baseline_sinkhorn_sample, baseline_topk_sample, sample_dag, PosteriorParams, SamplerError,
    DEFAULT_SINKHORN_ITERATIONS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Proposed,
    GumbelSinkhorn,
    GumbelTopk,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [
        SamplerKind::Proposed,
        SamplerKind::GumbelSinkhorn,
        SamplerKind::GumbelTopk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Proposed => "proposed",
            SamplerKind::GumbelSinkhorn => "gumbel-sinkhorn",
            SamplerKind::GumbelTopk => "gumbel-topk",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub sampler: SamplerKind,
    pub d: usize,
    pub rep: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub sampler: SamplerKind,
    pub d: usize,
    pub median: f64,
    pub iqr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
    /// Least-squares slope of log(median seconds) against log(d).
    pub slopes: Vec<(SamplerKind, f64)>,
}

impl BenchReport {
    pub fn median(&self, sampler: SamplerKind, d: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.sampler == sampler && s.d == d)
            .map(|s| s.median)
    }

    pub fn slope(&self, sampler: SamplerKind) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(s, _)| *s == sampler)
            .map(|(_, v)| *v)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn fit_loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(d, _)| (*d as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn time_one(kind: SamplerKind, d: usize, rng: &mut ChaCha8Rng) -> Result<f64, SamplerError> {
    let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
    match kind {
        SamplerKind::Proposed => {
            let params = PosteriorParams::new(
                Tensor::from_fn(d, d, |_, _| normal()),
                Tensor::from_fn(1, d, |_, _| normal()),
                Tensor::scalar(0.1f64.ln()),
            )?;
            let start = Instant::now();
            let s = sample_dag(&params, 0.3, 1.0, rng)?;
            let secs = start.elapsed().as_secs_f64();
            black_box(s);
            Ok(secs)
        }
        SamplerKind::GumbelSinkhorn => {
            let logits = Tensor::from_fn(d, d, |_, _| normal());
            let start = Instant::now();
            let s = baseline_sinkhorn_sample(&logits, DEFAULT_SINKHORN_ITERATIONS, 1.0, rng)?;
            let secs = start.elapsed().as_secs_f64();
            black_box(s);
            Ok(secs)
        }
        SamplerKind::GumbelTopk => {
            let scores: Vec<f64> = (0..d).map(|_| normal()).collect();
            let start = Instant::now();
            let s = baseline_topk_sample(&scores, 1.0, rng)?;
            let secs = start.elapsed().as_secs_f64();
            black_box(s);
            Ok(secs)
        }
    }
}

/// Times `reps` full samples per sampler and dimension, single-threaded.
/// Parameter generation is excluded from the timed region.
pub fn bench_sampling(
    dims: &[usize],
    reps: usize,
    samplers: &[SamplerKind],
    seed: u64,
) -> Result<BenchReport, SamplerError> {
    if dims.len() < 2 || reps < 5 {
        return Err(SamplerError::Dimension(format!(
            "benchmark needs at least 2 dimensions and 5 repetitions, got {} and {reps}",
            dims.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &kind in samplers {
        for &d in dims {
            // warm-up, not recorded
            time_one(kind, d, &mut rng)?;
            let mut times = Vec::with_capacity(reps);
            for rep in 0..reps {
                let seconds = time_one(kind, d, &mut rng)?;
                rows.push(BenchRow {
                    sampler: kind,
                    d,
                    rep,
                    seconds,
                });
                times.push(seconds);
            }
            times.sort_by(f64::total_cmp);
            summary.push(BenchSummary {
                sampler: kind,
                d,
                median: quantile(&times, 0.5),
                iqr: quantile(&times, 0.75) - quantile(&times, 0.25),
            });
        }
    }
    let slopes = samplers
        .iter()
        .map(|&kind| {
            let pts: Vec<(usize, f64)> = summary
                .iter()
                .filter(|s| s.sampler == kind)
                .map(|s| (s.d, s.median))
                .collect();
            (kind, fit_loglog_slope(&pts))
        })
        .collect();
    Ok(BenchReport {
        rows,
        summary,
        slopes,
    })
}

/// `sampler,d,rep,seconds`, one row per repetition.
pub fn write_bench_csv<W: Write>(report: &BenchReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "sampler,d,rep,seconds")?;
    for r in &report.rows {
        writeln!(out, "{},{},{},{}", r.sampler.name(), r.d, r.rep, r.seconds)?;
    }
    Ok(())
}
