//! Acceptance run: one PASS/FAIL line per criterion A1–A11.
//!
//! Runs as a plain binary (no libtest harness) so the report always prints.
//! A10 needs the Sachs files, given by `DAGVI_SACHS_DATA` (853 × 11 CSV with
//! header) and `DAGVI_SACHS_EDGES` (one `source,target` pair per line).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dagvi::dag_sampler::{
    bench_sampling, construct_from_dag, dag_from_parts, is_acyclic, HardDagSampler, SamplerKind,
};
use dagvi::diffcore::Tensor;
use dagvi::eval::{auc_pr, auc_roc};
use dagvi::harness::{build_suite, reproduce, RunManifest, SuiteId, SuiteOptions, SuiteOutcome};
use dagvi::vi::{kl_edges, kl_scores, ModelKind, PriorSpec, StopReason};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

enum Verdict {
    Pass,
    Fail,
    /// Soft criterion: reported but does not fail the run.
    SoftFail,
    NotRun,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn a1_acyclicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut draws = 0;
    let mut cyclic = 0;
    for d in [5, 50, 500] {
        // 100 random parameter settings, 100 draws each
        for _ in 0..100 {
            let params = common::random_posterior(d, &mut rng);
            let sampler = HardDagSampler::new(&params);
            for _ in 0..100 {
                let a = sampler.sample(&mut rng).expect("valid parameters");
                draws += 1;
                cyclic += usize::from(!is_acyclic(&a));
            }
        }
    }
    check(
        cyclic == 0,
        format!("{draws} draws at d = 5, 50, 500; {cyclic} cyclic"),
    )
}

fn a2_completeness() -> Outcome {
    let dags = common::all_dags(4);
    let expected = common::labeled_dag_count(4);
    let mut failures = 0;
    for a in &dags {
        let (w, p) = construct_from_dag(a).expect("acyclic");
        failures += usize::from(dag_from_parts(&w, &p, 0.3).expect("valid") != *a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..1000 {
        let p_edge = rng.random_range(0.0..0.5);
        let a = common::random_dag(20, p_edge, &mut rng);
        let (w, p) = construct_from_dag(&a).expect("acyclic");
        failures += usize::from(dag_from_parts(&w, &p, 0.3).expect("valid") != a);
    }
    check(
        dags.len() as u64 == expected && failures == 0,
        format!(
            "{} DAGs on 4 nodes (recurrence: {expected}) + 1000 at d = 20; {failures} mismatches",
            dags.len()
        ),
    )
}

fn a3_complexity() -> Outcome {
    let report =
        bench_sampling(&[250, 500, 1000, 2000], 7, &SamplerKind::ALL, 303).expect("bench runs");
    let slope = report.slope(SamplerKind::Proposed).unwrap();
    let med = |k, d| report.median(k, d).unwrap();
    let p1000 = med(SamplerKind::Proposed, 1000);
    let s1000 = med(SamplerKind::GumbelSinkhorn, 1000);
    let k1000 = med(SamplerKind::GumbelTopk, 1000);
    let p2000 = med(SamplerKind::Proposed, 2000);
    check(
        slope <= 2.4 && p1000 < s1000 && p1000 < k1000 && p2000 < 1.0,
        format!(
            "slope {slope:.3} (≤ 2.4); median at d = 1000: proposed {:.1} ms, sinkhorn {:.1} ms, top-k {:.1} ms; d = 2000: {:.1} ms",
            p1000 * 1e3,
            s1000 * 1e3,
            k1000 * 1e3,
            p2000 * 1e3
        ),
    )
}

fn a4_gradients() -> Outcome {
    let mut prim_worst = 0.0f64;
    let mut prim_fail = Vec::new();
    for seed in 0..5 {
        for (name, r) in common::primitive_reports(seed, 1e-6) {
            prim_worst = prim_worst.max(r.max_rel_error);
            if !r.passed() {
                prim_fail.push(name);
            }
        }
    }
    let mut elbo_worst = 0.0f64;
    for kind in [ModelKind::Linear, ModelKind::Mlp] {
        for seed in 0..3 {
            elbo_worst =
                elbo_worst.max(common::elbo_surrogate_report(5, kind, seed, 1e-4).max_rel_error);
        }
    }
    check(
        prim_fail.is_empty() && elbo_worst < 1e-4,
        format!("primitives max rel. error {prim_worst:.2e} (< 1e-6), failing {prim_fail:?}; ELBO surrogate d = 5 max rel. error {elbo_worst:.2e} (< 1e-4)"),
    )
}

fn a5_kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n = 100_000;
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for _ in 0..20 {
        let d = 3;
        let prior = PriorSpec {
            edge_prob: rng.random_range(0.005..0.3),
            score_mean: rng.random_range(-0.5..0.5),
            score_scale: rng.random_range(0.05..1.0),
        };
        let params = dagvi::dag_sampler::PosteriorParams::new(
            Tensor::from_fn(d, d, |_, _| rng.random_range(-3.0..3.0)),
            Tensor::from_fn(1, d, |_, _| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(1, d, |_, _| rng.random_range(-3.0..0.5)),
        )
        .unwrap();

        let rho = prior.edge_prob;
        let theta = params.edge_probs();
        let edge_vals: Vec<f64> = (0..n)
            .map(|_| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        if i == j {
                            continue;
                        }
                        let th = theta.get(i, j);
                        s += if rng.random_bool(th) {
                            (th / rho).ln()
                        } else {
                            ((1.0 - th) / (1.0 - rho)).ln()
                        };
                    }
                }
                s
            })
            .collect();

        let s = prior.score_scale;
        let score_vals: Vec<f64> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|i| {
                        let (mu, sigma) = (params.score_mean.get(0, i), params.scale(i));
                        let x = Normal::new(mu, sigma).unwrap().sample(&mut rng);
                        let lq = -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln();
                        let lp = -0.5 * ((x - prior.score_mean) / s).powi(2) - s.ln();
                        lq - lp
                    })
                    .sum::<f64>()
            })
            .collect();

        for (closed, vals) in [
            (kl_edges(&params, &prior), edge_vals),
            (kl_scores(&params, &prior), score_vals),
        ] {
            let (mean, se) = common::mean_se(&vals);
            let z = (closed - mean).abs() / se;
            worst = worst.max(z);
            misses += usize::from(z >= 3.0);
        }
    }
    check(
        misses == 0,
        format!("20 settings × 2 terms at 10⁵ samples; worst deviation {worst:.2} s.e. (< 3)"),
    )
}

fn roc_oracle(pairs: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let neg: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn pr_oracle(pairs: &[(f64, bool)]) -> f64 {
    let total_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for th in thresholds {
        let tp = pairs.iter().filter(|p| p.0 >= th && p.1).count() as f64;
        let predicted = pairs.iter().filter(|p| p.0 >= th).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / predicted;
        prev_recall = recall;
    }
    ap
}

fn a6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let d = 6;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let truth = common::random_dag(d, 0.4, &mut rng);
        let levels = [5, 20, 1000][done % 3];
        let s = Tensor::from_fn(d, d, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(0..=levels) as f64 / levels as f64
            }
        });
        let mut pairs = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    pairs.push((s.get(i, j), truth.get(i, j) == 1.0));
                }
            }
        }
        let (Some(roc), Some(pr)) = (auc_roc(&s, &truth), auc_pr(&s, &truth)) else {
            continue;
        };
        worst = worst
            .max((roc - roc_oracle(&pairs)).abs())
            .max((pr - pr_oracle(&pairs)).abs());
        done += 1;
    }
    check(
        worst <= 1e-12,
        format!("100 random pairs at d = 6; max |difference| {worst:.1e} (≤ 1e-12)"),
    )
}

fn run_suite(id: SuiteId, seeds: usize, out: &Path) -> SuiteOutcome {
    let suite = build_suite(
        id,
        &SuiteOptions {
            seeds: Some(seeds),
            ..Default::default()
        },
    )
    .expect("suite builds");
    reproduce(&suite, out, jobs()).expect("suite runs")
}

fn suite_line(o: &SuiteOutcome) -> String {
    let f = |m: &str| o.mean(m).map_or("n/a".to_string(), |v| format!("{v:.3}"));
    let failed = if o.failures.is_empty() {
        String::new()
    } else {
        format!(", {} failed seeds", o.failures.len())
    };
    format!(
        "AUC-ROC {}, AUC-PR {}, MSE {}{failed}",
        f("auc_roc"),
        f("auc_pr"),
        f("mse")
    )
}

fn a7_linear(out: &Path) -> Outcome {
    let er = run_suite(SuiteId::LinearErD10, 10, out);
    let sf = run_suite(SuiteId::LinearSfD10, 10, out);
    let ok = [&er, &sf]
        .iter()
        .all(|o| o.is_complete() && o.mean("auc_roc").is_some_and(|v| v >= 0.90));
    check(
        ok,
        format!(
            "linear-er-d10: {}; linear-sf-d10: {} (mean AUC-ROC ≥ 0.90)",
            suite_line(&er),
            suite_line(&sf)
        ),
    )
}

fn a8_nonlinear(out: &Path) -> Outcome {
    let er = run_suite(SuiteId::NonlinearErD10, 10, out);
    let ok = er.is_complete() && er.mean("auc_roc").is_some_and(|v| v >= 0.78);
    check(
        ok,
        format!(
            "nonlinear-er-d10: {} (mean AUC-ROC ≥ 0.78)",
            suite_line(&er)
        ),
    )
}

fn a9_scale(out: &Path) -> Outcome {
    let o = run_suite(SuiteId::LinearErD50, 3, out);
    let mut longest: f64 = 0.0;
    let mut in_budget = true;
    for seed in 0..3 {
        let m = RunManifest::read(&out.join(format!("linear-er-d50/seed-{seed}/run")))
            .expect("manifest");
        let secs = m.finished_unix - m.started_unix;
        longest = longest.max(secs);
        in_budget &= secs < 3600.0 && m.stop_reason != StopReason::TimeBudget;
    }
    let ok = o.is_complete() && in_budget && o.mean("auc_roc").is_some_and(|v| v >= 0.85);
    check(
        ok,
        format!(
            "linear-er-d50, 3 seeds: {}; longest run {longest:.1} s (< 3600)",
            suite_line(&o)
        ),
    )
}

fn a10_sachs(out: &Path) -> Outcome {
    let (Some(data), Some(edges)) = (
        std::env::var_os("DAGVI_SACHS_DATA"),
        std::env::var_os("DAGVI_SACHS_EDGES"),
    ) else {
        return Outcome {
            verdict: Verdict::NotRun,
            detail: "set DAGVI_SACHS_DATA and DAGVI_SACHS_EDGES to run".into(),
        };
    };
    let suite = build_suite(
        SuiteId::Sachs,
        &SuiteOptions {
            seeds: Some(10),
            sachs: Some((PathBuf::from(data), PathBuf::from(edges))),
            ..Default::default()
        },
    )
    .expect("suite builds");
    let o = reproduce(&suite, out, jobs()).expect("suite runs");
    let roc = o.mean("auc_roc");
    let pr = o.mean("auc_pr");
    let ok = o.is_complete()
        && roc.is_some_and(|v| (0.63..=0.79).contains(&v))
        && pr.is_some_and(|v| v >= 0.24);
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::SoftFail },
        detail: format!(
            "10 restarts: {} (AUC-ROC in [0.63, 0.79], AUC-PR ≥ 0.24)",
            suite_line(&o)
        ),
    }
}

fn metrics_files(root: &Path, suite: &str, seeds: usize) -> Vec<Vec<u8>> {
    (0..seeds)
        .map(|s| {
            std::fs::read(root.join(format!("{suite}/seed-{s}/run/metrics.json")))
                .expect("metrics.json")
        })
        .collect()
}

/// Reruns suites already produced under `first` (with a different job
/// count) and compares metrics.json byte for byte.
fn a11_determinism(first: &Path) -> Outcome {
    let second = tempfile::tempdir().expect("tempdir");
    let mut compared = 0;
    let mut differ = 0;
    for (id, seeds) in [
        (SuiteId::LinearErD10, 10),
        (SuiteId::LinearSfD10, 10),
        (SuiteId::NonlinearErD10, 2),
    ] {
        let suite = build_suite(
            id,
            &SuiteOptions {
                seeds: Some(seeds),
                ..Default::default()
            },
        )
        .expect("suite builds");
        let alt_jobs = if jobs() > 1 { 1 } else { 2 };
        reproduce(&suite, second.path(), alt_jobs).expect("suite runs");
        let a = metrics_files(first, id.name(), seeds);
        let b = metrics_files(second.path(), id.name(), seeds);
        compared += a.len();
        differ += a.iter().zip(&b).filter(|(x, y)| x != y).count();
    }
    check(
        differ == 0,
        format!("{compared} metrics.json files regenerated; {differ} differ"),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let runs = tempfile::tempdir().expect("tempdir");
    let out = runs.path().to_path_buf();
    type Criterion<'a> = (&'a str, &'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("A1", "acyclicity", Box::new(a1_acyclicity)),
        ("A2", "completeness", Box::new(a2_completeness)),
        ("A3", "sampler complexity", Box::new(a3_complexity)),
        ("A4", "gradient correctness", Box::new(a4_gradients)),
        ("A5", "KL correctness", Box::new(a5_kl)),
        ("A6", "metric oracles", Box::new(a6_metrics)),
        ("A7", "linear recovery", Box::new(|| a7_linear(&out))),
        ("A8", "nonlinear recovery", Box::new(|| a8_nonlinear(&out))),
        ("A9", "scale", Box::new(|| a9_scale(&out))),
        ("A10", "sachs", Box::new(|| a10_sachs(&out))),
        ("A11", "determinism", Box::new(|| a11_determinism(&out))),
    ];
    // A11 compares against the A7 and A8 outputs
    let wanted = |id: &str| {
        filter.is_empty()
            || filter
                .iter()
                .any(|f| f == id || (f == "A11" && (id == "A7" || id == "A8")))
    };

    let mut hard_failures = 0;
    for (id, name, f) in &criteria {
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                verdict: Verdict::Fail,
                detail: format!("panicked: {msg}"),
            }
        });
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                hard_failures += 1;
                "FAIL"
            }
            Verdict::SoftFail => "FAIL (soft)",
            Verdict::NotRun => "NOT RUN",
        };
        println!(
            "{id:<4} {tag:<11} {name}: {} [{:.1} s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        std::process::exit(1);
    }
}
