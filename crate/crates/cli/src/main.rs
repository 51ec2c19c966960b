use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dagvi::dag_sampler::{bench_sampling, write_bench_csv, SamplerKind};
use dagvi::eval::MseMode;
use dagvi::harness::{self, EvalOptions, HarnessError, SuiteId, SuiteOptions};
use dagvi::sem::{self, DatasetSpec, GraphFamily, MechanismKind};
use dagvi::vi::{ModelKind, PriorSpec, TrainConfig, ViError};

#[derive(Parser, Debug)]
#[command(
    name = "dagvi",
    version,
    about = "Variational causal structure learning with sampled DAGs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory
    Gen(GenArgs),
    /// Train on a dataset directory and write a run directory
    Train(TrainArgs),
    /// Compute AUC-ROC, AUC-PR and held-out MSE for a run
    Eval(EvalArgs),
    /// Time the DAG sampler against permutation baselines
    BenchSampler(BenchArgs),
    /// Run a named suite over its seeds and aggregate the metrics
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// er or sf
    #[arg(long)]
    graph: GraphFamily,
    #[arg(long)]
    d: usize,
    /// Expected number of edges [default: d]
    #[arg(long)]
    edges: Option<f64>,
    /// linear or gp (nonlinear)
    #[arg(long)]
    sem: MechanismKind,
    /// Training plus validation rows
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Run directory to create
    #[arg(long)]
    out: PathBuf,
    /// Flat JSON config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    /// Topological temperature
    #[arg(long)]
    t: Option<f64>,
    /// Gumbel temperature
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the edge KL term
    #[arg(long)]
    kl_edge_weight: Option<f64>,
    /// Weight of the score KL term
    #[arg(long)]
    kl_score_weight: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    val_period: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// linear or mlp
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    val_samples: Option<usize>,
    /// Stop after this many seconds
    #[arg(long)]
    time_budget_secs: Option<f64>,
    #[arg(long)]
    edge_prior: Option<f64>,
    #[arg(long)]
    score_scale: Option<f64>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<(TrainConfig, PriorSpec)> {
        let (mut c, mut p) = match &self.config {
            Some(path) => harness::load_flat_config(path)?,
            None => (TrainConfig::default(), PriorSpec::default()),
        };
        macro_rules! set {
            ($dst:expr, $($f:ident),*) => { $( if let Some(v) = self.$f { $dst.$f = v; } )* };
        }
        set!(
            c,
            lr,
            t,
            tau,
            kl_edge_weight,
            kl_score_weight,
            batch_size,
            max_epochs,
            val_period,
            patience,
            weight_decay,
            seed,
            hidden,
            train_samples,
            val_samples
        );
        if let Some(m) = self.model {
            c.model = m;
        }
        if self.time_budget_secs.is_some() {
            c.time_budget_secs = self.time_budget_secs;
        }
        if let Some(v) = self.edge_prior {
            p.edge_prob = v;
        }
        if let Some(v) = self.score_scale {
            p.score_scale = v;
        }
        c.validate()?;
        p.validate()?;
        Ok((c, p))
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory [default: the one recorded by `train`]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Posterior draws M
    #[arg(long, default_value_t = dagvi::eval::DEFAULT_SAMPLES)]
    samples: usize,
    /// Evaluation seed [default: the training seed]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "sampled")]
    mse_mode: MseArg,
    /// Also write scores.csv
    #[arg(long)]
    scores: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MseArg {
    Sampled,
    ModeGraph,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-repetition timings; a `_summary` file is written next to it
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    suite: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Seeds run in parallel
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Number of seeds [default: 10]
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    sachs_data: Option<PathBuf>,
    #[arg(long)]
    sachs_edges: Option<PathBuf>,
    /// Per-run wall-clock budget in seconds
    #[arg(long)]
    time_budget_secs: Option<f64>,
}

/// A bad flag value found after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = DatasetSpec {
        d: a.d,
        graph: a.graph,
        expected_edges: a.edges,
        mechanism: a.sem,
        n: a.n,
        n_test: a.n_test,
        val_fraction: a.val_fraction,
        seed: a.seed,
    };
    let (dataset, _) = sem::generate(&spec)?;
    sem::save_dataset(&dataset, &a.out)?;
    let edges = dataset.truth.as_ref().map(|g| g.edge_count()).unwrap_or(0);
    println!(
        "wrote {} ({} train, {} val, {} test rows, {edges} edges)",
        a.out.display(),
        dataset.splits.train.len(),
        dataset.splits.val.len(),
        dataset.splits.test.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (config, prior) = a.resolve()?;
    let m = harness::train_run(&a.data, &a.out, &config, &prior)?;
    println!(
        "wrote {} (stop: {:?}, {:.1}s)",
        a.out.display(),
        m.stop_reason,
        m.finished_unix - m.started_unix
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.samples == 0 {
        bail!(Usage("--samples must be at least 1".into()));
    }
    let opts = EvalOptions {
        samples: a.samples,
        seed: a.seed,
        mse_mode: match a.mse_mode {
            MseArg::Sampled => MseMode::Sampled,
            MseArg::ModeGraph => MseMode::ModeGraph,
        },
        dataset_dir: a.data,
        dataset_id: None,
        write_scores: a.scores,
    };
    let report = harness::eval_run(&a.run, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bench".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.dims.len() < 2 || a.reps < 5 || a.dims.iter().any(|&d| d < 2) {
        bail!(Usage(
            "need at least two dims (each ≥ 2) and --reps ≥ 5".into()
        ));
    }
    let report = bench_sampling(&a.dims, a.reps, &SamplerKind::ALL, a.seed)?;
    let file = std::fs::File::create(&a.out).with_context(|| a.out.display().to_string())?;
    write_bench_csv(&report, std::io::BufWriter::new(file))?;

    let mut text = String::from("sampler,statistic,d,value\n");
    for s in &report.summary {
        text.push_str(&format!(
            "{},median,{},{}\n",
            s.sampler.name(),
            s.d,
            s.median
        ));
        text.push_str(&format!("{},iqr,{},{}\n", s.sampler.name(), s.d, s.iqr));
    }
    for (kind, slope) in &report.slopes {
        text.push_str(&format!("{},slope,,{}\n", kind.name(), slope));
        println!("{:<16} log-log slope {slope:.3}", kind.name());
    }
    let path = summary_path(&a.out);
    std::fs::write(&path, text).with_context(|| path.display().to_string())?;
    println!("wrote {} and {}", a.out.display(), path.display());
    Ok(())
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<bool> {
    let id: SuiteId = a.suite.parse()?;
    let sachs = match (a.sachs_data, a.sachs_edges) {
        (Some(d), Some(e)) => Some((d, e)),
        (None, None) => None,
        _ => bail!(Usage("--sachs-data and --sachs-edges go together".into())),
    };
    let opts = SuiteOptions {
        seeds: a.seeds,
        sachs,
        time_budget_secs: a.time_budget_secs,
    };
    let suite = harness::build_suite(id, &opts)?;
    let outcome = harness::reproduce(&suite, &a.out, a.jobs)?;
    for r in &outcome.rows {
        println!(
            "{:<18} {:<8} {:.4} ± {:.4} (n = {})",
            r.suite, r.metric, r.mean, r.std, r.runs
        );
    }
    for (seed, e) in &outcome.failures {
        eprintln!("seed {seed} failed: {e}");
    }
    println!(
        "wrote {}",
        a.out.join(id.name()).join("aggregate.csv").display()
    );
    Ok(outcome.is_complete())
}

fn is_usage(e: &anyhow::Error) -> bool {
    if e.is::<Usage>() {
        return true;
    }
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return h.is_usage();
    }
    matches!(e.downcast_ref::<ViError>(), Some(ViError::Config(_)))
        || matches!(
            e.downcast_ref::<sem::SemError>(),
            Some(sem::SemError::InvalidParameter(_))
        )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BenchSampler(a) => cmd_bench(a),
        Command::Reproduce(a) => match cmd_reproduce(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: some seeds failed; the aggregate is incomplete");
                return ExitCode::from(2);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
