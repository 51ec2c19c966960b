use std::path::Path;
use std::process::{Command, Output};

fn dagvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagvi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data/er5");
    let run = dir.path().join("runs/er5");
    let o = dagvi(&[
        "gen",
        "--graph",
        "er",
        "--d",
        "5",
        "--edges",
        "5",
        "--sem",
        "linear",
        "--n",
        "300",
        "--n-test",
        "50",
        "--seed",
        "1",
        "--out",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "X_train.csv",
        "X_val.csv",
        "X_test.csv",
        "adjacency.csv",
        "meta.json",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }
    let train_rows = std::fs::read_to_string(data.join("X_train.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(train_rows, 1 + 240);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"max_epochs": 30, "lr": 0.05, "batch_size": 32}"#).unwrap();
    let o = dagvi(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--t",
        "0.3",
        "--max-epochs",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo = std::fs::read_to_string(run.join("train_config.json")).unwrap();
    assert!(
        echo.contains("\"max_epochs\": 20")
            && echo.contains("\"lr\": 0.05")
            && echo.contains("\"batch_size\": 32"),
        "{echo}"
    );
    let traj = std::fs::read_to_string(run.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("epoch,train_elbo,val_elbo,recon,kl_edges,kl_scores\n"));

    let o = dagvi(&["eval", "--run", p(&run), "--samples", "50", "--scores"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    for k in ["auc_roc", "auc_pr", "mse", "M", "seed", "dataset_id"] {
        assert!(metrics.get(k).is_some(), "{k} missing in {metrics}");
    }
    assert_eq!(metrics["M"], 50);
    assert_eq!(
        std::fs::read_to_string(run.join("scores.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    // same run, same seed: identical bytes
    let first = std::fs::read(run.join("metrics.json")).unwrap();
    assert_eq!(
        code(&dagvi(&["eval", "--run", p(&run), "--samples", "50"])),
        0
    );
    assert_eq!(first, std::fs::read(run.join("metrics.json")).unwrap());

    // without ground truth only the MSE is reported
    std::fs::remove_file(data.join("adjacency.csv")).unwrap();
    assert_eq!(
        code(&dagvi(&["eval", "--run", p(&run), "--samples", "20"])),
        0
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.get("auc_roc").is_none() && metrics.get("auc_pr").is_none());
    assert!(metrics["mse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(
        code(&dagvi(&[
            "gen",
            "--graph",
            "er",
            "--d",
            "1",
            "--sem",
            "linear",
            "--out",
            p(&out)
        ])),
        1
    );
    assert_eq!(
        code(&dagvi(&[
            "gen",
            "--graph",
            "tree",
            "--d",
            "4",
            "--sem",
            "linear",
            "--out",
            p(&out)
        ])),
        1
    );
    assert_eq!(code(&dagvi(&["frobnicate"])), 1);
    assert_eq!(code(&dagvi(&["reproduce", "linear-er-d7"])), 1);
    assert_eq!(code(&dagvi(&["reproduce", "sachs", "--out", p(&out)])), 1);
    assert_eq!(
        code(&dagvi(&["bench-sampler", "--dims", "10", "--reps", "5"])),
        1
    );
    assert_eq!(code(&dagvi(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&dagvi(&["eval", "--run", p(&missing)])), 2);
    assert_eq!(
        code(&dagvi(&[
            "train",
            "--data",
            p(&missing),
            "--out",
            p(&dir.path().join("r"))
        ])),
        2
    );
}

#[test]
fn train_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(
        code(&dagvi(&[
            "gen",
            "--graph",
            "sf",
            "--d",
            "4",
            "--sem",
            "linear",
            "--n",
            "100",
            "--n-test",
            "10",
            "--out",
            p(&data)
        ])),
        0
    );
    let o = dagvi(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("r")),
        "--t",
        "0",
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"learning_rate": 0.1}"#).unwrap();
    assert_eq!(
        code(&dagvi(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&dir.path().join("r")),
            "--config",
            p(&cfg)
        ])),
        1
    );
}

#[test]
fn bench_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = dagvi(&[
        "bench-sampler",
        "--dims",
        "8,16",
        "--reps",
        "5",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 2 * 5);
    let summary = std::fs::read_to_string(dir.path().join("bench_summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains(",slope,")).count(), 3);
}

#[test]
fn reproduce_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagvi(&[
        "reproduce",
        "linear-er-d10",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = std::fs::read_to_string(dir.path().join("linear-er-d10/aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "suite,metric,mean,std,runs,complete");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("linear-er-d10,auc_roc,") && lines[1].ends_with(",2,true"));
}
