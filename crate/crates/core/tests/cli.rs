use std::path::Path;
use std::process::{Command, Output};

fn milbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milbench")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = milbench(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 4] = ["--set", "gen.num_features=8", "--set", "data.test_size=300"];

#[test]
fn generate_is_reproducible_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = ok(&["generate", "--out-dir", s(&a), "--seed", "5", "--n-bags", "200"]);
    let out_b = ok(&["generate", "--out-dir", s(&b), "--seed", "5", "--n-bags", "200", "--jobs", "1"]);
    let sha = |o: &str| o.lines().find(|l| l.starts_with("sha256")).unwrap().to_string();
    assert_eq!(sha(&out_a), sha(&out_b));
    assert!(out_a.contains("N = 200") && out_a.contains("positive fraction"));
    assert_eq!(std::fs::read(a.join("dataset.smb")).unwrap(), std::fs::read(b.join("dataset.smb")).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("dataset.smb.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_bags"], 200);
    assert_eq!(manifest["no_signal"], false);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"]["gen"], 5);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn scoring_a_signal_free_dataset_gives_chance() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["generate", "--out-dir", s(dir.path()), "--n-bags", "300", "--set", "gen.shift=0", "--set", "gen.num_features=4"]);
    assert!(out.contains("no signal"));
    let manifest = std::fs::read_to_string(dir.path().join("dataset.smb.json")).unwrap();
    assert!(manifest.contains("\"no_signal\": true"));
    let out = ok(&["bayes-score", s(&dir.path().join("dataset.smb")), "--out-dir", s(dir.path())]);
    let line = out.lines().find(|l| l.starts_with("Bayes AUROC")).unwrap();
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!((value - 0.5).abs() <= 0.05, "{line}");
    let csv = std::fs::read_to_string(dir.path().join("bayes_scores.csv")).unwrap();
    assert!(csv.starts_with("bag_id,label,score\n"));
    assert_eq!(csv.lines().count(), 301);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = milbench(&["bayes-score", s(&dir.path().join("nope.smb")), "--out-dir", s(dir.path())]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.smb"));

    let unknown = milbench(&["train", "--pooling", "median", "--out-dir", s(dir.path())]);
    assert_eq!(unknown.status.code(), Some(2));
    let err = String::from_utf8_lossy(&unknown.stderr);
    assert!(err.contains("median") && err.contains("Usage"), "{err}");

    let bad_kind = milbench(&["run", "--set", "kind=\"sweep-everything\"", "--out-dir", s(dir.path())]);
    assert_eq!(bad_kind.status.code(), Some(2));
    let no_kind = milbench(&["run", "--out-dir", s(dir.path())]);
    assert_eq!(no_kind.status.code(), Some(2));
    let empty_grid = milbench(&["sweep-n", "--set", "sweep.sizes=[]", "--out-dir", s(dir.path())]);
    assert_eq!(empty_grid.status.code(), Some(2));
}

#[test]
fn sweep_n_row_structure_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        r#"
kind = "sweep-n"
[gen]
num_features = 8
[data]
test_size = 300
[train]
learning_rates = [0.1]
weight_decays = [0.0]
max_epochs = 20
patience = 10
[sweep]
sizes = [100, 400]
models = ["trained:max", "trained:mean"]
"#,
    )
    .unwrap();
    let first = dir.path().join("first");
    ok(&["run", "--config", s(&cfg), "--out-dir", s(&first)]);
    let text = std::fs::read_to_string(first.join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,order,pooling,N,delta,seed,split,auroc,epochs_trained,lr,weight_decay");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    for n in ["100", "400"] {
        let cell: Vec<_> = rows.iter().filter(|r| r.split(',').nth(3) == Some(n)).collect();
        assert_eq!(cell.len(), 5);
        assert_eq!(cell.iter().filter(|r| r.starts_with("bayes,")).count(), 1);
    }

    // the captured config regenerates the table bit for bit
    let second = dir.path().join("second");
    ok(&["run", "--config", s(&first.join("config.toml")), "--out-dir", s(&second)]);
    assert_eq!(std::fs::read(second.join("results.csv")).unwrap(), text.as_bytes());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "sweep-n");
    assert!(meta["notes"][0].as_str().unwrap().contains("test set"));
}

#[test]
fn bootstrap_writes_interval_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bootstrap", "--out-dir", s(dir.path()), "--set", "bootstrap.n_resamples=200"];
    args.extend(SMALL);
    let out = ok(&args);
    assert!(out.contains("95% CI"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bootstrap.json")).unwrap()).unwrap();
    for key in ["mean_diff", "ci_low", "ci_high", "n_resamples", "seed", "config_sha256"] {
        assert!(json.get(key).is_some(), "{key} missing");
    }
    assert!(json["ci_low"].as_f64().unwrap() <= json["ci_high"].as_f64().unwrap());
    assert_eq!(json["b"], "handcrafted:context-conv");
}

#[test]
fn handcrafted_and_train_write_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["handcrafted", "--out-dir", s(dir.path())];
    args.extend(SMALL);
    let out = ok(&args);
    assert!(out.contains("handcrafted:context-conv"));
    assert!(dir.path().join("model_context-conv.json").exists());

    let t = dir.path().join("t");
    let mut args = vec![
        "train", "--pooling", "smooth_max", "--out-dir", s(&t), "--set", "data.n_bags=200", "--set",
        "train.learning_rates=[0.1]", "--set", "train.weight_decays=[0.0]", "--set", "train.max_epochs=15",
    ];
    args.extend(SMALL);
    ok(&args);
    for f in ["model_prediction_smooth_max.json", "train_log_embedding_smooth_max.csv", "results.csv", "run.json"] {
        assert!(t.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(t.join("train_log_prediction_smooth_max.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_auroc"));
}
