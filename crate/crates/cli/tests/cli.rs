use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn chemgraph(args: &[&str]) -> Output {
    chemgraph_env(args, None)
}

fn chemgraph_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chemgraph"));
    cmd.args(args).env_remove("CHEMGRAPH_SEED");
    if let Some(s) = seed {
        cmd.env("CHEMGRAPH_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small synthetic dataset plus a GraphNets config trimmed to `epochs`.
fn synth(dir: &Path, graphs: usize, epochs: usize) -> PathBuf {
    let out = chemgraph(&["synth", "--out", p(dir), "--graphs", &graphs.to_string()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cfg_path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["epochs"] = json!(epochs);
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    cfg_path
}

fn write_config(dir: &Path, name: &str, cfg: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn metric(metrics: &str, name: &str) -> f64 {
    metrics
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no {name} in metrics"))
        .parse()
        .unwrap()
}

#[test]
fn build_g6p_prints_caption_dimensions() {
    let out = chemgraph(&["build", &fixture("g6p.json"), "--builder", "molecule"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("N: 16\n"));
    assert!(text.contains("M: 16\n"));
    assert!(text.contains("X: 16x6, E: 16x3, A: 16x16, U: 1x1"));
    assert!(text.contains("validation: ok"));
}

#[test]
fn build_flags_select_variants() {
    let out = chemgraph(&["build", &fixture("g6p.json"), "--builder", "molecule", "--explicit-h"]);
    assert!(stdout(&out).contains("X: 29x4, E: 29x3"));
    let out = chemgraph(&["build", &fixture("1l2y.json"), "--builder", "protein", "--hbonds"]);
    assert!(stdout(&out).contains("X: 20x13, E: 32x3"));
    let out = chemgraph(&["build", &fixture("glycolysis11.json"), "--builder", "reaction", "--reversible"]);
    assert!(stdout(&out).contains("X: 11x6, E: 19x3"), "{}", stdout(&out));
}

#[test]
fn build_tequila_prints_caption_dimensions() {
    let out = chemgraph(&["build", &fixture("tequila8.json"), "--builder", "process"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("X: 8x3, E: 10x2, A: 8x8, U: 1x3"));
}

#[test]
fn build_dump_writes_graph_tensor_json() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("methane.tensor.json");
    let out = chemgraph(&["build", &fixture("methane.json"), "--builder", "molecule", "--dump", p(&dump)]);
    assert_eq!(out.status.code(), Some(0));
    let g: chemgraph::GraphTensor = serde_json::from_str(&fs::read_to_string(dump).unwrap()).unwrap();
    assert_eq!(g.shape_summary(), "X: 5x3, E: 4x2, A: 5x5, U: 1x1");
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"directed\": false,\n  \"nodes\": [\n").unwrap();
    let out = chemgraph(&["build", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn invalid_graph_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("dangling.json");
    let g = json!({
        "directed": false,
        "nodes": [{"id": "a", "element": "C", "h_count": 4}],
        "edges": [{"src": "a", "dst": "b", "order": "single", "cyclic": false}],
        "global": {}
    });
    fs::write(&bad, g.to_string()).unwrap();
    let out = chemgraph(&["build", p(&bad), "--builder", "molecule"]);
    assert_eq!(out.status.code(), Some(3), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("validation: failed"));
}

#[test]
fn unknown_builder_is_a_usage_error() {
    let out = chemgraph(&["build", &fixture("g6p.json"), "--builder", "crystal"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_fixtures_passes_on_clean_checkout() {
    let out = chemgraph(&["verify-fixtures"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    let checks: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert_eq!(checks.len(), 10);
    for line in checks {
        assert!(line.starts_with("PASS "), "{line}");
        // Every line quotes the published wording it checks.
        assert!(line.ends_with("\"]") && line.contains(" [\""), "{line}");
    }
}

fn copy_fixtures(dir: &Path) {
    for (name, text) in chemgraph::fixtures::FILES {
        fs::write(dir.join(name), text).unwrap();
    }
}

#[test]
fn verify_fixtures_names_edited_g6p() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixtures(dir.path());
    // Drop one node (and its bonds) so G6P has 15 atoms.
    let path = dir.path().join("g6p.json");
    let mut g: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let removed = g["nodes"].as_array_mut().unwrap().pop().unwrap()["id"].clone();
    g["edges"].as_array_mut().unwrap().retain(|e| e["src"] != removed && e["dst"] != removed);
    fs::write(&path, serde_json::to_string_pretty(&g).unwrap()).unwrap();

    let out = chemgraph(&["verify-fixtures", "--dir", p(dir.path())]);
    assert_ne!(out.status.code(), Some(0));
    let text = stdout(&out);
    let fails: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(!fails.is_empty());
    assert!(fails.iter().all(|l| l.starts_with("FAIL G6P")), "{fails:?}");
    assert!(fails.iter().any(|l| l.contains("X: 15x")), "{fails:?}");
}

#[test]
fn verify_fixtures_reports_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixtures(dir.path());
    fs::remove_file(dir.path().join("tequila8.json")).unwrap();
    let out = chemgraph(&["verify-fixtures", "--dir", p(dir.path())]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("tequila8.json"), "{}", stderr(&out));
}

#[test]
fn featurize_emits_named_features() {
    let out = chemgraph(&["featurize", &fixture("water.json"), "--builder", "molecule", "--fingerprint", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("feature,value\n"));
    assert!(text.contains("mass:sum,18.015\n"), "{text}");
    assert!(text.contains("num_nodes,3\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("fp")).count(), 8);
}

#[test]
fn synth_writes_dataset_and_config() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 20, 5);
    let train = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let test = fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert!(train.starts_with("graph_path,target\n"));
    assert_eq!(train.lines().count() - 1 + test.lines().count() - 1, 20);
    assert_eq!(fs::read_dir(dir.path().join("graphs")).unwrap().count(), 20);
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 30, 12);
    let run = dir.path().join("run");
    let out = chemgraph(&["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    let epochs: Vec<&str> = lines[1..].iter().copied().filter(|l| !l.starts_with("final_")).collect();
    assert_eq!(epochs.len(), 12);
    for (i, l) in epochs.iter().enumerate() {
        let (e, loss) = l.split_once(',').unwrap();
        assert_eq!(e.parse::<usize>().unwrap(), i + 1);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    for name in ["final_train_mse", "final_train_r2", "final_test_mse", "final_test_r2"] {
        metric(&metrics, name);
    }
    assert!(run.join("checkpoint.json").exists());
}

#[test]
fn train_is_deterministic_and_seed_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 30, 8);
    let read = |run: &Path| {
        (
            fs::read_to_string(run.join("metrics.csv")).unwrap(),
            fs::read_to_string(run.join("checkpoint.json")).unwrap(),
        )
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(chemgraph(&["train", p(&cfg), "--out", p(&a)]).status.code(), Some(0));
    assert_eq!(chemgraph(&["train", p(&cfg), "--out", p(&b)]).status.code(), Some(0));
    assert_eq!(read(&a), read(&b));

    let out = chemgraph_env(&["train", p(&cfg), "--out", p(&c)], Some("99"));
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("seed 99"));
    assert_ne!(read(&a).0, read(&c).0);

    let out = chemgraph_env(&["train", p(&cfg), "--out", p(&c)], Some("not-a-seed"));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn predict_writes_one_row_per_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 20, 3);
    let run = dir.path().join("run");
    assert_eq!(chemgraph(&["train", p(&cfg), "--out", p(&run)]).status.code(), Some(0));
    let g0 = dir.path().join("graphs/g000.json");
    let g1 = dir.path().join("graphs/g001.json");
    let preds = dir.path().join("preds.csv");
    let ckpt = run.join("checkpoint.json");
    let out = chemgraph(&["predict", "--checkpoint", p(&ckpt), p(&g0), p(&g1), "--out", p(&preds)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(preds).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "graph_path,row,prediction");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with(&format!("{},0,", p(&g0))));
}

#[test]
fn predict_with_width_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 20, 2);
    let run = dir.path().join("run");
    assert_eq!(chemgraph(&["train", p(&cfg), "--out", p(&run)]).status.code(), Some(0));

    // Same graph with an extra node column: Fn grows from 3 to 4.
    let src = dir.path().join("graphs/g000.json");
    let mut g: Value = serde_json::from_str(&fs::read_to_string(&src).unwrap()).unwrap();
    for n in g["nodes"].as_array_mut().unwrap() {
        n["extra"] = json!(0.5);
    }
    g["schema"]["node"].as_array_mut().unwrap().push(json!({"name": "extra", "kind": "continuous"}));
    let wide = dir.path().join("wide.json");
    fs::write(&wide, g.to_string()).unwrap();

    let out = chemgraph(&["predict", "--checkpoint", p(&run.join("checkpoint.json")), p(&wide)]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("width"), "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    fs::write(&ckpt, "{\"format\": \"chemgraph-model\", \"version\": 1}").unwrap();
    let out = chemgraph(&["predict", "--checkpoint", p(&ckpt), &fixture("methane.json")]);
    assert_eq!(out.status.code(), Some(4));
    fs::write(&ckpt, "{\"format\": ").unwrap();
    let out = chemgraph(&["predict", "--checkpoint", p(&ckpt), &fixture("methane.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10, 1);
    let base = json!({"model": "graphnets", "seed": 1, "epochs": 3, "lr": 0.01, "builder": "schema", "train": "train.csv"});

    let mut no_seed = base.clone();
    no_seed.as_object_mut().unwrap().remove("seed");
    let mut bad_lr = base.clone();
    bad_lr["lr"] = json!(-0.1);
    let mut no_epochs = base.clone();
    no_epochs.as_object_mut().unwrap().remove("epochs");
    let mut unknown = base.clone();
    unknown["learning_rate"] = json!(0.1);
    let mut node_without_column = base.clone();
    node_without_column["task"] = json!("node");

    for (name, cfg) in [
        ("no_seed", no_seed),
        ("bad_lr", bad_lr),
        ("no_epochs", no_epochs),
        ("unknown", unknown),
        ("node_without_column", node_without_column),
    ] {
        let path = write_config(dir.path(), &format!("{name}.json"), cfg);
        let out = chemgraph(&["train", p(&path), "--out", p(&dir.path().join(name))]);
        assert_eq!(out.status.code(), Some(4), "{name}: {}", stderr(&out));
    }
}

#[test]
fn linreg_recovers_linear_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = chemgraph(&["synth", "--out", p(dir.path()), "--graphs", "60", "--target", "linear", "--noise", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = write_config(
        dir.path(),
        "linreg.json",
        json!({"model": "linreg", "seed": 1, "builder": "schema", "train": "train.csv", "test": "test.csv"}),
    );
    let run = dir.path().join("run");
    let out = chemgraph(&["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1).unwrap().split(',').next().unwrap(), "final_train_mse");
    assert!(metric(&metrics, "final_test_r2") >= 0.99);
}

#[test]
fn gp_and_mlp_train_on_global_features() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 1);
    for (name, cfg) in [
        ("gp", json!({"model": "gp", "seed": 1, "builder": "schema", "train": "train.csv", "test": "test.csv"})),
        (
            "mlp",
            json!({"model": "mlp", "seed": 1, "epochs": 50, "lr": 0.01, "hidden": [8], "builder": "schema", "train": "train.csv"}),
        ),
    ] {
        let path = write_config(dir.path(), &format!("{name}.json"), cfg);
        let run = dir.path().join(name);
        let out = chemgraph(&["train", p(&path), "--out", p(&run)]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", stderr(&out));
        let ckpt = run.join("checkpoint.json");
        let out = chemgraph(&["predict", "--checkpoint", p(&ckpt), p(&dir.path().join("graphs/g000.json"))]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", stderr(&out));
        assert_eq!(stdout(&out).lines().count(), 2);
    }
}

#[test]
fn node_task_uses_target_column() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 20, 1);
    // element=O = 1 - element=C - element=N, so a linear node model is exact.
    let cfg = write_config(
        dir.path(),
        "node.json",
        json!({"model": "linreg", "task": "node", "target_column": "element=O", "seed": 1,
               "builder": "schema", "train": "train.csv", "test": "test.csv"}),
    );
    let run = dir.path().join("run");
    let out = chemgraph(&["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metric(&metrics, "final_test_mse") < 1e-12, "{metrics}");

    let g0 = dir.path().join("graphs/g000.json");
    let out = chemgraph(&["predict", "--checkpoint", p(&run.join("checkpoint.json")), p(&g0)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let g: Value = serde_json::from_str(&fs::read_to_string(&g0).unwrap()).unwrap();
    assert_eq!(stdout(&out).lines().count() - 1, g["nodes"].as_array().unwrap().len());

    let bad = write_config(
        dir.path(),
        "bad.json",
        json!({"model": "linreg", "task": "node", "target_column": "charge", "seed": 1,
               "builder": "schema", "train": "train.csv"}),
    );
    let out = chemgraph(&["train", p(&bad), "--out", p(&dir.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn edge_task_trains_graphnets() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10, 1);
    let cfg = write_config(
        dir.path(),
        "edge.json",
        json!({"model": "graphnets", "task": "edge", "target_column": "bond", "seed": 2, "epochs": 4, "lr": 0.01,
               "latent": {"node": 4, "edge": 4, "global": 4}, "builder": "schema", "train": "train.csv"}),
    );
    let run = dir.path().join("run");
    let out = chemgraph(&["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // Bond targets are all 1.0, so R² is undefined.
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.contains("final_train_r2,nan"), "{metrics}");
}

#[test]
fn bench_prints_four_rows_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = chemgraph(&["bench", "--csv", p(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS gnn beats mlp"));
    let table = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,mse,r2");
    let models: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["linreg", "gp", "mlp", "gnn"]);
}
