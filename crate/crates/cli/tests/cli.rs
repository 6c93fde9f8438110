use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn koopflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = koopflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic dataset and a model trained on it, shared across tests.
struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("syn.csv");
        ok(&["synthetic", "--out", s(&data), "--seed", "7"]);
        assert!(dir.path().join("syn.truth.json").exists());
        let config = dir.path().join("run.json");
        std::fs::write(
            &config,
            r#"{"dataset": "syn.csv", "output_dir": "out", "resample": null, "equilibrium": [0, 0],
                "train": {"p_bar": 4, "flow": {"layers": 4, "hidden": [16], "final_tanh": false},
                          "epochs": 400, "learning_rate": 0.003}}"#,
        )
        .unwrap();
        ok(&["train", "--quiet", "--config", s(&config)]);
        let out = dir.path().join("out");
        Trained { data, out, _dir: dir }
    })
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn train_writes_outputs_and_eval_scores_the_fit() {
    let t = trained();
    for f in ["model.json", "history.csv", "manifest.json"] {
        assert!(t.out.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["mode"], "imitation");
    assert_eq!(manifest["dataset"]["n_demos"], 3);
    assert!(manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let history = std::fs::read_to_string(t.out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 401);

    let model = t.out.join("model.json");
    let report = ok(&["eval", "--model", s(&model), "--dataset", s(&t.data)]);
    let rows = rows(&report);
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r[2] == "rmse") {
        let rmse: f64 = r[3].parse().unwrap();
        assert!(rmse < 0.05, "demo {} rmse {rmse}", r[1]);
    }
    for r in &rows {
        let n: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&n));
    }
}

#[test]
fn eval_is_deterministic() {
    let t = trained();
    let model = t.out.join("model.json");
    let args = ["eval", "--model", s(&model), "--dataset", s(&t.data)];
    assert_eq!(ok(&args), ok(&args));
}

#[test]
fn rollouts_settle_at_the_equilibrium() {
    let t = trained();
    let model = t.out.join("model.json");
    for start in [["--from", "0.7,-0.4"], ["--demo", "1"]] {
        let mut args = vec!["simulate", "--model", s(&model), "--samples", "50"];
        args.extend(start);
        args.extend(["--dataset", s(&t.data)]);
        let rows = rows(&ok(&args));
        assert_eq!(rows.len(), 50);
        assert_eq!(rows[0][4], "1");
        assert_eq!(rows[49][4], "0");
        let last: Vec<f64> = rows[49][2..4].iter().map(|v| v.parse().unwrap()).collect();
        assert!(last.iter().all(|v| v.abs() < 1e-6), "{last:?}");
    }
}

#[test]
fn streamlines_cover_the_grid() {
    let t = trained();
    let csv = ok(&["streamlines", "--model", s(&t.out.join("model.json")), "--grid", "5"]);
    assert!(csv.starts_with("x1,x2,dx1,dx2\n"));
    let rows = rows(&csv);
    assert_eq!(rows.len(), 25);
    assert_eq!(rows[0][..2], ["-1", "-1"]);
    assert!(rows.iter().flatten().all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(koopflow(&["train", "--config", s(&missing)]).status.code(), Some(4));
    assert_eq!(koopflow(&["eval", "--model", s(&missing), "--dataset", "x.csv"]).status.code(), Some(4));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataset": "a.csv", "output_dir": "o", "train": {"epochs": 0}}"#).unwrap();
    assert_eq!(koopflow(&["train", "--config", s(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, r#"{"dataset": "a.csv", "output_dir": "o", "typo": 1}"#).unwrap();
    assert_eq!(koopflow(&["train", "--config", s(&bad)]).status.code(), Some(2));

    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "demo,t,y1\n0,0,1\n").unwrap();
    std::fs::write(&bad, r#"{"dataset": "bad.csv", "output_dir": "o"}"#).unwrap();
    assert_eq!(koopflow(&["train", "--config", s(&bad)]).status.code(), Some(2));

    assert_eq!(koopflow(&["simulate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_numeric_code_and_keeps_history() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"dataset": "{}", "output_dir": "out", "resample": null,
                 "train": {{"p_bar": 2, "flow": {{"layers": 2, "hidden": [4]}}, "epochs": 5, "divergence_threshold": 1e-9}}}}"#,
            s(&t.data)
        ),
    )
    .unwrap();
    let out = koopflow(&["train", "--quiet", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn schema_command_prints_valid_json() {
    let schema: serde_json::Value = serde_json::from_str(&ok(&["schema"])).unwrap();
    assert_eq!(schema["required"], serde_json::json!(["dataset", "output_dir"]));
}

#[test]
fn validation_mode_reports_on_held_out_demos() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seven.csv");
    ok(&["synthetic", "--out", s(&data), "--trajectories", "7", "--samples", "100", "--flavor", "linear"]);
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"dataset": "seven.csv", "output_dir": "out", "mode": "validation", "resample": 50,
            "train": {"p_bar": 2, "flow": {"layers": 2, "hidden": [4]}, "epochs": 3}}"#,
    )
    .unwrap();
    ok(&["train", "--quiet", "--config", s(&config)]);
    let report = std::fs::read_to_string(dir.path().join("out/validation_report.csv")).unwrap();
    let rows = rows(&report);
    assert_eq!(rows.len(), 9);
    let demos: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(demos.into_iter().collect::<Vec<_>>(), ["4", "5", "6"]);
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("validation_report.csv"));
}
