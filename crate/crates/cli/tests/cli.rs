use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn loctag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loctag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a planted dataset into `dir` and returns (features, tags).
fn synth(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let o = loctag(&["synth", "--n", &n.to_string(), "--d", "8", "--m", "12", "--out", s(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir.join("features.csv"), dir.join("tags.csv"))
}

#[test]
fn synth_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 60);
    for f in ["features.csv", "tags.csv", "planted_scores.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn complete_then_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 300);
    let run = dir.path().join("run");
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&run),
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "scores.csv",
        "checkpoint.bin",
        "trace.csv",
        "config.json",
        "holdout.csv",
    ] {
        assert!(run.join(name).is_file(), "{name}");
    }

    let o = loctag(&["evaluate", "--run", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let map = report["map"].as_f64().unwrap();
    assert!(map >= 0.85, "MAP {map}");
    let pr = std::fs::read_to_string(run.join("pr_curve.csv")).unwrap();
    assert!(pr.starts_with("threshold,precision,recall\n"));
}

#[test]
fn rerun_from_resolved_config_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 120);
    let first = dir.path().join("first");
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&first),
        "--kappa",
        "4",
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let second = dir.path().join("second");
    let o = loctag(&[
        "complete",
        "--config",
        s(&first.join("config.json")),
        "--out",
        s(&second),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["scores.csv", "checkpoint.bin", "holdout.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(second.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["kappa"], 4);
    assert_eq!(cfg["holdout-frac"], 0.4);
    assert_eq!(cfg["seed"], 42);
}

#[test]
fn oracle_scores_evaluate_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 80);
    let run = dir.path().join("run");
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&run),
        "--max-iters",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    // the planted scores carry the sign of every tag
    let oracle = dir.path().join("planted_scores.csv");
    let out = dir.path().join("eval");
    let o = loctag(&["evaluate", "--run", s(&run), "--scores", s(&oracle), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["map"].as_f64().unwrap(), 1.0);
}

#[test]
fn evaluate_rederives_the_holdout_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 80);
    let run = dir.path().join("run");
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&run),
        "--max-iters",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = loctag(&["evaluate", "--run", s(&run)]);
    assert!(o.status.success());
    let recorded = std::fs::read_to_string(run.join("report.json")).unwrap();

    std::fs::remove_file(run.join("holdout.csv")).unwrap();
    let o = loctag(&["evaluate", "--run", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(run.join("report.json")).unwrap(), recorded);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 100);
    let out = dir.path().join("sweep");
    let o = loctag(&[
        "sweep",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&out),
        "--param",
        "alpha",
        "--values",
        "0.5,0.5,2",
        "--max-iters",
        "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "value,map");
    assert_eq!(rows.len(), 4);
    // duplicated values give identical rows
    assert_eq!(rows[1], rows[2]);
}

#[test]
fn knn_dump_writes_kappa_rows_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let (f, _) = synth(dir.path(), 40);
    let out = dir.path().join("graph.csv");
    let o = loctag(&["knn-dump", "--features", s(&f), "--kappa", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 40 * 3);
}

#[test]
fn missing_tags_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (f, _) = synth(dir.path(), 40);
    let missing = dir.path().join("no_such_tags.csv");
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&missing),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 40);
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&dir.path().join("run")),
        "--holdout-frac",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&dir.path().join("run")),
        "--step",
        "sideways",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (f, t) = synth(dir.path(), 60);
    let o = loctag(&[
        "complete",
        "--features",
        s(&f),
        "--tags",
        s(&t),
        "--out",
        s(&dir.path().join("run")),
        "--step",
        "fixed-eta",
        "--eta",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
