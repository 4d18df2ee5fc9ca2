use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/models")
}

fn pdmdp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdmdp"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn solve_writes_closed_form_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdmdp(
        dir.path(),
        &["solve", "--model", &model("ctmdp2.json"), "--policy-out", "policy.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("values.csv"));
    let v: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!((v[0] - 2.0).abs() < 1e-6);
    assert!((v[1] - 1.0).abs() < 1e-12);
    let policy = csv_rows(&dir.path().join("policy.csv"));
    assert_eq!(policy[0], ["s1", "0", "a"]);
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(manifest.contains("seed,42"));
}

#[test]
fn divergent_model_reports_inf() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdmdp(dir.path(), &["solve", "--model", &model("ctmdp2_divergent.json")]);
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("values.csv"));
    assert_eq!(rows[0][2], "INF");
    assert_eq!(rows[1][2], "1");
}

#[test]
fn example_probe_gap_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdmdp(dir.path(), &["dtmdp-probe", "--example-a1"]);
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("probe.csv"));
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
        assert_eq!(r[3].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = pdmdp(
            dir.path(),
            &[
                "--seed",
                "7",
                "--threads",
                threads,
                "simulate",
                "--model",
                &model("driftline.json"),
                "--policy",
                &model("driftline_switch.policy.json"),
                "--x0",
                "line:0",
                "--paths",
                "2000",
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join("trajectories.csv")).unwrap()
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn equivalence_runs_and_reports_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdmdp(
        dir.path(),
        &[
            "equivalence",
            "--model",
            &model("ctmdp2.json"),
            "--policy",
            &model("ctmdp2_switch.policy.json"),
            "--x0",
            "s1:0",
            "--paths",
            "5000",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("equivalence.csv"));
    assert!(rows.iter().any(|r| r[1] == "sojourn_ks"));
    assert!(rows.iter().any(|r| r[1] == "mark_chi2"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pdmdp(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        pdmdp(dir.path(), &["validate", "--model", "does-not-exist.json"]).status.code(),
        Some(1)
    );
    let neg = dir.path().join("neg.json");
    fs::write(
        &neg,
        r#"{"modes": ["s", "t"], "actions": ["a"],
            "rates": [{"from_mode": "s", "cell_index": 0, "action": "a", "to_mode": "t", "rate": -1, "post_jump": "keep"}]}"#,
    )
    .unwrap();
    let out = pdmdp(dir.path(), &["validate", "--model", neg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("negative rate"));
    let ok = pdmdp(dir.path(), &["validate", "--model", &model("driftline.json")]);
    assert_eq!(ok.status.code(), Some(0));
}
