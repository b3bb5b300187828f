use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bobw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bobw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn shipped_configs_validate() {
    for name in ["stochastic.json", "adversarial.json", "iid_known_bandit.json"] {
        let path = configs().join(name);
        let out = bobw(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with("ok: layers [1, 2, 1]"));
    }
}

#[test]
fn run_writes_outputs_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let path = configs().join("stochastic.json");
    let out = bobw(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--reps",
        "2",
        "--seed",
        "9",
        "--audit",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("reg_pistar"));
    assert!(text.contains("audit: optimism violations 0"));
    for f in [
        "config.json",
        "episodes.csv",
        "curve.csv",
        "summary.csv",
        "aggregate.csv",
        "epochs_rep0.csv",
        "epochs_rep1.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn runs_are_reproducible() {
    let path = configs().join("adversarial.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let csvs: Vec<String> = dirs
        .iter()
        .map(|d| {
            let out = bobw(&[
                "run",
                "--config",
                path.to_str().unwrap(),
                "--reps",
                "2",
                "--out",
                d.path().to_str().unwrap(),
            ]);
            assert!(out.status.success());
            std::fs::read_to_string(d.path().join("episodes.csv")).unwrap()
        })
        .collect();
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"mdp": {"random": {"layers": [1, 2, 1], "actions": 2, "seed": 1}},
            "world": {"kind": "symmetric_switching", "block": 8},
            "learner": {"variant": "unknown_full"}, "horizon": 0}"#,
    )
    .unwrap();
    let out = bobw(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let missing = dir.path().join("missing.json");
    let out = bobw(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_on_small_instances() {
    let out = bobw(&["oracle-check", "--instances", "3", "--seed", "4"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
