use std::path::Path;
use std::process::Command;

fn scr(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SCR_OUTPUT_DIR")
        .env_remove("SCR_THREADS")
        .output()
        .unwrap()
}

const SMALL: &str = r#"
[dataset]
source = "gaussian"
n = 400
d = 8
seed = 3

[loss]
regularizer = "l2"
lambda = 1e-2

[run]
methods = ["scr", "arc", "sgd", "lbfgs"]
seeds = [0, 1]
max_epochs = 5.0
record_wall_time = false

[sgd]
step_grid = [0.1]
"#;

#[test]
fn run_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = scr(&["run", "small.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    for name in ["scr_seed0.csv", "arc_seed1.csv", "sgd_step0.1_seed0.csv", "lbfgs_seed1.csv"] {
        assert!(res.join("runs").join(name).exists(), "{name} missing");
    }
    let summary = std::fs::read_to_string(res.join("summary.csv")).unwrap();
    assert!(summary.lines().count() >= 5);

    let again = scr(&["summarize", "res"], dir.path());
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("scr"));
}

#[test]
fn seed_flag_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = scr(&["--seed", "7", "run", "small.toml", "--out", "res"], dir.path());
    assert!(out.status.success());
    let runs = dir.path().join("res/runs");
    assert!(runs.join("scr_seed7.csv").exists());
    assert!(!runs.join("scr_seed0.csv").exists());
}

#[test]
fn runs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    assert!(scr(&["run", "small.toml", "--out", "a"], dir.path()).status.success());
    assert!(scr(&["run", "small.toml", "--out", "b", "--threads", "1"], dir.path()).status.success());
    for name in ["scr_seed0.csv", "sgd_step0.1_seed1.csv"] {
        let a = std::fs::read(dir.path().join("a/runs").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b/runs").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn prepare_round_trips_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = scr(&["prepare", "--n", "30", "--d", "4", "data/g.svm"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = scr(&["prepare", "--from", "data/g.svm", "data/g.bin"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("30 samples") && text.contains("4 features"), "{text}");
}

#[test]
fn bad_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(scr(&["run", "missing.toml"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "[dataset]\nsource = \"gaussian\"\nn = 10\nd = 2\nbogus = 1\n").unwrap();
    assert_eq!(scr(&["run", "bad.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(scr(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = scr(&["verify", "--trials", "50"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let tampered = scr(&["verify", "--trials", "50", "--tamper-gamma", "0.5"], dir.path());
    assert_eq!(tampered.status.code(), Some(2));
}
