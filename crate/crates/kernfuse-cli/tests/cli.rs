use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/section4.cfg")
}

fn kernfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernfuse")).args(args).output().unwrap()
}

fn write_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(bundled_config()).unwrap();
    let path = dir.join("test.cfg");
    std::fs::write(&path, edit(text)).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_the_bundled_config() {
    let o = kernfuse(&["validate", bundled_config().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn validate_rejects_a_missing_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("epsilon = 1e-3\n", ""));
    let o = kernfuse(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.epsilon"));
}

#[test]
fn validate_rejects_an_unusable_anchor_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("anchors = 0, 2, 4, -2, -4", "anchors = 0, 2"));
    let o = kernfuse(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let o = kernfuse(&["validate", "/nonexistent/kernfuse.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_arguments_are_validation_errors() {
    assert_eq!(kernfuse(&["run"]).status.code(), Some(1));
    assert_eq!(kernfuse(&["frobnicate"]).status.code(), Some(1));
    let o = kernfuse(&["run", bundled_config().to_str().unwrap(), "--seed", "minus-one"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(kernfuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("epsilon = 1e-3", "epsilon = 1e9"));
    let out = dir.path().join("out");
    let o = kernfuse(&["run", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["metrics.csv", "final_functions.csv", "run.checkpoint", "functions.svg", "rmse.svg"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let checkpoint = std::fs::read_to_string(out.join("run.checkpoint")).unwrap();
    assert!(checkpoint.contains("seed = 3\n"));
}

#[test]
fn hitting_the_iteration_cap_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| {
        t.replace("epsilon = 1e-3", "epsilon = 1e-12").replace("max_iterations = 10000", "max_iterations = 20")
    });
    let out = dir.path().join("out");
    let o = kernfuse(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no stop after 20 iterations"));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |t| t.replace("max_iterations = 10000", "max_iterations = 40"));
    let paths: Vec<PathBuf> = ["a", "b"].iter().map(|d| dir.path().join(d)).collect();
    for p in &paths {
        kernfuse(&["run", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
    }
    let a = std::fs::read(paths[0].join("metrics.csv")).unwrap();
    let b = std::fs::read(paths[1].join("metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dump_operators_prints_the_selectors() {
    let o = kernfuse(&["dump-operators", bundled_config().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("dimension of H: m = 5"));
    assert!(text.contains("L2 (Phi coordinates):"));
    assert!(text.contains("c_d = 1.000000000000"));
}
