use std::fs;

use kernfuse::harness::config::ConfigError;
use kernfuse::harness::output::{FUNCTIONS_HEADER, METRICS_HEADER};
use kernfuse::harness::*;
use kernfuse::learning_runtime::{ReconstructionRho, RuntimeError, Schedule};
use kernfuse::rkhs_core::Feature;

fn quick_config() -> ExperimentConfig {
    let text = BUNDLED_CONFIG
        .replace("max_iterations = 10000", "max_iterations = 25")
        .replace("epsilon = 1e-3", "epsilon = 1e9");
    parse_config(&text).unwrap()
}

fn validation_fields(text: &str) -> Vec<String> {
    parse_config(text)
        .unwrap_err()
        .0
        .into_iter()
        .filter_map(|e| match e {
            ConfigError::Validation { field, .. } => Some(field),
            ConfigError::Parse { .. } => None,
        })
        .collect()
}

#[test]
fn bundled_config_parses() {
    let c = parse_config(BUNDLED_CONFIG).unwrap();
    assert_eq!(c.agents[0].features, vec![Feature::Constant, Feature::Monomial(1), Feature::Monomial(2)]);
    assert_eq!(c.agents[1].features, vec![Feature::ExpNeg, Feature::ExpPos]);
    assert_eq!(c.agents[1].domain.pieces(), &[(-10.0, -5.0), (5.0, 10.0)]);
    assert_eq!(c.fusion.rho, Schedule::Geometric { base: 10.0, ratio: 2.0 });
    assert_eq!(c.fusion.reconstruction, ReconstructionRho::Agent);
    assert!(c.fusion.normalize_download);
    assert_eq!(c.run.epsilon, 1e-3);
    assert_eq!(c.run.k_max, 5);
    assert_eq!(c.run.seed, 7);
    assert_eq!(c.data.noise_sigma, 0.1);
    assert_eq!(c.output.grid_points, 401);
    assert!(c.warnings.is_empty());
}

#[test]
fn missing_epsilon_is_a_validation_error() {
    let text = BUNDLED_CONFIG.replace("epsilon = 1e-3\n", "");
    assert_eq!(validation_fields(&text), vec!["run.epsilon"]);
}

#[test]
fn negative_noise_is_a_validation_error() {
    let text = BUNDLED_CONFIG.replace("noise_sigma = 0.1", "noise_sigma = -1");
    assert_eq!(validation_fields(&text), vec!["data.noise_sigma"]);
}

#[test]
fn anchors_outside_the_input_space_are_rejected() {
    let text = BUNDLED_CONFIG.replace("anchors = 0, 2, 4, -2, -4", "anchors = 0, 2, 4, -2, 40");
    assert_eq!(validation_fields(&text), vec!["agent1.anchors"]);
}

#[test]
fn shared_anchors_only_warn() {
    let text = BUNDLED_CONFIG.replace("anchors = 1, 3, 5, -1, -3", "anchors = 0, 3, 5, -1, -3");
    let c = parse_config(&text).unwrap();
    assert_eq!(c.warnings.len(), 1);
}

#[test]
fn syntax_errors_carry_line_numbers() {
    let text = BUNDLED_CONFIG.replace("k_max = 5", "k_max 5");
    let err = parse_config(&text).unwrap_err();
    let line = BUNDLED_CONFIG.lines().position(|l| l.starts_with("k_max")).unwrap() + 1;
    assert!(err.0.contains(&ConfigError::Parse { line, message: "expected `key = value`".into() }), "{err}");
}

#[test]
fn wrong_anchor_count_is_a_setup_error() {
    let text = BUNDLED_CONFIG.replace("anchors = 0, 2, 4, -2, -4", "anchors = 0, 2, 4, -2");
    let err = assemble(&parse_config(&text).unwrap()).err().unwrap();
    assert!(err.is_validation());
    assert!(matches!(err, HarnessError::Setup { .. }));
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&quick_config(), Some(dir.path())).unwrap();
    assert_eq!(summary.iterations, 5);
    let names: Vec<_> = summary.files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["metrics.csv", "final_functions.csv", "run.checkpoint", "functions.svg", "rmse.svg"]);

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(!metrics.contains('\r'));
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].split(',').nth(4).unwrap().is_empty());
    let last: Vec<&str> = rows[4].split(',').collect();
    assert_eq!(last.len(), 8);
    assert_eq!(last[5], "3.2000000000000000e2");
    for field in &last[1..] {
        let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{field}");
    }

    let functions = fs::read_to_string(dir.path().join("final_functions.csv")).unwrap();
    assert_eq!(functions.lines().next().unwrap(), FUNCTIONS_HEADER.join(","));
    assert_eq!(functions.lines().count(), 402);

    let svg = fs::read_to_string(dir.path().join("rmse.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn plots_can_be_turned_off() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config();
    config.output.plots = false;
    let summary = run_experiment(&config, Some(dir.path())).unwrap();
    assert_eq!(summary.files.len(), 3);
    assert!(!dir.path().join("rmse.svg").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut config = quick_config();
    config.run.epsilon = 1e-12;
    let _ = run_experiment(&config, Some(a.path()));
    let _ = run_experiment(&config, Some(b.path()));
    for name in ["metrics.csv", "final_functions.csv", "run.checkpoint"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn different_seeds_change_the_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut config = quick_config();
    let _ = run_experiment(&config, Some(a.path()));
    config.run.seed = 8;
    let _ = run_experiment(&config, Some(b.path()));
    assert_ne!(fs::read(a.path().join("metrics.csv")).unwrap(), fs::read(b.path().join("metrics.csv")).unwrap());
}

#[test]
fn hitting_the_cap_is_a_runtime_error_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config();
    config.run.epsilon = 1e-12;
    let err = run_experiment(&config, Some(dir.path())).unwrap_err();
    assert!(!err.is_validation());
    let HarnessError::Run { error, summary } = err else { panic!("expected a run error") };
    assert_eq!(error, RuntimeError::MaxIterationsExceeded(25));
    assert_eq!(summary.iterations, 25);
    assert_eq!(fs::read_to_string(dir.path().join("metrics.csv")).unwrap().lines().count(), 26);
}

#[test]
fn checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config();
    config.run.epsilon = 1e-12;
    let _ = run_experiment(&config, Some(dir.path()));
    let text = fs::read_to_string(dir.path().join("run.checkpoint")).unwrap();
    let cp = parse_checkpoint(&text).unwrap();
    assert_eq!(cp.run, config.run);
    assert_eq!(cp.iterations, 25);
    assert_eq!(cp.last_n, 25);
    assert_eq!(cp.coefficients[0].len(), 5);
    assert_eq!(cp.fused.len(), 10);
    assert_eq!(write_checkpoint(&cp), text);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_run() {
    let mut config = quick_config();
    config.run.epsilon = 1e-12;
    let system = assemble(&config).unwrap().system;
    let source = generate_data(&config, config.run.seed);
    let full = simulate(&config, &system, &source);

    let mut first = config.clone();
    first.run.max_iterations = 10;
    let head = simulate(&first, &system, &source);
    let cp = Checkpoint::from_run(&first.run, &head.trajectory);
    let cp = parse_checkpoint(&write_checkpoint(&cp)).unwrap();
    let mut second = config.clone();
    second.run = cp.resume_config();
    second.run.max_iterations = 15;
    let tail = simulate(&second, &system, &source);
    assert_eq!(tail.trajectory.records.len(), 15);
    for (a, b) in tail.trajectory.records.iter().zip(&full.trajectory.records[10..]) {
        assert_eq!(a.n, b.n);
        assert_eq!(a.downloaded, b.downloaded);
    }
}

#[test]
fn malformed_checkpoints_are_rejected() {
    assert!(matches!(parse_checkpoint("[run]\nepsilon = 1\n"), Err(HarnessError::Checkpoint(_))));
    assert!(matches!(parse_checkpoint("[other]\n"), Err(HarnessError::Checkpoint(_))));
}

#[test]
fn operator_dump_shows_the_selector_matrices() {
    let dump = dump_operators(&parse_config(BUNDLED_CONFIG).unwrap()).unwrap();
    assert!(dump.contains("dimension of H: m = 5"));
    assert!(dump.contains("c_d = 1.000000000000"));
    let l1 = dump.split("L1 (Phi coordinates):\n").nth(1).unwrap();
    let rows: Vec<&str> = l1.lines().take(5).collect();
    for (i, row) in rows.iter().enumerate() {
        let entries: Vec<&str> = row.trim().trim_matches(['[', ']']).split_whitespace().collect();
        for (j, e) in entries.iter().enumerate() {
            let expected = if i == j && i < 3 { "1.000000000000" } else { "0.000000000000" };
            assert_eq!(*e, expected, "L1[{i},{j}]");
        }
    }
    assert!(dump.contains("fusion operator norm"));
    assert_eq!(dump.matches("  rho = ").count(), 4);
}
