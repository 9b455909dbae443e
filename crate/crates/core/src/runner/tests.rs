use super::*;

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn config(text: &str, dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(text).unwrap();
    c.output_dir = Some(dir.to_path_buf());
    c
}

fn csv_header(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn selftest_suite_passes() {
    let checks = selftest_checks();
    let failed: Vec<&CheckRecord> = checks.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(checks.len() >= 40);
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [
        r#"{"command": "simulate", "colour": 1}"#,
        r#"{"command": "simulate", "grid": {"M": 3}}"#,
        r#"{"command": "invert-source", "inversion": {"alpah": 1e-3}}"#,
        r#"{"command": "launch"}"#,
    ] {
        let e = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG, "{text}");
    }
}

#[test]
fn config_round_trips_through_json() {
    let text = r#"{"command": "verify-carleman", "seed": 9, "grid": {"N": 32, "K": 8},
        "carleman": {"theorem": "th3", "data": 2, "lambdas": [1.0], "mus": [2.0]}}"#;
    let c = ExperimentConfig::from_json(text).unwrap();
    let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(c, back);
    let spec = c.problem_spec().unwrap();
    assert_eq!((spec.points, spec.steps, spec.half_width), (32, 8, 1.0));
}

#[test]
fn conflicting_depths_are_a_config_error() {
    let c = ExperimentConfig::from_json(r#"{"command": "simulate", "grid": {"K": 8}, "tree": {"K": 9}}"#).unwrap();
    assert_eq!(exit_code(&c.problem_spec().unwrap_err()), EXIT_CONFIG);
}

#[test]
fn capacity_guard_exits_with_four() {
    let d = tmp();
    let c = config(r#"{"command": "simulate", "grid": {"N": 4096, "K": 14}, "tree": {"recombining": false}}"#, d.path());
    let m = run(&c);
    assert_eq!(m.exit_code, EXIT_CAPACITY);
    assert!(m.failure.as_deref().unwrap().contains("capacity"), "{:?}", m.failure);
    let on_disk: RunManifest = serde_json::from_slice(&std::fs::read(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.status, RunStatus::Failed);
    assert!(on_disk.outputs.is_empty());
}

#[test]
fn numerical_failure_writes_a_manifest() {
    let d = tmp();
    let c = config(
        r#"{"command": "simulate", "grid": {"N": 32, "K": 8}, "solver": {"picard_max_iters": 2, "picard_tol": 1e-14}}"#,
        d.path(),
    );
    let m = run(&c);
    assert_eq!(m.exit_code, EXIT_NUMERICAL);
    assert_eq!(m.converged, Some(false));
    assert!(d.path().join("manifest.json").is_file());
    // outputs written before the failure are listed
    assert!(m.outputs.iter().any(|o| o.path == "residuals.csv"));
}

#[test]
fn simulate_writes_snapshots_and_tree() {
    let d = tmp();
    let c = config(r#"{"command": "simulate", "grid": {"N": 32, "K": 6}, "simulate": {"snapshot_nodes": [4]}}"#, d.path());
    let m = run(&c);
    assert_eq!(m.exit_code, 0, "{:?}", m.failure);
    assert!(m.residuals.as_ref().is_some_and(|r| !r.is_empty()));
    assert_eq!(m.converged, Some(true));
    let (h, f) = crate::grid::snapshot::load(&d.path().join("fields/rho_node4.fld")).unwrap();
    assert_eq!((h.node_id, h.points), (4, 32));
    assert!((crate::grid::integrate(&f) - 1.0).abs() < 1e-8);
    let leaves = 7; // recombining depth 6
    let leaf_files = m.outputs.iter().filter(|o| o.path.starts_with("fields/u_node")).count();
    assert_eq!(leaf_files, 1 + leaves + 1);
    let tree: crate::tree::TreeManifest = serde_json::from_slice(&std::fs::read(d.path().join("tree.json")).unwrap()).unwrap();
    assert_eq!(tree.k, 6);
    assert_eq!(csv_header(d.path(), "residuals.csv"), "iter,residual");
}

#[test]
fn carleman_long_format_columns() {
    let d = tmp();
    let c = config(
        r#"{"command": "verify-carleman", "grid": {"N": 32, "K": 8},
            "carleman": {"data": 2, "lambdas": [1.0, 2.0], "mus": [2.0], "betas": [0.0, 1.0]}}"#,
        d.path(),
    );
    let m = run(&c);
    assert_eq!(m.exit_code, 0, "{:?}", m.failure);
    let h = csv_header(d.path(), "carleman_long.csv");
    for col in ["theorem", "lambda", "mu", "beta", "term", "value", "margin"] {
        assert!(h.split(',').any(|c| c == col), "{h}");
    }
    let wide = std::fs::read_to_string(d.path().join("reports.csv")).unwrap();
    assert_eq!(wide.lines().count(), 1 + 2 * 2 * 2);
    assert_eq!(m.summary["reports"], 8);
}

#[test]
fn forward_carleman_below_mu_min_is_a_config_error() {
    let d = tmp();
    let c = config(
        r#"{"command": "verify-carleman", "grid": {"N": 16, "K": 4}, "carleman": {"theorem": "th2", "mus": [4.0]}}"#,
        d.path(),
    );
    assert_eq!(run(&c).exit_code, EXIT_CONFIG);
}

#[test]
fn stability_long_format_columns() {
    let d = tmp();
    let c = config(
        r#"{"command": "stability-twin", "model": {"preset": "decoupled"}, "grid": {"N": 32, "K": 8},
            "stability": {"modes": [1], "deltas": [0.1, 0.01]}}"#,
        d.path(),
    );
    let m = run(&c);
    assert_eq!(m.exit_code, 0, "{:?}", m.failure);
    let h = csv_header(d.path(), "stability_long.csv");
    for col in ["delta", "lhs", "rhs", "ratio"] {
        assert!(h.split(',').any(|c| c == col), "{h}");
    }
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("summary.json")).unwrap()).unwrap();
    assert!((s["delta_spread"].as_f64().unwrap() - 1.0).abs() < 1e-8, "{s}");
}

fn small_inversion(dir: &Path) -> ExperimentConfig {
    config(
        r#"{"command": "invert-source", "seed": 3, "grid": {"N": 16, "K": 8},
            "model": {"source": {"shape": {"base": 1.0, "amp": 0.5, "growth": 0.5, "width": 0.5, "center": [0.5, 0.0]}}},
            "inversion": {"alpha": 1e-6, "max_iters": 60}}"#,
        dir,
    )
}

#[test]
fn inversion_outputs() {
    let d = tmp();
    let m = run(&small_inversion(d.path()));
    assert_eq!(m.exit_code, 0, "{:?}", m.failure);
    assert_eq!(csv_header(d.path(), "convergence.csv"), "iter,misfit,grad_norm,rel_error");
    let stack = read_field_stack(&d.path().join("r_hat.fld")).unwrap();
    assert_eq!(stack.len(), 8);
    assert!(stack.iter().enumerate().all(|(k, (h, _))| h.node_id == k));
    let cert: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("certificate.json")).unwrap()).unwrap();
    assert!(cert["value"].as_f64().unwrap() < 1e-2, "{cert}");
    assert!(m.summary["relative_l2_error"].as_f64().unwrap() < 5e-2, "{}", m.summary);
}

#[test]
fn outputs_are_identical_across_runs_and_worker_counts() {
    let (a, b) = (tmp(), tmp());
    let ma = with_threads(1, || run(&small_inversion(a.path()))).unwrap();
    let mb = with_threads(3, || run(&small_inversion(b.path()))).unwrap();
    assert_eq!(ma.exit_code, 0);
    assert_eq!(ma.checksums(), mb.checksums());
    assert!(ma.outputs.len() >= 4);
}

#[test]
fn selftest_command_exits_zero() {
    let d = tmp();
    let m = run(&config(r#"{"command": "selftest"}"#, d.path()));
    assert_eq!(m.exit_code, 0, "{:?}", m.failure);
    assert!(m.passed());
    assert_eq!(csv_header(d.path(), "selftest.csv"), "check,passed,detail");
}

#[test]
fn seeds_derive_independent_streams() {
    assert_eq!(derive_seed(1, 5), derive_seed(1, 5));
    assert_ne!(derive_seed(1, 5), derive_seed(1, 6));
}

#[test]
fn tree_sizes() {
    assert_eq!(tree_size(TreeKind::Full, 2), 7);
    assert_eq!(tree_size(TreeKind::Recombining, 2), 6);
    assert_eq!(tree_size(TreeKind::Degenerate, 2), 3);
}
