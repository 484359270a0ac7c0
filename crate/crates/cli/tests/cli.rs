use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const GAUSS: &str = r#"
seed = 7
theta = 1e-2

[testbed]
id = "gaussian_threshold"
tau = 3.090232
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppscert"))
        .args(args)
        .current_dir(dir)
        .env_remove("PPSCERT_OUT")
        .output()
        .expect("run ppscert")
}

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn truth_prints_value_and_description() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", GAUSS);
    let out = run(dir.path(), &["truth", "--config", "g.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let value: f64 = text.lines().next().unwrap().parse().unwrap();
    assert!((value - 1.0e-3).abs() < 1e-6, "{text}");
    assert!(text.lines().count() >= 2);
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "broken.toml", "seed = \n[testbed");
    write_config(dir.path(), "unknown.toml", &format!("{GAUSS}\nmystery = 1\n"));
    write_config(dir.path(), "noseed.toml", "[testbed]\nid = \"gaussian_threshold\"\ntau = 3.0\n");
    write_config(dir.path(), "badbed.toml", "seed = 1\n[testbed]\nid = \"gaussian_threshold\"\ntau = 3.0\ndim = 0\n");
    for name in ["broken.toml", "unknown.toml", "noseed.toml", "badbed.toml", "missing.toml"] {
        let out = run(dir.path(), &["truth", "--config", name]);
        assert_eq!(out.status.code(), Some(2), "{name}");
    }
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn estimate_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 100000\n"));
    let out = run(dir.path(), &["estimate", "--config", "g.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["command"], "estimate");
    assert_eq!(report["testbed"], "gaussian_threshold");
    let point = report["estimate"]["point"].as_f64().unwrap();
    let upper = report["estimate"]["upper_bound"].as_f64().unwrap();
    assert!(point <= upper && (point - 1e-3).abs() < 5e-4);
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("o/diagnostics.csv").exists());
    assert!(dir.path().join("o/config.json").exists());
}

#[test]
fn identity_proposal_agrees_with_plain_sampling() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cmc.toml", &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 200000\n"));
    write_config(
        dir.path(),
        "is.toml",
        &format!("{GAUSS}\n[estimator]\nmethod = \"IS\"\nn = 200000\nproposal = {{ shift = 0.0, scale = 1.0 }}\n"),
    );
    assert_eq!(run(dir.path(), &["estimate", "--config", "cmc.toml", "--out", "c"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["estimate", "--config", "is.toml", "--out", "i"]).status.code(), Some(0));
    let c = read_json(&dir.path().join("c/report.json"))["estimate"]["point"].as_f64().unwrap();
    let i = read_json(&dir.path().join("i/report.json"))["estimate"]["point"].as_f64().unwrap();
    // Two independent estimates of 1e-3 at n = 2e5: sd of the difference is about 1e-4.
    assert!((c - i).abs() < 4e-4, "cmc {c} vs is {i}");
}

#[test]
fn seed_override_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 100000\n"));
    run(dir.path(), &["estimate", "--config", "g.toml", "--out", "a"]);
    run(dir.path(), &["estimate", "--config", "g.toml", "--out", "b", "--seed-override", "9"]);
    let a = read_json(&dir.path().join("a/report.json"));
    let b = read_json(&dir.path().join("b/report.json"));
    assert_ne!(a["config_digest"], b["config_digest"]);
    assert_ne!(a["estimate"]["point"], b["estimate"]["point"]);
}

#[test]
fn sweep_over_threshold_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "s.toml",
        &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 100000\n[sweep]\naxis = \"testbed.tau\"\nvalues = [2.0, 2.5, 3.0, 3.5]\n"),
    );
    assert_eq!(run(dir.path(), &["sweep", "--config", "s.toml", "--out", "o"]).status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("value,point,upper_bound,confidence,n_samples"));
    let points: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(points.len(), 4);
    // Common random numbers across sweep points.
    assert!(points.windows(2).all(|w| w[0] >= w[1]), "{points:?}");
}

#[test]
fn single_point_sweep_matches_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 50000\n");
    write_config(dir.path(), "e.toml", &base);
    write_config(dir.path(), "s.toml", &format!("{base}[sweep]\naxis = \"testbed.tau\"\nvalues = [3.090232]\n"));
    run(dir.path(), &["estimate", "--config", "e.toml", "--out", "e"]);
    run(dir.path(), &["sweep", "--config", "s.toml", "--out", "s"]);
    let point = read_json(&dir.path().join("e/report.json"))["estimate"]["point"].as_f64().unwrap();
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let swept: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(point, swept);
}

#[test]
fn non_numeric_sweep_axis_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "s.toml",
        &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 1000\n[sweep]\naxis = \"estimator.method\"\nvalues = [1.0]\n"),
    );
    assert_eq!(run(dir.path(), &["sweep", "--config", "s.toml", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn uncertified_terms_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "gev.toml",
        &format!("{GAUSS}\n[estimator]\nmethod = \"GEV\"\nn = 100000\nblock_size = 1000\n"),
    );
    write_config(
        dir.path(),
        "hist.toml",
        &format!(
            "{GAUSS}\n[surrogate]\nenvironment = 0.1\n[estimator]\nmethod = \"CMC\"\nn = 10000\n[gap]\nmethod = \"HISTOGRAM_RATIO\"\nn = 100000\nbins = 16\n"
        ),
    );
    for name in ["gev.toml", "hist.toml"] {
        let out = run(dir.path(), &["certify", "--config", name, "--out", "o"]);
        assert_eq!(out.status.code(), Some(4), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!dir.path().join("o/certificate.json").exists());
    }
}

#[test]
fn surrogate_without_gap_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &format!("{GAUSS}\n[surrogate]\nenvironment = 0.1\n"));
    assert_eq!(run(dir.path(), &["certify", "--config", "g.toml", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn certify_without_theta_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &GAUSS.replace("theta = 1e-2", ""));
    assert_eq!(run(dir.path(), &["certify", "--config", "g.toml", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn gaussian_certificate_passes_and_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 100000\n"));
    let out = run(dir.path(), &["certify", "--config", "g.toml", "--out", "o", "--workers", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let cert = read_json(&dir.path().join("o/certificate.json"));
    assert_eq!(cert["verdict"], "PASS");
    assert_eq!(cert["provenance"]["testbed"], "gaussian_threshold");
    assert!(cert["total"].as_f64().unwrap() < 1e-2);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "g.toml", &format!("{GAUSS}\n[estimator]\nmethod = \"CMC\"\nn = 1000\n"));
    let out = Command::new(env!("CARGO_BIN_EXE_ppscert"))
        .args(["estimate", "--config", "g.toml"])
        .current_dir(dir.path())
        .env("PPSCERT_OUT", "from_env")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from_env/report.json").exists());
}

#[test]
fn region_command_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "grid.toml",
        "seed = 3\n[testbed]\nid = \"grid_world\"\nsize = 5\nhazards = [[0, 0]]\nslip = 0.01\nhorizon = 4\npolicy = { toward_goal = { goal = [4, 4] } }\n[region]\nkind = \"grid_reachability\"\n",
    );
    let out = run(dir.path(), &["region", "--config", "grid.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/region.json").exists());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("exhaustive check: 0 failures"), "{text}");
}
