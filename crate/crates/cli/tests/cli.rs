use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ivrobust::synth::random_dataset_with;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivrobust"))
}

/// Writes a synthetic dataset with one endogenous regressor, one nuisance
/// regressor and four instruments.
fn write_data(dir: &Path, strength: f64, seed: u64) -> PathBuf {
    let d = random_dataset_with(300, 4, 1, 1, strength, seed);
    let path = dir.join(format!("data_{seed}.csv"));
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(["y", "x", "w", "z1", "z2", "z3", "z4"]).unwrap();
    for i in 0..d.n() {
        let mut row = vec![d.y[i], d.x[(i, 0)], d.w[(i, 0)]];
        row.extend((0..4).map(|j| d.z[(i, j)]));
        w.write_record(row.iter().map(|v| v.to_string())).unwrap();
    }
    w.flush().unwrap();
    path
}

fn data_args(path: &Path) -> Vec<String> {
    ["--input", path.to_str().unwrap(), "--y", "y", "--x", "x", "--w", "w", "--z", "z1,z2,z3,z4"]
        .map(String::from)
        .to_vec()
}

fn run(args: &[&str], data: Option<&Path>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    if let Some(p) = data {
        cmd.args(data_args(p));
    }
    cmd.output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn test_subcommand_reports_statistic_distribution_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 1);
    let v = json(&run(&["test", "--test", "ar", "--beta0", "0.0"], Some(&p)));
    let r = &v["result"];
    assert_eq!(r["dist"], "chi2(3)");
    assert!(r["statistic"].as_f64().unwrap() >= 0.0);
    let pv = r["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pv));
    assert!(r["diagnostics"]["gamma_liml"].is_array());
    assert_eq!(v["config"]["command"]["test"], "ar");
    assert!(v["config"]["optimizer"]["tol"].is_number());
    assert!(v["config"]["version"].is_string());
}

#[test]
fn lm_diagnostics_include_minimizer() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 2);
    let v = json(&run(&["test", "--test", "lm", "--beta0", "-0.5"], Some(&p)));
    assert_eq!(v["result"]["dist"], "chi2(1)");
    assert!(v["result"]["diagnostics"]["gamma_star"].is_array());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 3);
    let out = run(&["test", "--test", "bogus", "--beta0", "0"], Some(&p));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "{err}");

    let out = run(&["test", "--test", "ar", "--beta0", "0,1"], Some(&p));
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["test", "--input", "/definitely/missing.csv", "--y", "y", "--x", "x", "--z", "z", "--test", "ar"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["test", "--test", "ar"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("collinear.csv");
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(["y", "x", "z1", "z2"]).unwrap();
    for i in 0..50 {
        // y is an exact linear function of the instruments
        let (a, b) = (i as f64, ((i * 7) % 11) as f64);
        w.write_record([a + b, 2.0 * a - b, a, b].map(|v| v.to_string())).unwrap();
    }
    w.flush().unwrap();
    let out = bin()
        .args(["test", "--input", path.to_str().unwrap(), "--y", "y", "--x", "x", "--z", "z1,z2"])
        .args(["--test", "ar", "--beta0", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pvalue_grid_has_one_row_per_test_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 4);
    let rows = csv_rows(&run(
        &["--format=csv", "pvalue-grid", "--tests", "ar,lr", "--beta-grid", "-1:1:3"],
        Some(&p),
    ));
    assert_eq!(rows[0], ["test", "beta", "p_value"]);
    assert_eq!(rows.len(), 1 + 6);
    let betas: Vec<f64> = rows[1..4].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(betas, [-1.0, 0.0, 1.0]);
}

#[test]
fn lr_pvalue_is_one_at_liml() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 5);
    let fit = json(&run(&["fit", "--estimator", "liml"], Some(&p)));
    let b = fit["result"]["coef"][0].as_f64().unwrap();
    let rows = csv_rows(&run(
        &["--format=csv", "pvalue-grid", "--tests", "lr", "--beta-grid", &format!("{b:.17}")],
        Some(&p),
    ));
    let pv: f64 = rows[1][2].parse().unwrap();
    assert!((pv - 1.0).abs() < 1e-9, "{pv}");
}

#[test]
fn closed_form_ar_set_matches_pvalue_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 6);
    let v = json(&run(&["confset", "--test", "ar", "--alpha", "0.05"], Some(&p)));
    assert_eq!(v["result"]["classification"], "bounded_nonempty");
    let set = v["result"]["set"][0].as_array().unwrap();
    let (lo, hi) = (set[0].as_f64().unwrap(), set[1].as_f64().unwrap());
    let (glo, ghi) = (lo - 1.0, hi + 1.0);
    let rows = csv_rows(&run(
        &["--format=csv", "pvalue-grid", "--tests", "ar", "--beta-grid", &format!("{glo}:{ghi}:401")],
        Some(&p),
    ));
    let step = (ghi - glo) / 400.0;
    for r in &rows[1..] {
        let (b, pv): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        if b < lo - step || b > hi + step {
            assert!(pv < 0.05, "beta {b} outside [{lo}, {hi}] has p {pv}");
        }
        if b > lo + step && b < hi - step {
            assert!(pv >= 0.05, "beta {b} inside [{lo}, {hi}] has p {pv}");
        }
    }
}

#[test]
fn grid_confidence_sets_use_requested_window() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 0.3, 7);
    let v = json(&run(
        &["confset", "--test", "lm", "--alpha", "0.05", "--grid-lo", "-1", "--grid-hi", "1", "--grid-points", "401"],
        Some(&p),
    ));
    assert_eq!(v["result"]["method"], "grid");
    for piece in v["result"]["set"].as_array().unwrap() {
        let piece = piece.as_array().unwrap();
        for e in piece {
            if let Some(x) = e.as_f64() {
                assert!((-1.0..=1.0).contains(&x));
            }
        }
    }
}

#[test]
fn simulate_size_writes_one_row_per_test() {
    let out = bin()
        .args(["--format", "csv", "simulate-size", "--family", "guggenberger", "--n", "200", "--k", "5"])
        .args(["--reps", "100", "--alpha", "0.05", "--seed", "7", "--tests", "ar,lm,lr"])
        .output()
        .unwrap();
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "test");
    let tests: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(tests, ["ar", "lm", "lr"]);
    for r in &rows[1..] {
        let rate: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
    // same seed, same table
    let again = bin()
        .args(["--format", "csv", "--threads", "1", "simulate-size", "--family", "guggenberger", "--n", "200"])
        .args(["--k", "5", "--reps", "100", "--alpha", "0.05", "--seed", "7", "--tests", "ar,lm,lr"])
        .output()
        .unwrap();
    assert_eq!(csv_rows(&again)[1..], rows[1..]);
}

#[test]
fn rank_and_fit_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_data(dir.path(), 1.0, 8);
    let v = json(&run(&["rank"], Some(&p)));
    assert_eq!(v["result"]["dist"], "chi2(3)");
    let v = json(&run(&["fit", "--estimator", "tsls"], Some(&p)));
    assert_eq!(v["result"]["names"], serde_json::json!(["x", "w"]));
    assert_eq!(v["result"]["coef"].as_array().unwrap().len(), 2);
    assert!(v["result"]["std_errors"][0].as_f64().unwrap() > 0.0);
    let text = run(&["--format=text", "fit"], Some(&p));
    assert!(text.status.success());
    assert!(String::from_utf8(text.stdout).unwrap().contains('x'));
}
