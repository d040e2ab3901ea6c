use std::path::Path;
use std::process::{Command, Output};

fn funcreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funcreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = funcreg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, n: usize) -> String {
    let path = dir.join("sim.csv");
    let p = path.to_str().unwrap().to_string();
    ok(&["simulate", "--n", &n.to_string(), "--grid", "100", "--seed", "5", "--write-data", &p]);
    p
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {stderr:?}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn fixed_fit_writes_model_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 60);
    let out = dir.path().join("out");
    let stdout = ok(&["fit", "--input", &data, "--K", "3", "--lambda", "0.05", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("active:"));

    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(model["selection"]["k"], 3);
    assert_eq!(model["selection"]["lambda"], 0.05);
    assert_eq!(model["input_predictors"], 4);

    let tuning = std::fs::read_to_string(out.join("tuning.csv")).unwrap();
    assert_eq!(tuning.lines().count(), 2);
    let coefs = std::fs::read_to_string(out.join("coefficients.csv")).unwrap();
    assert_eq!(coefs.lines().next().unwrap(), "t,x1,x2,x3,x4");
    assert_eq!(coefs.lines().count(), 101);
    assert!(out.join("band_x1.csv").exists());
}

#[test]
fn predict_and_bands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 80);
    let out = dir.path().join("out");
    let stdout = ok(&["fit", "--input", &data, "--k-grid", "2,3", "--split", "60", "--out", out.to_str().unwrap()]);
    let holdout: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("holdout_mse="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(holdout.is_finite() && holdout > 0.0);

    let model = out.join("fit.json");
    let pred = ok(&["predict", "--model", model.to_str().unwrap(), "--input", &data]);
    let rows: Vec<&str> = pred.lines().collect();
    assert_eq!(rows[0], "row,y,yhat");
    assert_eq!(rows.len(), 81);
    // the tail rows are the hold-out set; their MSE must match the one reported by fit
    let tail: f64 = rows[61..]
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
            (v[1] - v[2]).powi(2)
        })
        .sum::<f64>()
        / 20.0;
    assert!((tail - holdout).abs() <= 1e-9 * holdout.max(1.0));

    let band = ok(&["bands", "--model", model.to_str().unwrap(), "--predictor", "x1", "--level", "0.9"]);
    assert_eq!(band.lines().next().unwrap(), "t,center,lower,upper");
    let saved = std::fs::read_to_string(out.join("band_x1.csv")).unwrap();
    // same centre line, narrower band at the lower level
    for (a, b) in band.lines().skip(1).zip(saved.lines().skip(1)) {
        let a: Vec<f64> = a.split(',').map(|x| x.parse().unwrap()).collect();
        let b: Vec<f64> = b.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(a[1], b[1]);
        assert!(a[3] - a[2] <= b[3] - b[2]);
    }
    let by_index = ok(&["bands", "--model", model.to_str().unwrap(), "--predictor", "1", "--level", "0.9"]);
    assert_eq!(by_index, band);
}

#[test]
fn mismatched_rows_exit_two_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x1_1,x1_2,x1_3\n1.0,0.1,0.2,0.3\n2.0,0.1,0.2\n").unwrap();
    let out = funcreg(&["fit", "--input", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(!err["message"].as_str().unwrap().is_empty());
}

#[test]
fn predictor_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 50);
    let out = dir.path().join("out");
    ok(&["fit", "--input", &data, "--K", "2", "--lambda", "0.05", "--out", out.to_str().unwrap()]);
    let other = dir.path().join("one.csv");
    std::fs::write(&other, "y,x1_1,x1_2,x1_3\n1.0,0.1,0.2,0.3\n").unwrap();
    let res = funcreg(&["predict", "--model", out.join("fit.json").to_str().unwrap(), "--input", other.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_line(&res)["error"], "input");
}

#[test]
fn bad_flags_exit_two() {
    let out = funcreg(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);
    let out = funcreg(&["diagnose-lambda", "--rho", "0.2", "--alpha", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(funcreg(&["--help"]).status.success());
}

#[test]
fn table1_is_deterministic() {
    let args = ["table1", "--replicates", "2", "--noise-reading", "sigma", "--seed", "3"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 7);
    let threaded = funcreg(&["--threads", "1", "table1", "--replicates", "2", "--noise-reading", "sigma", "--seed", "3"]);
    assert_eq!(String::from_utf8(threaded.stdout).unwrap(), a);
}

#[test]
fn diagnose_lambda_scaled_eigenvalue_is_flat() {
    for (rho, expect) in [("0.2", 0.64), ("0.5", 0.25)] {
        let text = ok(&["diagnose-lambda", "--rho", rho, "--k-max", "6"]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "K,min_eig,scaled,collapsed");
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            let scaled: f64 = cols[2].parse().unwrap();
            assert!((scaled - expect).abs() < 1e-6, "{line}");
            assert_eq!(cols[3], "false");
        }
    }
    let singular = ok(&["diagnose-lambda", "--mixing", "1,1;1,1", "--k-max", "2"]);
    assert!(singular.lines().skip(1).all(|l| l.ends_with("true")));
}
