use hft_equilibrium::simulator::read_frame;
use hft_equilibrium::MarketParams;
use std::process::{Command, Output};

fn hft_eq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hft-eq")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn solve_prints_named_fields() {
    let out = hft_eq(&["solve"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["betas", "beta_sigma", "lambda", "phis", "mus", "tax"] {
        assert!(doc["equilibrium"].get(key).is_some(), "missing {key}");
    }
    for key in ["A", "B", "C", "D", "E", "zeta", "F", "G", "eta"] {
        assert!(doc["value"][0].get(key).is_some(), "missing {key}");
    }
    let lambda = doc["equilibrium"]["lambda"].as_f64().unwrap();
    assert!((lambda - 0.499_501_316_437_536).abs() < 1e-13);
}

#[test]
fn solve_params_round_trip_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = hft_eq(&["--gammas", "0.5,2", "--dt", "0.01", "solve"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let path = dir.path().join("params.json");
    std::fs::write(&path, doc["params"].to_string()).unwrap();
    let parsed = MarketParams::from_json_file(&path).unwrap();
    assert_eq!(parsed.traders.len(), 2);
    let again = hft_eq(&["--config", path.to_str().unwrap(), "solve"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"sigma_S": 1, "sigma_K": 1, "dt": 0.01, "traders": [{"gamma": -1, "rho": 0.05}]}"#)
        .unwrap();
    let out = hft_eq(&["--config", path.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    assert_eq!(hft_eq(&["--config", "/nonexistent.json", "solve"]).status.code(), Some(2));
    assert_eq!(hft_eq(&["sweep", "--dt-grid", "1:2"]).status.code(), Some(2));
}

#[test]
fn expand_three_traders_has_no_d_correction() {
    let out = hft_eq(&["--traders", "3", "expand", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let d_rows: Vec<&str> = text.lines().filter(|l| l.split(',').nth(1) == Some("D")).collect();
    assert_eq!(d_rows.len(), 3);
    for row in d_rows {
        assert_eq!(row.split(',').nth(3), Some("0"));
    }
}

#[test]
fn k_sweep_stays_within_one_percent() {
    let out = hft_eq(&["sweep", "--k", "1..10", "--dt", "0.00004"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,lambda_exact,lambda_limit,relative_gap"));
    let gaps: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(gaps.len(), 10);
    assert!(gaps.iter().all(|&g| g < 0.01));
}

#[test]
fn dt_sweep_header_and_json() {
    let out = hft_eq(&["sweep", "--dt-grid", "1e-2:1e-4:3"]);
    let text = stdout(&out);
    assert!(text.starts_with("dt,beta_exact,beta_limit,beta_expansion,lambda_exact,"));
    assert_eq!(text.lines().count(), 4);
    let json = hft_eq(&["sweep", "--dt-grid", "1e-2:1e-4:3", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 3);
    assert_eq!(doc["columns"][0], "dt");
}

#[test]
fn tax_sweep_columns() {
    let out = hft_eq(&["tax-sweep", "--c-grid", "0:0.1:3", "--traders", "2"]);
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(text.lines().next(), Some("c,lambda,lambda_plus_c"));
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));
}

#[test]
fn simulate_is_reproducible_and_exports_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("batch.bin");
    let csv = dir.path().join("batch.csv");
    let args = |out: &str| {
        vec![
            "--dt".to_string(),
            "0.04".into(),
            "--rhos".into(),
            "2".into(),
            "simulate".into(),
            "--paths".into(),
            "50".into(),
            "--seed".into(),
            "9".into(),
            "--rounds".into(),
            "20".into(),
            "--frame".into(),
            frame.to_str().unwrap().into(),
            "--paths-csv".into(),
            csv.to_str().unwrap().into(),
            "--out".into(),
            out.into(),
        ]
    };
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    let a: Vec<String> = args(first.to_str().unwrap());
    let b: Vec<String> = args(second.to_str().unwrap());
    assert!(hft_eq(&a.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    let frame_bytes = std::fs::read(&frame).unwrap();
    assert!(hft_eq(&b.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(frame_bytes, std::fs::read(&frame).unwrap());

    let parsed = read_frame(frame_bytes.as_slice()).unwrap();
    assert_eq!((parsed.rows, parsed.cols), (50 * 20, 8));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 50 * 20 + 1);

    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&first).unwrap()).unwrap();
    assert_eq!(doc["objective"][0]["n_samples"], 50);
    assert!(doc["dealer"]["slope"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_default_parameters_passes() {
    let out = hft_eq(&["verify", "--paths", "400"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    for want in ["quartic_residual", "lemma_identity", "dpe_grid", "zero_profit", "impact_slope", "moment", "deviation_argmax"] {
        assert!(names.contains(&want), "missing {want}");
    }
    assert!(out.status.success(), "{report}");
}

#[test]
fn verify_skips_value_checks_for_taxed_markets() {
    let out = hft_eq(&["--tax", "0.05", "--traders", "2", "verify", "--paths", "200", "--strict"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let status = |name: &str| {
        report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()["status"].clone()
    };
    assert_eq!(status("lemma_identity"), "skipped");
    assert_eq!(status("system_residual"), "pass");
}
