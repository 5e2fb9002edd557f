use std::path::Path;
use std::process::{Command, Output};

const S2: f64 = std::f64::consts::SQRT_2;
const S3: f64 = 1.732_050_807_568_877_2;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incompat")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Rows of a CSV as maps from column name to cell.
fn rows(csv: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = csv.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn col(row: &[(String, String)], name: &str) -> f64 {
    row.iter().find(|(k, _)| k == name).unwrap_or_else(|| panic!("no column {name}")).1.parse().unwrap()
}

#[test]
fn pauli_gain_sweep() {
    let csv = ok(&["gain", "--d", "2", "--m", "3", "--eta-start", "0.5", "--eta-stop", "1", "--eta-steps", "26"]);
    let rows = rows(&csv);
    assert_eq!(rows.len(), 26);
    for r in &rows {
        let eta = col(r, "eta");
        if eta <= 1.0 / S3 {
            for c in ["i_base", "i_full", "delta"] {
                assert!(col(r, c).abs() < 1e-7, "{c} at {eta}");
            }
        } else if eta > 1.0 / S2 {
            assert!((col(r, "delta") - 0.5 * (1.0 / S2 - 1.0 / S3)).abs() < 1e-6);
        }
        assert!(col(r, "gain_slack") >= -1e-7);
    }
}

#[test]
fn qutrit_sweep_matches_analytic() {
    let csv = ok(&["sweep", "--dims", "3", "--ms", "2,3,4", "--eta-steps", "6"]);
    let rows = rows(&csv);
    assert_eq!(rows.len(), 18);
    for r in &rows {
        assert!(col(r, "abs_error") <= 1e-6);
    }
}

#[test]
fn decomposition_reports() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["decompose", "--eta", "1"])).unwrap();
    let r = &json[0];
    let parts = ["genuine", "pairwise", "hollow"].iter().map(|k| r[k].as_f64().unwrap()).sum::<f64>();
    let total = r["total"].as_f64().unwrap();
    assert!((parts - total).abs() < 1e-6);
    assert!((total - 0.5 * (1.0 - 1.0 / S3)).abs() < 1e-6);

    let json: serde_json::Value = serde_json::from_str(&ok(&["decompose", "--eta", "0.5"])).unwrap();
    for k in ["total", "genuine", "pairwise", "hollow"] {
        assert!(json[0][k].as_f64().unwrap() < 1e-7, "{k}");
    }
}

fn best(csv: &str) -> f64 {
    rows(csv).iter().map(|r| col(r, "value")).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn chsh_values() {
    let avg = best(&ok(&["chsh"]));
    assert!((2.5521..=2.5524).contains(&avg), "{avg}");
    let pair = best(&ok(&["chsh", "--single-pair", "--restarts", "5"]));
    assert!((pair - 2.0 * S2).abs() < 1e-6);
}

#[test]
fn local_behavior_file_has_zero_distance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("local.json");
    // Deterministic strategy: Alice outputs x, Bob outputs 0.
    let q = r#"{"probs": [
        [[[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]],
        [[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
    ]}"#;
    std::fs::write(&path, q).unwrap();
    let rows = rows(&ok(&["nonlocality", "--behavior", path.to_str().unwrap()]));
    assert_eq!(rows.len(), 1);
    assert!(col(&rows[0], "distance").abs() < 1e-7);
}

#[test]
fn steering_with_werner_states() {
    let werner = rows(&ok(&["steering", "--state", "werner:0.3", "--eta", "1"]));
    assert!(col(&werner[0], "steering") < 1e-7);
    let bell = rows(&ok(&["steering", "--state", "phi-plus", "--eta", "1"]));
    assert!((col(&bell[0], "steering") - col(&bell[0], "incompatibility")).abs() < 1e-6);
}

#[test]
fn outputs_are_deterministic() {
    let args = ["incompat", "--random", "--d", "2", "--m", "3", "--seed", "9", "--eta-steps", "3"];
    assert_eq!(ok(&args), ok(&args));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut with_out = args.to_vec();
    with_out.extend(["--out", out]);
    assert!(ok(&with_out).is_empty());
    assert_eq!(std::fs::read_to_string(Path::new(out).join("incompat.csv")).unwrap(), ok(&args));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(out).join("incompat.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 3);
    assert!(report[0]["diagnostics"]["iterations"].as_u64().unwrap() > 0);
}

#[test]
fn config_and_file_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let assemblage = dir.path().join("m.json");
    ok(&["mub", "--d", "3", "--m", "2", "--write", assemblage.to_str().unwrap()]);
    let cfg = dir.path().join("run.json");
    let text = format!(
        r#"{{"scenario": {{"kind": "file", "path": {:?}}}, "eta": {{"start": 1, "stop": 1, "steps": 1}}}}"#,
        assemblage.to_str().unwrap()
    );
    std::fs::write(&cfg, text).unwrap();
    let from_file = rows(&ok(&["incompat", "--config", cfg.to_str().unwrap()]));
    let direct = rows(&ok(&["incompat", "--d", "3", "--m", "2", "--eta", "1"]));
    assert!((col(&from_file[0], "value") - col(&direct[0], "value")).abs() < 1e-9);
}

#[test]
fn input_errors_exit_with_code_4() {
    for args in [
        &["incompat", "--d", "4", "--m", "2"][..],
        &["incompat", "--tol", "1e-12"],
        &["incompat", "--input", "/nonexistent/m.json"],
        &["steering", "--state", "werner:2"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(4), "{args:?}");
        let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "input_error");
        assert_eq!(err["exit_code"], 4);
    }
}
