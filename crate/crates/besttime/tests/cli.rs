//! End-to-end runs of the command-line binary.

use std::io::Write;
use std::process::{Command, Stdio};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_besttime")
}

#[test]
fn learn_weights_recovers_boost_fixture() {
    // Training targets generated from weights (1.0, 0.01); the CLI must
    // recover the ratio.
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("user,slot,actual_rank,metric,metric_rank,activity_level\n");
    let mut state = 99u64;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) % 24) as f64
    };
    for u in 0..50 {
        for s in 0..8 {
            let ra = next();
            let rb = next();
            let target = 1.0 * ra + 0.01 * rb;
            rows.push_str(&format!("u{u},{s},{target},a,{ra},1.0\n"));
            rows.push_str(&format!("u{u},{s},{target},b,{rb},1.0\n"));
        }
    }
    let fixture = dir.path().join("fixture.csv");
    std::fs::write(&fixture, rows).unwrap();
    let spec_path = dir.path().join("spec.toml");

    let out = Command::new(bin())
        .args([
            "learn-weights",
            "--in",
            fixture.to_str().unwrap(),
            "--use-case",
            "boost",
            "--out",
            spec_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());

    let spec_text = std::fs::read_to_string(&spec_path).unwrap();
    let spec: toml::Value = toml::from_str(&spec_text).unwrap();
    let weights = spec["weights"].as_table().unwrap();
    let ratio = weights["b"].as_float().unwrap() / weights["a"].as_float().unwrap();
    assert!(
        (ratio - 0.01).abs() / 0.01 < 0.1,
        "recovered ratio {ratio} off by more than 10%"
    );
}

#[test]
fn errors_are_machine_parseable_on_stderr() {
    let out = Command::new(bin())
        .args(["simulate", "--config", "/nope/missing.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(parsed["error"], "io");
    assert!(parsed["message"].as_str().unwrap().contains("No such file"));
}

#[test]
fn serve_answers_requests_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[[providers]]
metric = "m"
kind = "counter"

[[use_cases]]
id = "uc"
tier = "high"

[use_cases.weights]
m = 1.0
"#;
    let config_path = dir.path().join("deploy.toml");
    std::fs::write(&config_path, config).unwrap();

    let mut child = Command::new(bin())
        .args([
            "serve",
            "--config",
            config_path.to_str().unwrap(),
            "--store",
            dir.path().join("store").to_str().unwrap(),
            "--seed",
            "3",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();

    let monday = 4 * 86_400;
    let request = format!(
        "{{\"use_case\":\"uc\",\"user\":\"nobody\",\"t_start\":{monday},\"t_end\":{},\"n\":2,\"slot_length\":3600}}\n",
        monday + 86_400
    );
    child
        .stdin
        .take()
        .unwrap()
        .write_all(request.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let plan: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    // No published signal: uniform fallback plan, flagged.
    assert_eq!(plan["uniform_fallback"], true);
    assert_eq!(plan["user"], "nobody");
    assert_eq!(plan["slots"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_reports_per_metric_ndcg() {
    let dir = tempfile::tempdir().unwrap();
    let maps = "user,metric,slot_index,score\n\
                u1,m,0,0.9\nu1,m,1,0.5\nu1,m,2,0.1\n";
    let gains = "user,slot,gain\nu1,0,1.0\nu1,1,0.5\nu1,2,0.0\n";
    let maps_path = dir.path().join("maps.csv");
    let gains_path = dir.path().join("gains.csv");
    let out_path = dir.path().join("ndcg.csv");
    std::fs::write(&maps_path, maps).unwrap();
    std::fs::write(&gains_path, gains).unwrap();

    let out = Command::new(bin())
        .args([
            "evaluate",
            "--predictions",
            maps_path.to_str().unwrap(),
            "--actuals",
            gains_path.to_str().unwrap(),
            "--k",
            "3",
            "--out-csv",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mean_ndcg@3"));
    // Prediction order matches the ideal order: NDCG 1.
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.contains("u1,m,3,1.000000,false"));
}
