//! End-to-end checks of the command-line interface: exit codes, output
//! determinism, and the documented example invocations.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ddrf-sim"))
}

fn run(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--output")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn stark_prints_the_predicted_shift() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["stark", "--rabi-hz", "538", "--detuning-hz", "5160"],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("28.0469"), "{text}");
}

#[test]
fn stark_zero_detuning_is_degenerate_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["stark", "--rabi-hz", "500", "--detuning-hz", "0"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_spin_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["bell", "--spin", "C99", "--samples", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn broken_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = Command::new(bin())
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.path())
        .args(["ghz-predict"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ghz_predict_table_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["ghz-predict"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.9780"), "{text}");
    assert!(text.contains("0.8546"), "{text}");
    let out = run(dir.path(), &["ghz-predict", "--perfect"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("1.0000").count(), 14, "{text}");
}

#[test]
fn schedule_emits_validated_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["schedule", "--spins", "C5,C2,C6", "--out", "s.json"],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    let residuals = report["refocus_residuals_us"].as_array().unwrap();
    assert_eq!(residuals.len(), 6);
    for r in residuals {
        assert!(r[1].as_f64().unwrap().abs() < 1e-6);
    }
    // single spin: symmetric two-wait schedule
    let out = run(
        dir.path(),
        &["schedule", "--spins", "C5", "--out", "s1.json"],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s1.json")).unwrap())
            .unwrap();
    assert_eq!(report["ops"].as_array().unwrap().len(), 5);
}

#[test]
fn spectrum_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "spectrum",
        "--from-khz",
        "218",
        "--to-khz",
        "220",
        "--step-hz",
        "500",
        "--spins",
        "C1",
        "--out",
        "a.csv",
    ];
    assert!(run(dir.path(), &args).status.success());
    let mut args2 = args;
    args2[args.len() - 1] = "b.csv";
    assert!(run(dir.path(), &args2).status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "reruns must be byte-identical");
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# seed="));
    assert!(text.lines().nth(1).unwrap().starts_with("rf_freq_hz,"));
}

#[test]
fn spectrum_annotates_known_resonances() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "spectrum",
            "--from-khz",
            "426",
            "--to-khz",
            "436",
            "--step-hz",
            "2000",
            "--spins",
            "C1,C6",
            "--out",
            "r.csv",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("C1 conditional: m=4 at 434.828 kHz"),
        "{text}"
    );
    assert!(
        text.contains("C6 conditional: m=-1 at 426.625 kHz"),
        "{text}"
    );
}

#[test]
fn fit_decay_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.csv");
    let mut csv = String::from("t,v\n");
    for k in 1..=25 {
        let t = 0.8 * k as f64;
        csv.push_str(&format!(
            "{t},{}\n",
            0.5 + 0.5 * (-(t / 6.0f64).powf(1.3)).exp()
        ));
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(
        dir.path(),
        &[
            "fit",
            "--kind",
            "decay",
            "--input",
            path.to_str().unwrap(),
            "--fix-a",
            "0.5",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let t_value: f64 = text
        .split("T = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no T in {text:?}"));
    assert!((t_value - 6.0).abs() < 1e-3, "{text}");
}

#[test]
fn tomo_reports_fidelity_and_witness() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shots.csv");
    // noiseless Bell-state statistics over the four operator strings:
    // sequences A/B detect in proportion to the +-1 outcome probabilities
    let mut csv = String::from("basis,sequence,photon,nuclear_outcomes\n");
    for basis in ["II", "XZ", "YY", "ZX"] {
        for _ in 0..50 {
            // perfect correlations: A-detections carry +1 parity, B carry -1
            csv.push_str(&format!("{basis},A,1,1\n"));
            csv.push_str(&format!("{basis},B,1,-1\n"));
            // a couple of undetected shots to exercise the photon filter
            csv.push_str(&format!("{basis},A,0,1\n"));
            csv.push_str(&format!("{basis},B,0,-1\n"));
        }
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(
        dir.path(),
        &["tomo", "--shots", path.to_str().unwrap(), "--out", "e.csv"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ghz fidelity = 1.0000"), "{text}");
    assert!(text.contains("violated"), "{text}");
    let csv_out = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv_out.contains("pauli_string,value,stderr"));
}

#[test]
fn bell_amplifier_regime_selects_the_starred_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "bell",
            "--spin",
            "C1",
            "--regime",
            "amplifier",
            "--samples",
            "10",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("bell C1*"), "{text}");
    assert!(text.contains("\"C5\""), "{text}");
    assert!(dir.path().join("bell_C1star.json").exists());
}

#[test]
fn nonconverging_fit_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut csv = String::from("t,v\n");
    for k in 1..=12 {
        csv.push_str(&format!("{k},0.5\n"));
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(
        dir.path(),
        &["fit", "--kind", "decay", "--input", path.to_str().unwrap()],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.json");
    std::fs::write(&cfg, "{ broken").unwrap();
    // a broken file pointed to by the env var must be loaded (and rejected)
    let out = Command::new(bin())
        .env("DDRF_SIM_CONFIG", &cfg)
        .arg("--output")
        .arg(dir.path())
        .args(["ghz-predict"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
