//! End-to-end checks of the binary surface: config files, estimator
//! filtering, and the failure mode for contradictory flags.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_avs-doa"))
}

#[test]
fn runs_from_a_config_file_and_filters_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("experiment.json");
    std::fs::write(
        &config_path,
        r#"{
            "label": "smoke",
            "scenario": { "geometry": "ula", "sensors": 4 },
            "doas_deg": [-30.0, 25.0],
            "source": "circular_complex_normal",
            "noise": "circular_complex_normal",
            "axis": "sample_size",
            "axis_values": [200],
            "snr_db": 10.0,
            "trials": 2,
            "seed": 5,
            "estimators": ["ejd", "cpd", "kld"]
        }"#,
    )
    .unwrap();

    let out = dir.path().join("out");
    let status = bin()
        .args(["--config"])
        .arg(&config_path)
        .args(["--estimators", "cpd,kld", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.contains(",cpd,") && csv.contains(",kld,"));
    assert!(!csv.contains(",ejd,"), "ejd rows must be filtered out:\n{csv}");
    // 1 point × 2 azimuths × 2 estimators + header.
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn rejects_missing_or_conflicting_selection() {
    let status = bin().status().unwrap();
    assert!(!status.success(), "a config or preset is required");

    let out = bin()
        .args(["--preset", "fig1a", "--estimators", "music"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown estimator"), "stderr: {stderr}");
}
