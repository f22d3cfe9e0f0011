use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use saccade_oc::signals::{
    generate_synthetic_subject, standard_targets, write_recording, Variability,
};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_saccade-oc"));
    cmd.env_remove("SACCADE_OC_SEED");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = report.as_array().unwrap();
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn verify_catches_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["verify", "--json", "--inject-fault", "sign-flip-a"],
    );
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let oracle = report
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "oracle equivalence")
        .unwrap();
    assert_eq!(oracle["passed"], false);
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--config", "absent/run.cfg", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent/run.cfg"), "{}", stderr(&o));
}

#[test]
fn bad_config_value_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "noise.alpha = plenty\n").unwrap();
    let o = run(dir.path(), &["--config", "run.cfg", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise.alpha"));
}

#[test]
fn unknown_sweep_kind_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(dir.path(), &["sweep", "--kind", "torsion"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn simulate_without_trials_writes_mean_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "cost.q = 1e6\nnoise.alpha = 0.1\n",
    )
    .unwrap();
    let o = run(
        dir.path(),
        &["--config", "run.cfg", "simulate", "--trials", "0"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("trajectory.csv").exists());
    assert!(!dir.path().join("ensemble.csv").exists());
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("time_s,theta_h_deg,vel_h_degps\n"));
    assert!(json(&dir.path().join("summary.json"))["ensemble"].is_null());
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let o = run(
            dir.path(),
            &["--out", sub, "simulate", "--trials", "10000", "--seed", "7"],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(
            ["trajectory.csv", "ensemble.csv", "summary.json"]
                .map(|f| fs::read(dir.path().join(sub).join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_environment_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "data.seed = 3\nrun.trials = 50\n",
    )
    .unwrap();
    let o = bin()
        .current_dir(dir.path())
        .env("SACCADE_OC_SEED", "11")
        .args(["--config", "run.cfg", "simulate"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        json(&dir.path().join("summary.json"))["ensemble"]["seed"],
        11
    );
}

#[test]
fn oblique_simulation_has_two_axes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--direction", "45"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("time_s,theta_h_deg,vel_h_degps,theta_v_deg,vel_v_degps\n"));
}

#[test]
fn fit_synthetic_subject_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let o = run(dir.path(), &["--out", sub, "fit", "--seed", "1"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/fit.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/fit.json")).unwrap());
    let fit = json(&dir.path().join("a/fit.json"));
    assert!(fit["velocity_error"].as_f64().unwrap() < 1.0);
}

#[test]
fn q_only_stage_reports_zero_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["fit", "--stage", "q-only"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fit = json(&dir.path().join("fit.json"));
    assert_eq!(fit["alpha"], 0.0);
    assert!(fit["alpha_search"].is_null());
}

#[test]
fn fit_rejects_fixed_q() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "cost.q = 1e5\n").unwrap();
    assert_eq!(
        run(dir.path(), &["--config", "run.cfg", "fit"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn fit_reads_recording_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let rec = generate_synthetic_subject(
        &standard_targets(),
        8,
        &Variability::default(),
        240.0,
        5,
        "P1",
    )
    .unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    write_recording(&dir.path().join("data/p1.csv"), &rec).unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "data.input = data/p1.csv\ndata.sample_rate = 240\nrun.output = results\n",
    )
    .unwrap();
    let o = run(dir.path(), &["--config", "run.cfg", "fit"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        json(&dir.path().join("results/fit.json"))["velocity_error"]
            .as_f64()
            .unwrap()
            < 1.0
    );
}

#[test]
fn fit_names_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("flat.csv"),
        "trial,time_s,theta_h_deg,theta_v_deg\n0,0,0,0\n0,0.004,0,0\n0,0.008,0,0\n",
    )
    .unwrap();
    fs::write(dir.path().join("run.cfg"), "data.input = flat.csv\n").unwrap();
    let o = run(dir.path(), &["--config", "run.cfg", "fit"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("stage"), "{err}");
}

#[test]
fn sweeps_produce_one_row_per_condition() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["fit"]).status.code(), Some(0));
    for (kind, rows) in [("amplitude", 4), ("direction", 5)] {
        let o = run(
            dir.path(),
            &["sweep", "--kind", kind, "--fit-result", "fit.json"],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let csv = fs::read_to_string(dir.path().join(format!("sweep_{kind}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{csv}");
        let summary = json(&dir.path().join(format!("sweep_{kind}.json")));
        assert_eq!(summary["summary"].as_array().unwrap().len(), rows);
    }
    let labels: Vec<String> = fs::read_to_string(dir.path().join("sweep_amplitude.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(labels, ["6deg@0", "8.5deg@0", "10.4deg@0", "12deg@0"]);
}

#[test]
fn sweep_accepts_inline_parameters() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "cost.q = 1e7\nnoise.alpha = 0.01\n",
    )
    .unwrap();
    let o = run(
        dir.path(),
        &["--config", "run.cfg", "sweep", "--kind", "direction"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("sweep_direction.json"))["q"], 1e7);
}

#[test]
fn sweep_without_fit_result_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--kind", "amplitude"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!dir.path().join("sweep_amplitude.csv").exists());
}
