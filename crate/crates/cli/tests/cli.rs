use std::ffi::OsStr;
use std::path::Path;
use std::process::{Command, Output};

const MODEL: &[&str] = &[
    "--x", "0.5", "--p", "0.5", "--q", "0.5", "--r", "0.5", "--theta-l", "0.5", "--theta-h", "2", "--sigma", "0.3", "--gamma", "1",
    "--seed", "1",
];

fn fluctsel<S: AsRef<OsStr>>(dir: &Path, args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluctsel")).current_dir(dir).args(args).output().expect("binary runs")
}

/// `lead` (a subcommand, or nothing) followed by the model flags and `extra`.
fn args(lead: &[&str], extra: &[&str]) -> Vec<String> {
    lead.iter().chain(MODEL).chain(extra).map(|s| s.to_string()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn minimal_flags_are_enough() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctsel(dir.path(), &args(&[], &["--experiment", "fixation", "--replicas", "1000", "--dt", "1e-2"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("fixation.csv")).unwrap();
    let lines = data_lines(&csv);
    assert_eq!(
        lines[0],
        "batch,replicas,batch_p_fix,running_p_fix,running_se,absorbed_fraction,approx_fixation,correction_t3"
    );
    assert_eq!(lines.len(), 11);
    assert!(csv.contains("# experiment = \"fixation\""));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fixation.csv.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 1);
    assert!(summary["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(summary["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn dual_rejects_explosive_selection() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["dual"];
    args.extend(MODEL.iter().map(|a| if *a == "0.3" { "0.8" } else { a }));
    let out = fluctsel(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("2*sigma^2/gamma < 1"), "{}", stderr(&out));
    assert!(!dir.path().join("dual.csv").exists());
}

#[test]
fn negative_mutation_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = args(&["simulate-limit"], &[]);
    let at = args.iter().position(|a| a == "--theta-l").unwrap();
    args[at + 1] = "-0.5".into();
    let out = fluctsel(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model.theta_l: -0.5 is outside"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[model]\nsigma = 0.3\nsigmaa = 1.0\n").unwrap();
    let out = fluctsel(dir.path(), &args(&[], &["--config", "run.toml", "--experiment", "verify"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sigmaa"), "{}", stderr(&out));
}

#[test]
fn missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctsel(dir.path(), &["simulate-limit", "--x", "0.5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model.sigma"), "{}", stderr(&out));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = "[run]\nexperiment = \"simulate-limit\"\nseed = 5\n\n[model]\nsigma = 0.3\ngamma = 1.0\ntheta_l = 0.5\ntheta_h = 2.0\nr = 0.5\n\n\
                [init]\nx = 0.5\np = 0.5\nq = 0.5\n\n[numerics]\nhorizon = 0.1\ndt = 0.01\n";
    std::fs::write(dir.path().join("run.toml"), file).unwrap();
    let out = fluctsel(dir.path(), &["--config", "run.toml", "--seed", "7", "--output", "path.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(csv.contains("# seed = 7"), "{csv}");
    assert!(csv.contains("# dt = 0.01"), "{csv}");
    assert_eq!(data_lines(&csv).len(), 12);
}

#[test]
fn trajectory_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctsel(dir.path(), &args(&[], &["--experiment", "simulate-limit", "--horizon", "0.05", "--dt", "0.01"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("simulate-limit.csv")).unwrap();
    let lines = data_lines(&csv);
    assert_eq!(lines[0], "t,x_l0,x_l1,x_h0,x_h1,x_h,x_0,D,env");
    assert_eq!(lines[1], "0.0000000000000000e0,2.5000000000000000e-1,2.5000000000000000e-1,2.5000000000000000e-1,2.5000000000000000e-1,5.0000000000000000e-1,5.0000000000000000e-1,0.0000000000000000e0,");
    assert!(lines[1..].iter().all(|l| l.ends_with(',')));

    let out = fluctsel(dir.path(), &args(&["simulate-prelimit"], &["--n-scale", "2", "--horizon", "0.05", "--dt", "0.01"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("simulate-prelimit.csv")).unwrap();
    assert!(data_lines(&csv)[1..].iter().all(|l| l.ends_with(",1") || l.ends_with(",-1")), "{csv}");
}

#[test]
fn results_are_byte_identical_across_runs_and_thread_counts() {
    let args = args(&[], &["--experiment", "fixation", "--replicas", "1000", "--dt", "1e-2", "--batches", "4"]);
    let mut files = Vec::new();
    for threads in ["1", "2", "1"] {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_fluctsel"))
            .current_dir(dir.path())
            .env("FLUCTSEL_THREADS", threads)
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        files.push(std::fs::read(dir.path().join("fixation.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fluctsel"))
        .current_dir(dir.path())
        .env("FLUCTSEL_THREADS", "zero")
        .args(["verify", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("FLUCTSEL_THREADS"));
}

#[test]
fn strict_turns_warnings_into_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // a short time cap leaves most replicas unabsorbed
    let mut args = args(&["fixation"], &["--replicas", "1000", "--dt", "1e-2", "--t-cap", "0.05"]);
    let out = fluctsel(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: only"), "{}", stderr(&out));
    args.push("--strict".into());
    let out = fluctsel(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn verify_reports_pass_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctsel(dir.path(), &["verify", "--seed", "9", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "verify: 6/6 checks passed");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["run"]["seed"], 9);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 6);
    assert!(doc["rows"].as_array().unwrap().iter().all(|r| r["passed"] == true));
}

#[test]
fn dual_reports_a_moment() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctsel(dir.path(), &args(&["dual"], &["--replicas", "1000", "--horizon", "0.5", "--phi", "h1"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("dual.csv")).unwrap();
    let lines = data_lines(&csv);
    assert_eq!(lines[0], "phi,t,estimate,se,replicas,truncated,peak_n,flagged,neutral_closed_form");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "h1");
    let est: f64 = cells[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&est));
}
