//! End-to-end checks of the command-line surface: subcommands, flag
//! overrides, config files, report files and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn authsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_authsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn matrix_check_passes_under_the_default_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = authsim(&["matrix", "--check", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(
        text.contains("grid matches the reference verdicts"),
        "{text}"
    );
    for name in [
        "matrix.json",
        "matrix.csv",
        "overheads.json",
        "overheads.csv",
        "trace.log",
    ] {
        assert!(out_dir.join(name).exists(), "{name} written");
    }
    let csv = fs::read_to_string(out_dir.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 36, "header plus 7x5 cells");
}

#[test]
fn matrix_check_fails_on_a_deviant_scenario() {
    let dir = tempfile::tempdir().unwrap();
    // masking clock skew flips the window protocol's suppress-replay cell
    let cfg = dir.path().join("deviant.json");
    fs::write(&cfg, r#"{ "receiver_lag": 3.0 }"#).unwrap();
    let out = authsim(&[
        "matrix",
        "--check",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "conformance failure exits 1");
    let text = stdout(&out);
    assert!(text.contains("deviation: suppress_replay/isnap"), "{text}");
}

#[test]
fn single_attack_against_single_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let out = authsim(&[
        "attack",
        "--attack",
        "impersonation",
        "--protocol",
        "pkmv1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("impersonation/pkmv1: success"), "{text}");
    assert!(text.contains("sessions_hijacked = 1"), "{text}");
}

#[test]
fn attack_requires_the_attack_flag() {
    let out = authsim(&["attack"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overhead_reports_the_reference_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = authsim(&["overhead", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("6000 bytes/node"), "{text}");
    assert!(text.contains("384000 bytes"), "{text}");
    let csv = fs::read_to_string(dir.path().join("overheads.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "protocol,handshake_bytes,chi_bytes,fleet_bytes,flops_linear,seconds_linear"
    );
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn trace_renders_pipe_separated_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = authsim(&[
        "trace",
        "--protocol",
        "isnap",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(
        stdout(&out).contains("sweep isnap: 100/100 seeded honest runs authorized"),
        "{}",
        stdout(&out)
    );
    let log = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    assert!(log.starts_with("==== honest/isnap ===="), "{log}");
    for line in log.lines().skip(1) {
        assert_eq!(line.matches(" | ").count(), 5, "{line}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "flood_volum": 10 }"#).unwrap();
    let out = authsim(&["matrix", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flood_volum"));
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{ "seed": 7 }"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = authsim(&[
        "matrix",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--protocol",
        "tsa",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let matrix: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("matrix.json")).unwrap()).unwrap();
    assert_eq!(matrix["seed"], 99, "flag wins over the file");
    assert_eq!(matrix["cells"].as_array().unwrap().len(), 7, "one column");
}

#[test]
fn identical_runs_write_identical_files() {
    let run = |dir: &Path| {
        let out = authsim(&["matrix", "--seed", "5", "--out-dir", dir.to_str().unwrap()]);
        assert!(out.status.success());
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for name in [
        "matrix.json",
        "matrix.csv",
        "overheads.json",
        "overheads.csv",
        "trace.log",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} byte-identical"
        );
    }
}

#[test]
fn unknown_protocol_name_is_a_usage_error() {
    let out = authsim(&["trace", "--protocol", "pkmv9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown protocol"));
}
