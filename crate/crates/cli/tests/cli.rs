use std::path::Path;
use std::process::{Command, Output};

fn fcssim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcssim")).args(args).current_dir(dir).env("FCSSIM_THREADS", "2").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--bench", "flex-v-s", "--iterations", "2", "--partition-words", "64"];

#[test]
fn pipeline_writes_metrics_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["pipeline", "--configs", "SDD,FCS+fwd,FCS+pred", "--out", "out", "--dump-selection"];
    args.extend_from_slice(SMALL);
    let o = fcssim(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.starts_with("config,benchmark,cycles,bytes"));
    let normalized = std::fs::read_to_string(out.join("normalized.csv")).unwrap();
    assert!(normalized.contains("SDD,flex-v-s,1.0000,1.0000"), "{normalized}");
    for name in ["flex-v-s.trace", "flex-v-s.SDD.sel", "flex-v-s.FCS-fwd.sel", "flex-v-s.FCS-pred.sel"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn saved_trace_and_selection_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["pipeline", "--configs", "FCS+pred", "--out", "out", "--dump-selection"];
    args.extend_from_slice(SMALL);
    assert!(fcssim(&args, dir.path()).status.success());
    let o = fcssim(
        &["simulate", "--configs", "FCS+pred", "--trace", "out/flex-v-s.trace", "--selection", "out/flex-v-s.FCS-pred.sel"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(stdout(&o).lines().nth(1), metrics.lines().nth(1));
}

#[test]
fn unknown_configuration_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = fcssim(&["simulate", "--configs", "MESI"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("MESI") && err.contains("FCS+pred"), "{err}");
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fcssim(&["simulate", "--iterations", "many"], dir.path()).status.code(), Some(2));
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = fcssim(&["pipeline", "--configs", "SMG,FCS", "--seed", "9", "--print-config"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    std::fs::write(dir.path().join("fcs.toml"), &text).unwrap();
    let again = fcssim(&["pipeline", "--config", "fcs.toml", "--print-config"], dir.path());
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&again), text);
}

#[test]
fn check_exit_status_reflects_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fcssim(&["check", "--addresses", "1", "--ops-per-core", "1", "--features", "baseline,fwd,pred"], dir.path());
    assert_eq!(clean.status.code(), Some(0), "{}", stderr(&clean));
    assert_eq!(stdout(&clean).lines().count(), 4);
    let broken = fcssim(&["check", "--addresses", "1", "--mutations", "skip-revoke", "--format", "text"], dir.path());
    assert_eq!(broken.status.code(), Some(3));
    assert!(stdout(&broken).contains("SingleOwner"), "{}", stdout(&broken));
}

#[test]
fn report_normalizes_saved_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--configs", "SMG,FCS", "--out", "run"];
    args.extend_from_slice(SMALL);
    assert!(fcssim(&args, dir.path()).status.success());
    let o = fcssim(&["report", "--baseline", "SMG", "run/metrics.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("SMG,flex-v-s,1.0000,1.0000"), "{}", stdout(&o));
}
