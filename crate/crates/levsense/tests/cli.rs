use std::path::Path;
use std::process::{Command, Output};

fn levsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levsense")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"eta": 1.5}"#).unwrap();
    let bad = bad.to_str().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    for args in [
        vec!["run", "fig3-amplified", "--config", bad, "--out", out],
        vec!["run", "no-such-preset"],
        vec!["run", "fig3-amplified", "--bogus"],
        vec!["sensitivity", "--r-grid", "7", "--trials", "20", "--out", out],
        vec!["run", "fig3-amplified", "--trials", "1", "--out", out],
    ] {
        let o = levsense(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = levsense(&["run", "fig3-amplified", "--config", bad, "--out", out]);
    assert!(stderr(&o).contains("eta"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = levsense(&["schedule", "--config", "/nonexistent/levsense.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(levsense(&["--help"]).status.code(), Some(0));
    assert_eq!(levsense(&["--version"]).status.code(), Some(0));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = levsense(&[
            "run", "fig3-amplified", "--seed", "7", "--trials", "40", "--workers", workers, "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "3"));
    for rel in ["summary.csv", "manifest.json"] {
        let x = read(&a, rel);
        assert_eq!(x, read(&b, rel), "{rel}");
        assert_eq!(x, read(&c, rel), "{rel}");
    }
    for rel in ["r2.0000_tau100ns/ensemble.csv", "r3.4641_tau100ns/ensemble.csv"] {
        assert_eq!(read(&a, rel), read(&c, rel), "{rel}");
    }
}

#[test]
fn schedule_prints_json_segments() {
    let o = levsense(&["schedule", "--r", "sqrt(12)", "--tau-ns", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let segs: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let kinds: Vec<&str> = segs.as_array().unwrap().iter().map(|s| s["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"kick") && kinds.contains(&"soft"), "{kinds:?}");
    assert_eq!(kinds.last(), Some(&"readout"));
    let soft = segs.as_array().unwrap().iter().find(|s| s["kind"] == "soft").unwrap();
    assert!((soft["freq_ratio"].as_f64().unwrap() - 1.0 / 12f64.sqrt()).abs() < 1e-12);
}

#[test]
fn trace_writes_readable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = levsense(&["trace", "--r", "2", "--tau-ns", "100", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = levsense::formats::read_record_csv(read(&out, "record.csv").as_slice()).unwrap();
    let bin = levsense::formats::read_record_binary(read(&out, "record.lkr").as_slice()).unwrap();
    assert_eq!(csv.samples, bin.samples);
    let schedule = String::from_utf8(read(&out, "schedule.json")).unwrap();
    let s = levsense::formats::schedule_from_json(&schedule, &levsense::config::RunConfig::default().params()).unwrap();
    assert!((s.squeeze_ratio - 2.0).abs() < 1e-12);
    let traj = String::from_utf8(read(&out, "trajectory.csv")).unwrap();
    assert!(traj.starts_with("t_s,q_hat,p_hat,v_qq,v_qp,v_pp"));
}

#[test]
fn sensitivity_preset_lands_in_the_expected_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = levsense(&["run", "fig5-sensitivity", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(read(&out, "sensitivity.csv")).unwrap();
    let mut rows = text.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(header[..6], ["r", "sigma_tot", "dp_min_zp", "dp_min_kev_c", "db_vs_ideal", "db_vs_pzp"]);
    let last: Vec<f64> = rows.last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 12f64.sqrt()).abs() < 1e-6);
    assert!((5.8..=7.7).contains(&last[3]), "dp_min = {} keV/c", last[3]);
}
