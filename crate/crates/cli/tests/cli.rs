use std::path::Path;
use std::process::{Command, Output};

use fbmlab_cli::config::{Command as Cmd, RunConfig};
use proptest::prelude::*;

fn fbmlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbmlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_writes_nine_nodes_starting_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbmlab(dir.path(), &["simulate", "--H", "0.75", "--n", "8", "--T", "1", "--seed", "1", "--output-dir", "out"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/simulate.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    let first: Vec<f64> = rows[0].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0]);
    assert_eq!(stdout(&o), text);
}

#[test]
fn oracle_prints_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbmlab(dir.path(), &["oracle", "--lemma", "a1", "--theta", "2", "--output-dir", "."]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "2.0");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "hurst = 0.7\nwobble = 3\n").unwrap();
    let o = fbmlab(dir.path(), &["rate", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wobble"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "nothing written on a rejected config");
}

#[test]
fn out_of_range_hurst_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbmlab(dir.path(), &["simulate", "--H", "1.2"]);
    assert_eq!(o.status.code(), Some(1));
}

const RATE_ARGS: &[&str] = &[
    "rate", "--hurst", "0.6,0.75", "--n", "2^5..2^8", "--replicates", "200", "--set", "auto_scale=false", "--seed", "42", "--quiet",
];

#[test]
fn rate_output_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let mut args = RATE_ARGS.to_vec();
        args.extend(["--output-dir", sub, "--threads", threads]);
        let o = fbmlab(dir.path(), &args);
        assert!(o.stderr.is_empty(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(dir.path().join(sub).join("rate.csv")).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = RATE_ARGS.to_vec();
    args.extend(["--output-dir", "first"]);
    fbmlab(dir.path(), &args);
    let text = std::fs::read_to_string(dir.path().join("first/rate.manifest")).unwrap();
    let cfg = RunConfig::from_manifest(&text).unwrap();
    let replay: Vec<String> = cfg.settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut args = vec!["rate".to_string(), "--output-dir".into(), "second".into(), "--seed".into(), cfg.master_seed.to_string()];
    for r in &replay {
        args.push("--set".into());
        args.push(r.clone());
    }
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    fbmlab(dir.path(), &argv);
    assert_eq!(
        std::fs::read(dir.path().join("first/rate.csv")).unwrap(),
        std::fs::read(dir.path().join("second/rate.csv")).unwrap()
    );
}

#[test]
fn writes_stay_inside_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    fbmlab(dir.path(), &["oracle", "--output-dir", "results"]);
    fbmlab(dir.path(), &["localtime", "--n", "256", "--paths", "2", "--output-dir", "results"]);
    let top: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec![std::ffi::OsString::from("results")]);
    let mut inner: Vec<String> =
        std::fs::read_dir(dir.path().join("results")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    inner.sort();
    assert_eq!(inner, ["localtime.csv", "localtime.manifest", "oracle.csv", "oracle.manifest"]);
}

#[test]
fn zero_integrand_is_a_degenerate_success() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbmlab(dir.path(), &["rate", "--integrand", "zero", "--n", "16..64", "--replicates", "10", "--set", "auto_scale=false", "-q"]);
    assert_eq!(o.status.code(), Some(0), "an identically zero error is a degenerate success");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip(
        seed in any::<u64>(),
        h in 0.51f64..0.99,
        reps in 1usize..5000,
        auto in any::<bool>(),
        dir in "[a-z]{1,8}",
    ) {
        let overrides = vec![
            ("hurst".to_string(), h.to_string()),
            ("replicates".to_string(), reps.to_string()),
            ("auto_scale".to_string(), auto.to_string()),
        ];
        let cfg = RunConfig::build(Cmd::Rate, None, overrides, dir.into(), Some(seed)).unwrap();
        let back = RunConfig::from_manifest(&cfg.to_manifest()).unwrap();
        prop_assert_eq!(cfg.effective(), back.effective());
    }
}
