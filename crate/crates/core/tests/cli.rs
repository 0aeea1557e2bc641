mod common;

use std::fs;
use std::time::Duration;

use common::{completion, fixture, serve};
use shg::cli::{dispatch, EXIT_ANALYSIS, EXIT_CORPUS, EXIT_OK, EXIT_USAGE};
use shg::runner::read_records;

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("shg").chain(list.iter().copied()).map(String::from).collect()
}

fn p(path: &std::path::Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dispatch(args(&["frobnicate"])), EXIT_USAGE);
    assert_eq!(dispatch(args(&["validate", "--bogus"])), EXIT_USAGE);
    assert_eq!(dispatch(args(&[])), EXIT_USAGE);
    assert_eq!(dispatch(args(&["--help"])), EXIT_OK);
}

#[test]
fn validate_fixture() {
    let manifest = fixture("manifest.json");
    assert_eq!(dispatch(args(&["validate", "--corpus", p(&manifest)])), EXIT_OK);
    assert_eq!(dispatch(args(&["validate", "--corpus", "/nonexistent/manifest.json"])), EXIT_CORPUS);
}

#[test]
fn replicate_is_deterministic() {
    let manifest = fixture("manifest.json");
    let records = fixture("runs.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let code = dispatch(args(&[
            "replicate",
            "--records",
            p(&records),
            "--corpus",
            p(&manifest),
            "--out",
            p(out),
            "--seed",
            "5",
            "--resamples",
            "300",
        ]));
        assert_eq!(code, EXIT_OK);
    }
    for name in [
        "agreement.csv",
        "alpha.csv",
        "error.csv",
        "calibration.csv",
        "figure_data.csv",
        "leaderboard.csv",
        "bundle.json",
    ] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
    let agreement = fs::read_to_string(a.join("agreement.csv")).unwrap();
    let gpt5 = agreement.lines().find(|l| l.starts_with("gpt5-reasoning-high,")).unwrap();
    assert!(gpt5.contains(",0.974,"), "{gpt5}");
    assert_eq!(agreement.lines().count(), 11);
}

#[test]
fn rank_and_empty_records() {
    let manifest = fixture("manifest.json");
    let records = fixture("runs.jsonl");
    assert_eq!(
        dispatch(args(&["rank", "--records", p(&records), "--corpus", p(&manifest), "--resamples", "10"])),
        EXIT_OK
    );
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let code = dispatch(args(&[
        "replicate",
        "--records",
        p(&empty),
        "--corpus",
        p(&manifest),
        "--out",
        p(dir.path()),
    ]));
    assert_eq!(code, EXIT_ANALYSIS);
}

#[test]
fn run_then_resume() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mock = rt.block_on(serve(Duration::ZERO, |_, _| (200, completion("FINAL SCORE: 0.9"))));
    // SAFETY: no other test reads this variable
    unsafe { std::env::set_var("SHG_CLI_TEST_KEY", common::TOKEN) };

    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models.json");
    let cfgs = vec![mock.config("a"), mock.config("b")];
    fs::write(&models, serde_json::to_string(&cfgs).unwrap()).unwrap();
    let records = dir.path().join("out").join("runs.jsonl");
    let manifest = fixture("manifest.json");

    let run = |extra: &[&str]| {
        let mut a = vec![
            "run",
            "--corpus",
            p(&manifest),
            "--records",
            p(&records),
            "--models",
            p(&models),
            "--runs",
            "2",
            "--api-key-env",
            "SHG_CLI_TEST_KEY",
        ];
        a.extend_from_slice(extra);
        dispatch(args(&a))
    };
    assert_eq!(run(&[]), EXIT_OK);
    assert_eq!(mock.hits(), 48);
    assert_eq!(read_records(&records).unwrap().len(), 48);
    assert!(dir.path().join("out").join("runs.raw.jsonl").exists());

    // refuses to append without --resume
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["--resume"]), EXIT_OK);
    assert_eq!(mock.hits(), 48);
    assert_eq!(read_records(&records).unwrap().len(), 48);
}
