use std::path::Path;
use std::process::{Command, Output};

use vager_core::data::{FeatureFormat, FeatureSet};
use vager_core::eval::report::parse_report_json;
use vager_core::persist::load_model;

fn vager(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vager"))
        .args(args)
        .current_dir(dir)
        .env("VAGER_QUIET", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = vager(dir, args);
    assert!(
        out.status.success(),
        "vager {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: [&str; 10] = [
    "--n-base",
    "6",
    "--d",
    "5",
    "--n-novel",
    "2",
    "--samples-per-base",
    "25",
    "--samples-per-novel",
    "25",
];

fn synth(dir: &Path, seed: &str) {
    let mut args = vec!["synth", "--seed", seed, "--format", "both"];
    args.extend(SMALL);
    ok(dir, &args);
}

fn base_and_model(dir: &Path) {
    synth(dir, "1");
    ok(
        dir,
        &[
            "train-base",
            "--seed",
            "2",
            "--base",
            "base.csv",
            "--out",
            "base.vagc",
            "--epochs",
            "20",
        ],
    );
    ok(
        dir,
        &[
            "embed",
            "--seed",
            "3",
            "--base",
            "base.csv",
            "--weights",
            "base.vagc",
            "--out",
            "model.vagm",
            "--max-outer-iters",
            "50",
        ],
    );
}

fn pipeline_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "pipeline",
        "--seed",
        "4",
        "--out-dir",
        out_dir,
        "--trials",
        "2",
        "--epochs",
        "20",
        "--max-outer-iters",
        "50",
        "--holdout-per-class",
        "3",
    ];
    args.extend(SMALL);
    args.extend(extra);
    args
}

#[test]
fn synth_is_deterministic_and_reloads() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "17");
    synth(b.path(), "17");
    for name in [
        "base.csv",
        "base.bin",
        "novel.csv",
        "novel.bin",
        "truth.csv",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let csv = FeatureSet::load(&a.path().join("base.csv"), FeatureFormat::Csv).unwrap();
    let bin = FeatureSet::load(&a.path().join("base.bin"), FeatureFormat::Binary).unwrap();
    assert_eq!(csv, bin);
    assert_eq!(csv.class_ids().len(), 6);
    assert_eq!(csv.d(), 5);

    let c = tempfile::tempdir().unwrap();
    synth(c.path(), "18");
    assert_ne!(
        std::fs::read(a.path().join("base.csv")).unwrap(),
        std::fs::read(c.path().join("base.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing_seed = vager(dir.path(), &["synth"]);
    assert_eq!(missing_seed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing_seed.stderr).contains("--seed"));
    assert_eq!(
        vager(dir.path(), &["synth", "--seed", "1", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(vager(dir.path(), &["frobnicate"]).status.code(), Some(1));
    let help = vager(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("pipeline"));
    assert_eq!(vager(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn invalid_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = vager(
        dir.path(),
        &[
            "train-base",
            "--seed",
            "1",
            "--base",
            "absent.csv",
            "--out",
            "x.vagc",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(
        dir.path().join("bad.csv"),
        "class_id,sample_id,f0\n1,1,nope\n",
    )
    .unwrap();
    let bad = vager(
        dir.path(),
        &[
            "train-base",
            "--seed",
            "1",
            "--base",
            "bad.csv",
            "--out",
            "x.vagc",
        ],
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(!dir.path().join("x.vagc").exists());
}

#[test]
fn corrupt_model_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    base_and_model(d);
    let good = std::fs::read(d.join("model.vagm")).unwrap();
    let eval = [
        "eval",
        "--seed",
        "5",
        "--base",
        "base.csv",
        "--novel",
        "novel.csv",
        "--model",
        "model.vagm",
        "--trials",
        "2",
        "--epochs",
        "10",
    ];

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    // byte 8 starts the stored class count
    let mut bad_shape = good.clone();
    bad_shape[8] ^= 0x01;
    for corrupt in [bad_magic, bad_shape] {
        std::fs::write(d.join("model.vagm"), &corrupt).unwrap();
        let out = vager(d, &eval);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("stage eval: integrity"), "{err}");
    }

    std::fs::write(d.join("model.vagm"), &good[..good.len() - 9]).unwrap();
    assert_eq!(vager(d, &eval).status.code(), Some(2));

    std::fs::write(d.join("model.vagm"), &good).unwrap();
    ok(d, &eval);
    assert!(d.join("report_k1.json").exists());
}

#[test]
fn stages_compose_and_reports_parse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    base_and_model(d);
    ok(
        d,
        &[
            "transfer",
            "--seed",
            "6",
            "--base",
            "base.csv",
            "--novel",
            "novel.csv",
            "--model",
            "model.vagm",
            "--k",
            "2",
            "--out",
            "t.vagc",
        ],
    );
    for strategy in ["initializing", "tuning", "voting"] {
        ok(
            d,
            &[
                "fuse",
                "--seed",
                "6",
                "--base",
                "base.csv",
                "--novel",
                "novel.csv",
                "--transferred",
                "t.vagc",
                "--k",
                "2",
                "--strategy",
                strategy,
                "--out",
                "f.vagc",
                "--epochs",
                "10",
            ],
        );
    }
    ok(
        d,
        &[
            "eval",
            "--seed",
            "7",
            "--base",
            "base.csv",
            "--novel",
            "novel.csv",
            "--model",
            "model.vagm",
            "--k",
            "1,3",
            "--trials",
            "2",
            "--epochs",
            "10",
            "--roc",
        ],
    );
    for k in [1, 3] {
        let text = std::fs::read_to_string(d.join(format!("report_k{k}.json"))).unwrap();
        let report = parse_report_json(&text).unwrap();
        assert_eq!(report.protocol.k, k);
        assert!(d.join(format!("report_k{k}_trials.csv")).exists());
    }
    let model = load_model(&d.join("model.vagm")).unwrap();
    assert!((model.recompute_loss().unwrap() - model.stats.final_loss).abs() <= 1e-12);
}

#[test]
fn pipeline_is_deterministic_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &pipeline_args("a", &[]));
    ok(d, &pipeline_args("b", &[]));
    let files: Vec<String> = std::fs::read_dir(d.join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for name in [
        "base.csv",
        "novel.csv",
        "truth.csv",
        "base_classifiers.vagc",
        "model.vagm",
        "graph.csv",
        "transferred.vagc",
        "fused.vagc",
        "report_k1.json",
    ] {
        assert!(files.iter().any(|f| f == name), "missing {name}");
    }
    for name in &files {
        assert_eq!(
            std::fs::read(d.join("a").join(name)).unwrap(),
            std::fs::read(d.join("b").join(name)).unwrap(),
            "{name}"
        );
    }

    let report = std::fs::read(d.join("a/report_k1.json")).unwrap();
    ok(d, &pipeline_args("a", &["--resume"]));
    assert_eq!(std::fs::read(d.join("a/report_k1.json")).unwrap(), report);

    let model = d.join("a/model.vagm");
    let mut bytes = std::fs::read(&model).unwrap();
    bytes[8] ^= 0x02;
    std::fs::write(&model, bytes).unwrap();
    let out = vager(d, &pipeline_args("a", &["--resume"]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("stage resume") && err.contains("integrity"),
        "{err}"
    );
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "seed = 3\nn-base = 4\nd = 3\n\n[synth]\nn-novel = 1\nsamples-per-base = 10\nsamples-per-novel = 10\nformat = \"binary\"\n",
    )
    .unwrap();
    ok(d, &["synth", "--config", "run.toml", "--d", "4"]);
    let base = FeatureSet::load(&d.join("base.bin"), FeatureFormat::Binary).unwrap();
    assert_eq!(base.d(), 4);
    assert_eq!(base.class_ids().len(), 4);
    assert!(!d.join("base.csv").exists());

    std::fs::write(d.join("typo.toml"), "seed = 1\nn-bsae = 4\n").unwrap();
    assert_eq!(
        vager(d, &["synth", "--config", "typo.toml"]).status.code(),
        Some(1)
    );
    std::fs::write(d.join("table.toml"), "[synth]\nepochs = 4\n").unwrap();
    assert_eq!(
        vager(d, &["synth", "--seed", "1", "--config", "table.toml"])
            .status
            .code(),
        Some(1)
    );
}
