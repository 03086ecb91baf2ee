use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy")
}

fn ahgnn(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahgnn"))
        .current_dir(cwd)
        .env_remove("AHGNN_CACHE_DIR")
        .args(args)
        .output()
        .expect("spawn ahgnn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn run_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir.join("run.json"))).expect("run.json parses")
}

/// A planted toy dataset written with `synth --toy`.
fn toy(dir: &Path, seed: &str) -> PathBuf {
    ok(ahgnn(
        dir,
        &[
            "synth",
            "--toy",
            "--target-h",
            "0.7",
            "--nodes",
            "40",
            "--types",
            "3",
            "--seed",
            seed,
            "--out",
            "toy",
        ],
    ));
    dir.join("toy")
}

#[test]
fn analyze_writes_report_and_run_record() {
    let tmp = TempDir::new().unwrap();
    let data = fixture();
    ok(ahgnn(
        tmp.path(),
        &[
            "analyze",
            "--data",
            data.to_str().unwrap(),
            "--max-len",
            "4",
        ],
    ));
    let csv = read(tmp.path().join("homophily_report.csv"));
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("metapath,global_h,n_edges,bin0"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 2, "{csv}");
    assert!(rows.last().unwrap().starts_with("graph,"));
    let run = run_json(tmp.path());
    assert_eq!(run["command"], "analyze");
    assert_eq!(run["seed"], 0);
    assert_eq!(run["config"]["max_len"], 4);
}

#[test]
fn missing_data_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = ahgnn(tmp.path(), &["analyze"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = ahgnn(tmp.path(), &["analyze", "--data", ".", "--frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_dataset_directory_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = ahgnn(tmp.path(), &["precompute", "--data", "no-such-dir"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn help_and_version_exit_cleanly() {
    let tmp = TempDir::new().unwrap();
    let help = ok(ahgnn(tmp.path(), &["--help"]));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in [
        "analyze",
        "precompute",
        "train",
        "eval",
        "synth",
        "verify-spectral",
        "grad-check",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    ok(ahgnn(tmp.path(), &["--version"]));
    let train_help = ok(ahgnn(tmp.path(), &["train", "--help"]));
    assert!(String::from_utf8_lossy(&train_help.stdout).contains("--fixed-gamma"));
}

#[test]
fn precompute_then_train_on_fixture() {
    let tmp = TempDir::new().unwrap();
    let data = fixture();
    let data = data.to_str().unwrap();
    let start = Instant::now();
    ok(ahgnn(
        tmp.path(),
        &[
            "precompute",
            "--data",
            data,
            "--l1",
            "3",
            "--l2",
            "3",
            "--out",
            "cache/toy.ahgc",
        ],
    ));
    assert!(tmp.path().join("cache/toy.ahgc").is_file());
    assert_eq!(run_json(&tmp.path().join("cache"))["command"], "precompute");

    fs::write(
        tmp.path().join("config.json"),
        r#"{"hidden": 16, "heads": 2, "max_epochs": 20, "seed": 5}"#,
    )
    .unwrap();
    ok(ahgnn(
        tmp.path(),
        &[
            "train",
            "--data",
            data,
            "--cache",
            "cache/toy.ahgc",
            "--config",
            "config.json",
            "--out",
            "run",
        ],
    ));
    assert!(start.elapsed() < Duration::from_secs(60));
    let run = tmp.path().join("run");
    for f in [
        "metrics.csv",
        "gamma.csv",
        "beta.csv",
        "model.ahgm",
        "summary.json",
        "run.json",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let metrics = read(run.join("metrics.csv"));
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,loss,val_macro,val_micro"
    );
    assert!(metrics.lines().count() > 1);
    assert!(read(run.join("gamma.csv")).starts_with("path,hop,value\n"));
    assert!(read(run.join("beta.csv")).starts_with("path,beta\n"));
    let record = run_json(&run);
    assert_eq!(record["seed"], 5);
    assert_eq!(record["config"]["train"]["hidden"], 16);

    ok(ahgnn(
        tmp.path(),
        &[
            "eval",
            "--data",
            data,
            "--checkpoint",
            "run/model.ahgm",
            "--cache",
            "cache/toy.ahgc",
            "--out",
            "ev",
        ],
    ));
    let eval = read(tmp.path().join("ev/eval.csv"));
    assert_eq!(eval.lines().count(), 4, "{eval}");
    assert_eq!(
        read(tmp.path().join("ev/predictions.csv")).lines().count(),
        4
    );
}

#[test]
fn stale_cache_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = fixture();
    let data = data.to_str().unwrap();
    ok(ahgnn(
        tmp.path(),
        &["precompute", "--data", data, "--l1", "2", "--out", "c.ahgc"],
    ));
    let out = ahgnn(
        tmp.path(),
        &[
            "train", "--data", data, "--cache", "c.ahgc", "--epochs", "2", "--out", "run",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stale cache"));
}

#[test]
fn bad_training_config_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = fixture();
    fs::write(tmp.path().join("bad.json"), r#"{"learning_rate": 0.1}"#).unwrap();
    let out = ahgnn(
        tmp.path(),
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            "bad.json",
        ],
    );
    assert_eq!(code(&out), 1);
    let out = ahgnn(
        tmp.path(),
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--hidden",
            "10",
            "--heads",
            "4",
        ],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn cache_dir_variable_sets_default_location() {
    let tmp = TempDir::new().unwrap();
    let data = fixture();
    let caches = tmp.path().join("caches");
    let out = Command::new(env!("CARGO_BIN_EXE_ahgnn"))
        .current_dir(tmp.path())
        .env("AHGNN_CACHE_DIR", &caches)
        .args(["precompute", "--data", data.to_str().unwrap()])
        .output()
        .unwrap();
    let out = ok(out);
    let files: Vec<_> = fs::read_dir(&caches)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ahgc"))
        .collect();
    assert_eq!(files.len(), 1, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(files[0].ends_with("-l3-l3.ahgc"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data = toy(tmp.path(), "3");
    let data = data.to_str().unwrap();
    for (dir, threads) in [("a", "1"), ("b", "2")] {
        ok(ahgnn(
            tmp.path(),
            &[
                "--threads",
                threads,
                "analyze",
                "--data",
                data,
                "--out",
                dir,
            ],
        ));
        ok(ahgnn(
            tmp.path(),
            &[
                "--threads",
                threads,
                "train",
                "--data",
                data,
                "--hidden",
                "16",
                "--heads",
                "2",
                "--epochs",
                "15",
                "--seed",
                "9",
                "--out",
                dir,
            ],
        ));
        ok(ahgnn(
            tmp.path(),
            &[
                "synth",
                "--data",
                data,
                "--target-h",
                "0.4",
                "--seed",
                "1",
                "--out",
                &format!("{dir}/rew"),
            ],
        ));
    }
    for f in [
        "homophily_report.csv",
        "metrics.csv",
        "gamma.csv",
        "beta.csv",
        "model.ahgm",
        "rew/edges_A_P.tsv",
    ] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
}

#[test]
fn synth_rewires_and_reports() {
    let tmp = TempDir::new().unwrap();
    let data = toy(tmp.path(), "4");
    let data = data.to_str().unwrap();
    ok(ahgnn(
        tmp.path(),
        &[
            "synth",
            "--data",
            data,
            "--target-h",
            "0.3",
            "--seed",
            "2",
            "--out",
            "low",
        ],
    ));
    let report: serde_json::Value =
        serde_json::from_str(&read(tmp.path().join("low/synth.json"))).unwrap();
    assert_eq!(report["converged"], true);
    assert!((report["achieved_h"].as_f64().unwrap() - 0.3).abs() <= 0.03);
    assert!(tmp.path().join("low/manifest.json").is_file());
    ok(ahgnn(
        tmp.path(),
        &["analyze", "--data", "low", "--out", "low-report"],
    ));

    let stuck = ahgnn(
        tmp.path(),
        &[
            "synth",
            "--data",
            data,
            "--target-h",
            "0.0",
            "--max-iterations",
            "0",
            "--out",
            "stuck",
        ],
    );
    assert_eq!(code(&stuck), 2);
    assert!(tmp.path().join("stuck/manifest.json").is_file());

    let out_of_range = ahgnn(
        tmp.path(),
        &["synth", "--toy", "--target-h", "1.5", "--out", "x"],
    );
    assert_eq!(code(&out_of_range), 1);
    let no_source = ahgnn(tmp.path(), &["synth", "--target-h", "0.5", "--out", "x"]);
    assert_eq!(code(&no_source), 1);
}

#[test]
fn spectral_verification_passes_and_validates() {
    let tmp = TempDir::new().unwrap();
    let out = ok(ahgnn(
        tmp.path(),
        &[
            "verify-spectral",
            "--n",
            "12",
            "--trials",
            "10",
            "--alpha",
            "0.4",
            "--hops",
            "3",
            "--seed",
            "1",
        ],
    ));
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst margin"));
    assert_eq!(read(tmp.path().join("spectral.csv")).lines().count(), 11);
    assert_eq!(run_json(tmp.path())["seed"], 1);
    assert_eq!(
        code(&ahgnn(tmp.path(), &["verify-spectral", "--alpha", "0"])),
        1
    );
    assert_eq!(
        code(&ahgnn(tmp.path(), &["verify-spectral", "--n", "501"])),
        1
    );
}

#[test]
fn grad_check_on_generated_graph() {
    let tmp = TempDir::new().unwrap();
    let out = ok(ahgnn(tmp.path(), &["grad-check", "--samples", "20"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    assert_eq!(run_json(tmp.path())["command"], "grad-check");
}
