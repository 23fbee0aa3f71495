//! End-to-end tests of the command-line interface: file outputs, exit
//! statuses and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn perfkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfkit")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, contents: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_writes_default_phantom() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    std::fs::create_dir(&out).unwrap();
    let config = write_config(tmp.path(), "{}");
    let result = perfkit(&["simulate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let csv = String::from_utf8(read(&out.join("dataset.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 625);
    assert!(lines[0].starts_with("row,col,mask,t=0.15,"));
    assert_eq!(lines[0].split(',').count(), 3 + 40);
    assert_eq!(lines[1].split(',').count(), 3 + 40);
    for name in ["dataset.json", "truth_k_ep1.csv", "truth_blocks.csv", "config.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn simulate_is_byte_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "{}");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        std::fs::create_dir(out).unwrap();
        let result = perfkit(&[
            "simulate",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert!(result.status.success());
    }
    for name in [
        "dataset.csv",
        "dataset.json",
        "truth_k_ep1.csv",
        "truth_k_ep2.csv",
        "truth_k_trans1.csv",
        "truth_k_trans2.csv",
        "truth_v_t1.csv",
        "truth_v_t2.csv",
        "truth_blocks.csv",
        "config.json",
    ] {
        assert_eq!(read(&out_a.join(name)), read(&out_b.join(name)), "{name} differs");
    }
}

#[test]
fn simulate_missing_out_dir_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "{}");
    let missing = tmp.path().join("not_there");
    let result = perfkit(&["simulate", "--config", &config, "--out", missing.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("not_there"), "stderr should name the path: {stderr}");
}

#[test]
fn unknown_model_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "{}");
    let result = perfkit(&[
        "fit",
        "--data",
        tmp.path().to_str().unwrap(),
        "--model",
        "3comp",
        "--prior",
        "spatial",
        "--config",
        &config,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bad_config_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    std::fs::create_dir(&out).unwrap();
    let config =
        write_config(tmp.path(), r#"{"priors": {"spatial": {"a_theta": [-1.0, 1000.0]}}}"#);
    let result = perfkit(&["simulate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

/// Noiseless, jitter-free single-block phantom: fit, summarize with truth,
/// compare a fit against itself.
#[test]
fn noiseless_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "phantom": {
                "nx": 6, "ny": 6, "sigma": 0.0, "jitter_lo": 1.0, "jitter_hi": 1.0,
                "blocks": [{"label": "A", "rows": [1, 6], "cols": [1, 6],
                            "k_ep1": 0.2, "k_ep2": 4.0, "v_t1": 0.5, "v_t2": 0.5}]
            },
            "sampler": {"burn_in": 6000, "iterations": 1500, "thin": 3, "seed": 3,
                        "progress_interval": 0},
            "noise": {"a": 3.0, "b": 0.002}
        }"#,
    );
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    std::fs::create_dir(&data).unwrap();
    std::fs::create_dir(&fit).unwrap();

    let result = perfkit(&["simulate", "--config", &config, "--out", data.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let result = perfkit(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "2comp",
        "--prior",
        "spatial",
        "--config",
        &config,
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(fit.join("chain_0/samples_voxels.csv").exists());
    assert!(fit.join("summary.json").exists());

    let result = perfkit(&[
        "summarize",
        "--fit",
        fit.to_str().unwrap(),
        "--truth",
        data.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    let rel_err: f64 = stdout
        .lines()
        .find(|l| l.starts_with("block,A,k_trans1,"))
        .and_then(|l| l.split(',').nth(4))
        .expect("k_trans1 block row present")
        .parse()
        .unwrap();
    assert!(rel_err < 0.05, "noiseless fit should recover k_trans1, rel err {rel_err}");

    let result = perfkit(&[
        "compare",
        "--fit-a",
        fit.to_str().unwrap(),
        "--fit-b",
        fit.to_str().unwrap(),
        "--truth",
        data.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    for line in stdout.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[6].parse::<f64>().unwrap(), 0.0, "self-compare sse delta: {line}");
        assert_eq!(fields[9].parse::<f64>().unwrap(), 0.0, "self-compare dic delta: {line}");
    }
    // Global row plus one block row and one row per voxel.
    assert_eq!(stdout.lines().count(), 1 + 36 + 1 + 1);
}

#[test]
fn multi_chain_fit_writes_per_chain_stores() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "phantom": {
                "nx": 4, "ny": 4, "sigma": 0.03,
                "blocks": [{"label": "A", "rows": [1, 4], "cols": [1, 4],
                            "k_ep1": 0.2, "k_ep2": 4.0, "v_t1": 0.5, "v_t2": 0.5}]
            },
            "sampler": {"burn_in": 60, "iterations": 30, "thin": 3, "seed": 9,
                        "progress_interval": 0}
        }"#,
    );
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    std::fs::create_dir(&data).unwrap();
    std::fs::create_dir(&fit).unwrap();
    assert!(perfkit(&["simulate", "--config", &config, "--out", data.to_str().unwrap()])
        .status
        .success());
    let result = perfkit(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "1comp",
        "--prior",
        "voxelwise",
        "--config",
        &config,
        "--out",
        fit.to_str().unwrap(),
        "--chains",
        "3",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for k in 0..3 {
        assert!(fit.join(format!("chain_{k}/samples_voxels.csv")).exists());
    }
    let summary = String::from_utf8(read(&fit.join("summary.json"))).unwrap();
    assert!(summary.contains("\"chain_seeds\": ["));
    assert!(summary.contains("9,"));
}

#[test]
fn invalid_thread_cap_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "phantom": {
                "nx": 3, "ny": 3, "sigma": 0.03,
                "blocks": [{"label": "A", "rows": [1, 3], "cols": [1, 3],
                            "k_ep1": 0.2, "k_ep2": 4.0, "v_t1": 0.5, "v_t2": 0.5}]
            },
            "sampler": {"burn_in": 10, "iterations": 9, "thin": 3, "progress_interval": 0}
        }"#,
    );
    let data = tmp.path().join("data");
    let out = tmp.path().join("fit");
    std::fs::create_dir(&data).unwrap();
    std::fs::create_dir(&out).unwrap();
    assert!(perfkit(&["simulate", "--config", &config, "--out", data.to_str().unwrap()])
        .status
        .success());
    let result = Command::new(env!("CARGO_BIN_EXE_perfkit"))
        .env("PERFKIT_THREADS", "zero")
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "2comp",
            "--prior",
            "spatial",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    // A valid cap works.
    let result = Command::new(env!("CARGO_BIN_EXE_perfkit"))
        .env("PERFKIT_THREADS", "2")
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "2comp",
            "--prior",
            "spatial",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
            "--chains",
            "2",
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
}
