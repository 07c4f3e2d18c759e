//! End-to-end checks of the binary: artifact layout, exit codes, override
//! handling, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protofed"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("protofed-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn run_to_completion(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn smoke_run_writes_all_artifacts() {
    let dir = temp_dir("smoke");
    let out = dir.join("out");
    let started = Instant::now();
    let output = run_to_completion(
        bin()
            .args(["run", "--clients", "3", "--rounds", "2", "--local-iterations", "5"])
            .args(["--seed", "7", "--output-dir"])
            .arg(&out),
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    assert!(started.elapsed().as_secs() < 30, "smoke run took {:?}", started.elapsed());

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "round,taa,tal,params_transmitted,winner,mine_trials");
    assert_eq!(metrics.lines().count(), 3);
    assert!(out.join("chain.jsonl").exists());
    assert!(out.join("heatmap.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds_total"], 2);
    assert_eq!(summary["chain_blocks"], 2);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = temp_dir("determinism");
    let config = write_config(
        &dir,
        "exp.toml",
        "clients = 4\nrounds = 3\nlocal_iterations = 4\nseed = 99\n[synth]\nclasses = 5\nper_class = 40\ndim = 12\n",
    );
    let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for pass in 0..2 {
        let out = dir.join(format!("out{pass}"));
        let output = run_to_completion(bin().arg("run").arg("--config").arg(&config).arg("--output-dir").arg(&out));
        assert!(output.status.success(), "stderr: {}", stderr_of(&output));
        artifacts.push(
            ["metrics.csv", "metrics.json", "chain.jsonl", "heatmap.csv", "summary.json"]
                .iter()
                .map(|name| (name.to_string(), std::fs::read(out.join(name)).unwrap()))
                .collect(),
        );
    }
    for (a, b) in artifacts[0].iter().zip(&artifacts[1]) {
        assert_eq!(a.1, b.1, "{} differs across reruns", a.0);
    }
}

#[test]
fn missing_mnist_directory_is_a_config_error() {
    let dir = temp_dir("missing-data");
    let output = run_to_completion(
        bin()
            .args(["run", "--dataset", "mnist", "--data-dir"])
            .arg(dir.join("nowhere"))
            .arg("--output-dir")
            .arg(dir.join("out"))
            .env_remove("PROTOFED_DATA_DIR"),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("dataset not found"), "stderr: {}", stderr_of(&output));
}

#[test]
fn invalid_lambda_names_the_field_and_exits_2() {
    let dir = temp_dir("bad-lambda");
    let config = write_config(&dir, "exp.toml", "lambda = -1.0\n");
    let output = run_to_completion(bin().arg("run").arg("--config").arg(&config));
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("lambda"));
}

#[test]
fn budget_triple_drives_the_bounds_sweep() {
    let dir = temp_dir("bounds");
    let config = write_config(
        &dir,
        "exp.toml",
        "rounds = 6\n[budget]\nt_sum = 100.0\nalpha = 1.0\nbeta = 4.0\n",
    );
    let out = dir.join("out");
    let output = run_to_completion(
        bin().arg("bounds").arg("--config").arg(&config).arg("--output-dir").arg(&out).args(["--max-rounds", "10"]),
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let bounds = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    let row = bounds.lines().find(|l| l.starts_with("6,")).unwrap();
    assert_eq!(row, "6,12,76,72,");

    // Without a [budget] triple the sweep is a config error.
    let empty = write_config(&dir, "empty.toml", "");
    let output = run_to_completion(bin().arg("bounds").arg("--config").arg(&empty).arg("--output-dir").arg(&out));
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn run_with_budget_triple_resolves_iterations() {
    let dir = temp_dir("budget-run");
    let config = write_config(
        &dir,
        "exp.toml",
        "rounds = 2\nclients = 3\nseed = 5\n[synth]\nclasses = 4\nper_class = 30\ndim = 8\n[budget]\nt_sum = 20.0\nalpha = 1.0\nbeta = 4.0\n",
    );
    let out = dir.join("out");
    let output = run_to_completion(bin().arg("run").arg("--config").arg(&config).arg("--output-dir").arg(&out));
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    // t_sum/R - beta = 6 iterations at alpha = 1; the run also leaves a
    // bounds.csv because the budget triple is known.
    let bounds = std::fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(bounds.lines().any(|l| l.starts_with("2,6,12,12,")), "bounds: {bounds}");
}

#[test]
fn validate_chain_round_trips_and_rejects_tampering() {
    let dir = temp_dir("validate");
    let out = dir.join("out");
    let output = run_to_completion(
        bin()
            .args(["run", "--clients", "3", "--rounds", "3", "--local-iterations", "3", "--seed", "11"])
            .arg("--output-dir")
            .arg(&out),
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    let chain_path = out.join("chain.jsonl");
    let output = run_to_completion(bin().arg("validate-chain").arg("--path").arg(&chain_path));
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    // Flip one hex digit of a payload hash.
    let text = std::fs::read_to_string(&chain_path).unwrap();
    let idx = text.find("\"payload_hash\":\"").unwrap() + "\"payload_hash\":\"".len();
    let mut bytes = text.into_bytes();
    bytes[idx] = if bytes[idx] == b'0' { b'1' } else { b'0' };
    let tampered_path = dir.join("tampered.jsonl");
    std::fs::write(&tampered_path, bytes).unwrap();
    let output = run_to_completion(bin().arg("validate-chain").arg("--path").arg(&tampered_path));
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr_of(&output));

    // A missing file is an I/O error.
    let output = run_to_completion(bin().arg("validate-chain").arg("--path").arg(dir.join("absent.jsonl")));
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn partition_subcommand_writes_only_the_heatmap() {
    let dir = temp_dir("partition");
    let out = dir.join("out");
    let output = run_to_completion(
        bin()
            .args(["partition", "--clients", "4", "--seed", "3"])
            .arg("--output-dir")
            .arg(&out),
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let heatmap = std::fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heatmap.starts_with("client,0,1,"));
    assert_eq!(heatmap.lines().count(), 5);
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn mnist_fixture_run_works_against_idx_files() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mnist");
    let dir = temp_dir("mnist");
    let out = dir.join("out");
    let output = run_to_completion(
        bin()
            .args(["run", "--dataset", "mnist", "--clients", "3", "--rounds", "1", "--local-iterations", "3"])
            .arg("--data-dir")
            .arg(&fixtures)
            .arg("--output-dir")
            .arg(&out),
    );
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}
