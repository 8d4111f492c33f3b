//! End-to-end CLI tests: exit codes, the full mock workflow against golden
//! files, and seeded reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_finsight")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed: stdout={} stderr={}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn help_exits_zero() {
    let out = Command::new(binary()).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for subcommand in [
        "ingest",
        "match",
        "viewpoints",
        "keypoints",
        "run",
        "augment",
        "eval",
        "report",
        "curve",
    ] {
        assert!(text.contains(subcommand), "help misses {subcommand}");
    }
}

#[test]
fn subcommand_help_exits_zero() {
    for subcommand in [
        "ingest",
        "match",
        "viewpoints",
        "keypoints",
        "run",
        "augment",
        "eval",
        "report",
        "curve",
    ] {
        let out = Command::new(binary())
            .args([subcommand, "--help"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{subcommand} --help");
    }
}

#[test]
fn unknown_subcommand_exits_two() {
    let out = Command::new(binary()).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_validation_failure_exits_three_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "[step_backends]\nviewpoint = \"ghost\"\n\n[backends.real]\nkind = \"mock\"\nmodel_id = \"m\"\n",
    )
    .unwrap();
    let out = Command::new(binary())
        .args([
            "--config",
            config.to_str().unwrap(),
            "report",
            "--in",
            "x.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let payload: serde_json::Value = serde_json::from_str(stderr.trim()).expect("JSON stderr");
    assert_eq!(payload["error"]["kind"], "config");
    assert_eq!(payload["error"]["path"], "step_backends.viewpoint");
}

#[test]
fn runtime_failure_exits_one_with_json_stderr() {
    let out = Command::new(binary())
        .args(["report", "--in", "/nonexistent/report.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let payload: serde_json::Value = serde_json::from_str(stderr.trim()).expect("JSON stderr");
    assert_eq!(payload["error"]["kind"], "runtime");
}

/// The full documented workflow on the shipped fixtures, compared against
/// golden outputs.
#[test]
fn full_mock_workflow_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let config = fx.join("config.toml");
    let config = config.to_str().unwrap();

    let ingest = run_in(
        dir.path(),
        &[
            "ingest",
            "--in",
            fx.join("corpus.jsonl").to_str().unwrap(),
            "--out",
            "snap.jsonl",
        ],
    );
    assert_ok(&ingest, "ingest");

    let run = run_in(
        dir.path(),
        &[
            "--config",
            config,
            "run",
            "--corpus",
            "snap.jsonl",
            "--input",
            fx.join("input.txt").to_str().unwrap(),
            "--mode",
            "fllm_123",
            "--out",
            "runs",
        ],
    );
    assert_ok(&run, "run");
    let run_info: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&run.stdout).trim()).unwrap();
    let record_path = dir.path().join(run_info["record"].as_str().unwrap());
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    let prompt = record["output"]["final_prompt"].as_str().unwrap();
    for marker in [
        "### INPUT",
        "### MATERIALS",
        "### VIEWPOINTS",
        "### KEYPOINTS",
    ] {
        assert_eq!(prompt.matches(marker).count(), 1, "marker {marker}");
    }

    for (task, pred, gold) in [
        ("ema", "gold/ema_pred.jsonl", "gold/ema_gold.jsonl"),
        ("vqe", "gold/vqe_pred.jsonl", "gold/vqe_gold.jsonl"),
        ("kpe", "gold/kpe_pred.jsonl", "gold/kpe_gold.jsonl"),
    ] {
        let eval = run_in(
            dir.path(),
            &[
                "eval",
                "--task",
                task,
                "--pred",
                fx.join(pred).to_str().unwrap(),
                "--gold",
                fx.join(gold).to_str().unwrap(),
                "--out",
                "report.json",
                "--label",
                "fixture-demo",
            ],
        );
        assert_ok(&eval, task);
    }

    let report = run_in(
        dir.path(),
        &[
            "report",
            "--in",
            "report.json",
            "--format",
            "markdown",
            "--out",
            "report.md",
        ],
    );
    assert_ok(&report, "report");
    let got = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    let golden = std::fs::read_to_string(fx.join("golden/report.md")).unwrap();
    assert_eq!(got, golden, "markdown report drifted from golden file");

    let curve = run_in(
        dir.path(),
        &[
            "curve",
            "--plan",
            fx.join("curve_plan.json").to_str().unwrap(),
            "--out",
            "curve.csv",
        ],
    );
    assert_ok(&curve, "curve");
    let got = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let golden = std::fs::read_to_string(fx.join("golden/curve.csv")).unwrap();
    assert_eq!(got, golden, "curve CSV drifted from golden file");
}

#[test]
fn augment_with_same_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let config = fx.join("config.toml");
    let args = |out: &str| {
        vec![
            "--config".to_string(),
            config.to_str().unwrap().to_string(),
            "augment".to_string(),
            "--pool".to_string(),
            fx.join("pool.jsonl").to_str().unwrap().to_string(),
            "--kb".to_string(),
            fx.join("kb.jsonl").to_str().unwrap().to_string(),
            "--config".to_string(),
            "fae+fadom".to_string(),
            "--backend".to_string(),
            "scripted".to_string(),
            "--seed".to_string(),
            "7".to_string(),
            "--out".to_string(),
            out.to_string(),
        ]
    };
    let first = Command::new(binary())
        .current_dir(dir.path())
        .args(args("a/records.jsonl"))
        .output()
        .unwrap();
    assert_ok(&first, "augment run 1");
    let second = Command::new(binary())
        .current_dir(dir.path())
        .args(args("b/records.jsonl"))
        .output()
        .unwrap();
    assert_ok(&second, "augment run 2");
    let a = std::fs::read(dir.path().join("a/records.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/records.jsonl")).unwrap();
    assert_eq!(a, b, "same seed must give identical augmentation records");
    assert!(
        dir.path().join("a/trace").is_dir(),
        "traces written next to records"
    );

    // --no-trace suppresses the trace directory.
    let third = Command::new(binary())
        .current_dir(dir.path())
        .args(args("c/records.jsonl"))
        .arg("--no-trace")
        .output()
        .unwrap();
    assert_ok(&third, "augment run 3");
    assert!(!dir.path().join("c/trace").exists());
}

#[test]
fn run_records_identical_across_runs_modulo_timings() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let config = fx.join("config.toml");
    let mut records = Vec::new();
    for out in ["r1", "r2"] {
        let run = run_in(
            dir.path(),
            &[
                "--config",
                config.to_str().unwrap(),
                "run",
                "--corpus",
                fx.join("corpus.jsonl").to_str().unwrap(),
                "--input",
                fx.join("input.txt").to_str().unwrap(),
                "--mode",
                "fllm_12",
                "--out",
                out,
            ],
        );
        assert_ok(&run, "run");
        let info: serde_json::Value =
            serde_json::from_str(String::from_utf8_lossy(&run.stdout).trim()).unwrap();
        let mut record: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(info["record"].as_str().unwrap())).unwrap(),
        )
        .unwrap();
        record["output"]["stage_timings_ms"] = serde_json::Value::Null;
        for stage in record["stages"].as_array_mut().unwrap() {
            stage["elapsed_ms"] = serde_json::Value::Null;
        }
        records.push(record);
    }
    assert_eq!(records[0], records[1]);
}

#[test]
fn match_writes_jsonl_of_matches() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let out = run_in(
        dir.path(),
        &[
            "match",
            "--corpus",
            fx.join("corpus.jsonl").to_str().unwrap(),
            "--query-file",
            fx.join("input.txt").to_str().unwrap(),
            "-k",
            "3",
        ],
    );
    assert_ok(&out, "match");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 3);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["rank"], 1);
    assert!(first["score"].as_f64().unwrap() > 0.0);
}

#[test]
fn viewpoints_then_keypoints_pipeline_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let config = fx.join("config.toml");
    let matched = run_in(
        dir.path(),
        &[
            "match",
            "--corpus",
            fx.join("corpus.jsonl").to_str().unwrap(),
            "--query-file",
            fx.join("input.txt").to_str().unwrap(),
            "-k",
            "2",
            "--out",
            "matched.jsonl",
        ],
    );
    assert_ok(&matched, "match");

    let viewpoints = run_in(
        dir.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "viewpoints",
            "--in",
            "matched.jsonl",
            "--corpus",
            fx.join("corpus.jsonl").to_str().unwrap(),
            "--backend",
            "scripted",
            "--min-label",
            "good",
            "--budget",
            "4000",
            "--out",
            "viewpoints.jsonl",
        ],
    );
    assert_ok(&viewpoints, "viewpoints");
    let content = std::fs::read_to_string(dir.path().join("viewpoints.jsonl")).unwrap();
    let last = content.lines().last().unwrap();
    let selection: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(selection["budget_chars"].as_u64().unwrap() == 4000);
    assert!(selection["total_chars"].as_u64().unwrap() <= 4000);

    let keypoints = run_in(
        dir.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "keypoints",
            "--in",
            "viewpoints.jsonl",
            "--input-file",
            fx.join("input.txt").to_str().unwrap(),
            "--backend",
            "scripted",
            "--out",
            "keypoints.json",
        ],
    );
    assert_ok(&keypoints, "keypoints");
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("keypoints.json")).unwrap())
            .unwrap();
    assert_eq!(record["industry"], "real estate");
    assert_eq!(record["sentiment"], "positive");
}

#[test]
fn table_fixtures_render_via_report_command() {
    let fx = fixtures();
    for table in ["table1.json", "table2.json", "table3.json", "table4.json"] {
        let out = Command::new(binary())
            .args([
                "report",
                "--in",
                fx.join("tables").join(table).to_str().unwrap(),
                "--format",
                "markdown",
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{table} renders");
    }
}
