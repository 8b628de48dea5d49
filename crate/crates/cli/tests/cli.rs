//! End-to-end checks of the CLI surfaces: subcommands, file formats, exit
//! codes.

use std::fs;
use std::path::Path;
use std::process::Command;

fn aepo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aepo"))
}

#[test]
fn print_config_round_trips() {
    let out = aepo().arg("--print-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("group_size = 8"));
    assert!(text.contains("quantile = 0.95"));

    // Feeding the printed config back reproduces it exactly.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.txt");
    fs::write(&cfg, &text).unwrap();
    let out2 = aepo()
        .args(["--print-config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out2.status.success());
    assert_eq!(text, String::from_utf8(out2.stdout).unwrap());
}

#[test]
fn invalid_config_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "quantile = 1.5\n").unwrap();
    let out = aepo()
        .args(["--config"])
        .arg(&cfg)
        .args(["train", "--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("quantile"), "stderr: {err}");
}

#[test]
fn train_analyze_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.txt");
    fs::write(
        &cfg,
        "iterations = 4\nbatch_size = 4\ngroup_size = 4\nmax_len = 12\ndump_rollouts = true\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = aepo()
        .args(["--config"])
        .arg(&cfg)
        .args(["--seed", "9", "train", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run.join("metrics.jsonl").exists());
    assert!(run.join("checkpoint_final.json").exists());
    let rollouts = run.join("rollouts.jsonl");
    assert!(rollouts.exists());

    // Every rollout line carries the documented fields.
    let first = fs::read_to_string(&rollouts).unwrap();
    let first = first.lines().next().unwrap();
    let record: serde_json::Value = serde_json::from_str(first).unwrap();
    for field in ["prompt", "tokens", "logprobs", "entropies", "accuracy", "seed"] {
        assert!(record.get(field).is_some(), "missing field {field}");
    }

    // analyze consumes the dump.
    let analyzed = dir.path().join("analyzed");
    let out = aepo()
        .args(["analyze", "--input"])
        .arg(&rollouts)
        .args(["--out"])
        .arg(&analyzed)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "analyze failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stats = fs::read_to_string(analyzed.join("trajectory_stats.csv")).unwrap();
    assert!(stats.starts_with("length,nhe,accuracy\n"));
    assert!(analyzed.join("profiles.jsonl").exists());

    // report emits the CSV bundle.
    let reported = dir.path().join("report");
    let out = aepo()
        .args(["report", "--metrics"])
        .arg(run.join("metrics.jsonl"))
        .args(["--out"])
        .arg(&reported)
        .output()
        .unwrap();
    assert!(out.status.success());
    let global = fs::read_to_string(reported.join("series_global.csv")).unwrap();
    assert!(global.starts_with(
        "iter,accuracy,length,nhe,tau_high,kl_ctrl,loss,clip_fraction,filtered_fraction\n"
    ));
    assert_eq!(global.lines().count(), 5);
}

#[test]
fn resume_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.txt");
    fs::write(
        &cfg,
        "iterations = 4\nbatch_size = 4\ngroup_size = 4\nmax_len = 12\ncheckpoint_every = 2\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    assert!(aepo()
        .args(["--config"])
        .arg(&cfg)
        .args(["train", "--out"])
        .arg(&run)
        .output()
        .unwrap()
        .status
        .success());
    let resumed = dir.path().join("resumed");
    let out = aepo()
        .args(["--config"])
        .arg(&cfg)
        .args(["train", "--out"])
        .arg(&resumed)
        .args(["--resume"])
        .arg(run.join("checkpoint_000002.json"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "resume failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(resumed.join("metrics.jsonl")).unwrap();
    // Two remaining iterations (2 and 3), no header in append mode.
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn curate_writes_corpus_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus.jsonl");
    let mut lines = Vec::new();
    lines.push(
        r#"{"problem_id":"hard0","source":"s","pass_rate":0.0,"responses":[{"response_id":"r0","text_len":9000},{"response_id":"r1","text_len":11000}]}"#
            .to_string(),
    );
    lines.push(
        r#"{"problem_id":"easy0","source":"s","pass_rate":1.0,"responses":[{"response_id":"r0","text_len":400},{"response_id":"r1","text_len":500},{"response_id":"r2","text_len":600}]}"#
            .to_string(),
    );
    for i in 0..20 {
        let p = (i % 9) as f64 / 8.0;
        lines.push(format!(
            r#"{{"problem_id":"p{i:02}","source":"s","pass_rate":{p},"responses":[{{"response_id":"a","text_len":{}}},{{"response_id":"b","text_len":{}}}]}}"#,
            1000 + i * 137,
            7000 - i * 101,
        ));
    }
    fs::write(&input, lines.join("\n")).unwrap();

    let out_dir = dir.path().join("curated");
    let out = aepo()
        .args(["curate", "--input"])
        .arg(&input)
        .args(["--out"])
        .arg(&out_dir)
        .args(["--brackets", "9", "--quota", "3"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "curate failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(out_dir.join("bracket_summary.csv")).unwrap();
    assert!(summary.starts_with("bracket,count,mean_chosen_length,mean_target\n"));
    assert_eq!(summary.lines().count(), 10);
    assert!(out_dir.join("curated.jsonl").exists());
}

#[test]
fn theory_report_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = aepo()
        .args(["--seed", "2024", "theory", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "theory failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theory_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["all_pass"], serde_json::Value::Bool(true));
    assert!(report["checks"].as_array().unwrap().len() >= 6);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("budget_bounds: pass"));
}

#[test]
fn golden_report_headers() {
    // Golden fixture: column layout of the report CSVs is part of the
    // interface and must not drift.
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_headers.txt");
    let expected = fs::read_to_string(&golden).unwrap();
    let actual = format!(
        "{}\n{}\n",
        aepo_core::report::GLOBAL_HEADER,
        aepo_core::report::BUCKET_HEADER
    );
    assert_eq!(expected, actual, "report headers drifted from the golden fixture");
}
