// SPDX-License-Identifier: Apache-2.0

mod support;

use std::process::Command;

use gaze::orchestrator::{StageState, StageStatus};
use gaze::validate::validate_artifacts;
use gaze::{run_pipeline, Stage};

fn status(dir: &std::path::Path) -> Vec<StageStatus> {
    serde_json::from_slice(&support::read(dir.join("status.json"))).unwrap()
}

#[test]
fn unchanged_stages_are_not_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = support::synth(tmp.path(), &support::small_params());
    let first = run_pipeline(&cfg, &Stage::AUTOMATIC).unwrap();
    assert!(first.iter().all(|r| r.executed));
    let before = support::tree(&cfg.session_dir);
    let second = run_pipeline(&cfg, &Stage::AUTOMATIC).unwrap();
    assert!(second.iter().all(|r| !r.executed), "second run re-executed a stage");
    assert_eq!(before, support::tree(&cfg.session_dir));

    std::fs::remove_file(cfg.session_dir.join("clips.jsonl")).unwrap();
    let third = run_pipeline(&cfg, &[Stage::Segment, Stage::Fuse]).unwrap();
    let executed: Vec<(Stage, bool)> = third.iter().map(|r| (r.status.stage, r.executed)).collect();
    assert_eq!(executed, vec![(Stage::Segment, true), (Stage::Fuse, false)]);
    assert_eq!(before["clips.jsonl"], support::read(cfg.session_dir.join("clips.jsonl")));
}

#[test]
fn a_failing_stage_is_recorded_and_recovers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = support::synth(tmp.path(), &support::small_params());
    run_pipeline(&cfg, &[Stage::Ingest, Stage::Project, Stage::Segment, Stage::Detect]).unwrap();
    let evidence = cfg.session_dir.join("detect/evidence.jsonl");
    let good = support::read(&evidence);
    std::fs::write(&evidence, b"{\"item_id\": \n").unwrap();

    assert!(run_pipeline(&cfg, &[Stage::Fuse]).is_err());
    let st = status(&cfg.session_dir);
    let fuse = st.iter().find(|s| s.stage == Stage::Fuse).unwrap();
    assert_eq!(fuse.state, StageState::Failed);
    assert!(fuse.error.as_deref().is_some_and(|e| !e.is_empty()));
    for s in st.iter().filter(|s| s.stage != Stage::Fuse) {
        assert_eq!(s.state, StageState::Done, "{:?}", s.stage);
    }

    let runs = run_pipeline(&cfg, &[Stage::Detect, Stage::Fuse]).unwrap();
    assert!(runs.iter().all(|r| r.executed));
    assert_eq!(good, support::read(&evidence));
    assert!(status(&cfg.session_dir).iter().all(|s| s.state == StageState::Done));
}

#[test]
fn validate_reports_the_bad_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = support::synth(tmp.path(), &support::small_params());
    support::full_run(&cfg);
    let dir = &cfg.session_dir;
    assert!(validate_artifacts(dir).is_ok(), "{:?}", validate_artifacts(dir).violations);

    let timeline = dir.join("timeline.jsonl");
    let text = String::from_utf8(support::read(&timeline)).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    assert!(lines.len() >= 2);
    let half = lines[1].len() / 2;
    lines[1].truncate(half);
    std::fs::write(&timeline, lines.join("\n") + "\n").unwrap();
    let r = validate_artifacts(dir);
    assert!(r.violations.iter().any(|v| v.file == "timeline.jsonl" && v.line == 2), "{:?}", r.violations);
    std::fs::write(&timeline, text).unwrap();

    let audit = dir.join("review/audit.jsonl");
    let log = String::from_utf8(support::read(&audit)).unwrap();
    let mut lines: Vec<String> = log.lines().map(str::to_string).collect();
    assert!(lines.len() >= 3);
    lines[2] = lines[2].replacen("\"reviewer_id\":\"auto_a\"", "\"reviewer_id\":\"auto_x\"", 1);
    assert_ne!(lines[2], log.lines().nth(2).unwrap(), "fixture line has no reviewer to alter");
    std::fs::write(&audit, lines.join("\n") + "\n").unwrap();
    let r = validate_artifacts(dir);
    assert!(
        r.violations.iter().any(|v| v.file == "review/audit.jsonl" && v.line == 3),
        "{:?}",
        r.violations
    );
}

#[test]
fn review_state_survives_a_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = support::synth(tmp.path(), &support::small_params());
    support::full_run(&cfg);
    let clock = std::sync::Arc::new(gaze_core::clock::SteppingClock::epoch());
    let s = gaze::autoreview::open_review(&cfg.session_dir, &cfg.session_id, clock).unwrap();
    assert!(s.is_finalized());
    assert_eq!(s.outstanding(), 0);
    let log = support::read(cfg.session_dir.join("review/audit.jsonl"));
    assert_eq!(gaze_core::review::audit::to_jsonl(s.chain()), log);
}

#[test]
fn cli_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gaze");
    let dir = tmp.path().join("s");
    let out = Command::new(bin)
        .args(["synth", dir.to_str().unwrap(), "--duration", "80", "--idle", "15"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.join("config.json");
    let gaze = |args: &[&str]| {
        let mut c = Command::new(bin);
        c.arg("--config").arg(&config).args(args);
        c.output().unwrap()
    };

    let out = gaze(&["run", "--auto-review"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for stage in ["ingest: done", "fuse: done", "export: done", "report: done"] {
        assert!(text.contains(stage), "missing {stage:?} in {text}");
    }
    let again = gaze(&["run"]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("fuse: up to date"));

    let out = gaze(&["report", "--factor", "a=0.1", "--factor", "b=0.2", "--resamples", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let combined = text.lines().find(|l| l.starts_with("Combined")).unwrap();
    assert!(combined.contains("28.0%") && combined.trim_end().ends_with("16.8"), "{combined}");

    let out = gaze(&["validate"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");

    let bad = gaze(&["report", "--factor", "oops"]);
    assert!(!bad.status.success());
}
