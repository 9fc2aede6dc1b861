// SPDX-License-Identifier: Apache-2.0

//! Session and batch efficiency reports.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gaze_core::fusion::{review_volume_reduction, SkipSpan, TimelineItem};
use gaze_core::intervals::{IntervalSet, Span};
use gaze_core::io::{atomic_write, read_jsonl, write_json};
use gaze_core::metrics::report::{batch_report, render_batch, BatchReport, SessionReport};
use gaze_core::metrics::{compute_dwell, reviewed_items, savings_model, ReviewLogEntry, DEFAULT_FEATURES};
use gaze_core::review::audit::verify_jsonl;
use gaze_core::review::{AuditEvent, FinalLabel};

use crate::layout;
use crate::stages::session_duration;
use crate::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub factors: Vec<(String, f64)>,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Other processed session directories pooled into the batch.
    pub extra_sessions: Vec<PathBuf>,
}

impl ReportOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            factors: DEFAULT_FEATURES.iter().map(|(n, f)| (n.to_string(), *f)).collect(),
            level: 0.95,
            resamples: 10_000,
            seed: cfg.seeds.bootstrap,
            extra_sessions: Vec::new(),
        }
    }
}

fn read_opt<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path).with_context(|| path.display().to_string())
    } else {
        Ok(Vec::new())
    }
}

/// Reviewer dwell in seconds: from the client playback log when present,
/// otherwise the dwell recorded on audit actions.
pub fn session_hitl(session_dir: &Path, timeline: &[TimelineItem], skips: &[SkipSpan]) -> Result<f64> {
    let log_path = session_dir.join(layout::REVIEW_LOG);
    if log_path.exists() {
        let log: Vec<ReviewLogEntry> = read_jsonl(&log_path).with_context(|| log_path.display().to_string())?;
        let flagged = IntervalSet::from_spans(timeline.iter().map(TimelineItem::span))
            .subtract(&IntervalSet::from_spans(skips.iter().map(SkipSpan::span)));
        let spans: Vec<Span> = flagged.spans().to_vec();
        return Ok(compute_dwell(&log, &spans)?);
    }
    let audit_path = session_dir.join(layout::AUDIT);
    if !audit_path.exists() {
        return Ok(0.0);
    }
    let chain = verify_jsonl(&std::fs::read(&audit_path)?)?;
    let ms: u64 = chain
        .iter()
        .filter(|r| matches!(r.event, AuditEvent::Accept | AuditEvent::Adjust | AuditEvent::Override))
        .map(|r| r.dwell_ms)
        .sum();
    Ok(ms as f64 / 1000.0)
}

pub fn session_report(session_dir: &Path, session_id: &str, domain: &str) -> Result<SessionReport> {
    let duration = session_duration(session_dir)?;
    let timeline: Vec<TimelineItem> = read_opt(&session_dir.join(layout::TIMELINE))?;
    let skips: Vec<SkipSpan> = read_opt(&session_dir.join(layout::SKIPS))?;
    let labels: Vec<FinalLabel> = read_opt(&session_dir.join(layout::FINAL_LABELS))?;
    let hitl = session_hitl(session_dir, &timeline, &skips)?;
    let rvr = review_volume_reduction(&timeline, &skips, duration)?;
    Ok(SessionReport::build(session_id, domain, duration, hitl, &reviewed_items(&labels), rvr)?)
}

/// Writes `report.json` and `report.txt` into the session directory.
pub fn run(cfg: &PipelineConfig, opts: &ReportOptions) -> Result<BatchReport> {
    let mut sessions = vec![session_report(&cfg.session_dir, &cfg.session_id, &cfg.domain)?];
    for dir in &opts.extra_sessions {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        sessions.push(session_report(dir, &id, &cfg.domain)?);
    }
    let savings = savings_model(&opts.factors)?;
    let batch = batch_report(sessions, savings, opts.level, opts.resamples, opts.seed)?;
    write_json(&cfg.session_dir.join(layout::REPORT_JSON), &batch)?;
    atomic_write(&cfg.session_dir.join(layout::REPORT_TXT), render_batch(&batch).as_bytes())?;
    Ok(batch)
}
