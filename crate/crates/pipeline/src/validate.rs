// SPDX-License-Identifier: Apache-2.0

//! Schema and integrity checks over every artifact in a session directory.

use std::path::Path;

use gaze_core::detectors::EvidenceItem;
use gaze_core::export::{ledger_for_dir, ExportLedger, EXPORT_LEDGER};
use gaze_core::fusion::{SkipSpan, SuppressedItem, TimelineItem};
use gaze_core::ingest::SessionLedger;
use gaze_core::review::audit::verify_jsonl;
use gaze_core::review::{ChainError, FinalLabel};
use gaze_core::segmenter::ClipRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::layout;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub file: String,
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, file: &str, line: usize, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.into(),
            line,
            message: message.into(),
        });
    }
}

/// Parses a JSONL file line by line, recording a violation per bad line and
/// returning the rows that did parse with their line numbers.
fn parse_lines<T: DeserializeOwned>(dir: &Path, rel: &str, report: &mut ValidationReport) -> Option<Vec<(usize, T)>> {
    let path = dir.join(rel);
    if !path.exists() {
        return None;
    }
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            report.push(rel, 0, e.to_string());
            return None;
        }
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(v) => rows.push((i + 1, v)),
            Err(e) => report.push(rel, i + 1, e.to_string()),
        }
    }
    if !text.is_empty() && !text.ends_with('\n') {
        report.push(rel, text.lines().count(), "missing trailing newline (truncated file?)");
    }
    Some(rows)
}

pub fn validate_artifacts(session_dir: &Path) -> ValidationReport {
    let mut r = ValidationReport::default();

    if let Some(clips) = parse_lines::<ClipRecord>(session_dir, layout::CLIPS, &mut r) {
        for (line, c) in &clips {
            if !(c.t_start <= c.t_end) {
                r.push(layout::CLIPS, *line, format!("{}: clip ends before it starts", c.clip_id));
            }
        }
    }
    if let Some(items) = parse_lines::<EvidenceItem>(session_dir, layout::EVIDENCE, &mut r) {
        for (line, it) in &items {
            if let Err(e) = it.validate() {
                r.push(layout::EVIDENCE, *line, e.to_string());
            }
        }
    }
    let timeline = parse_lines::<TimelineItem>(session_dir, layout::TIMELINE, &mut r);
    let skips = parse_lines::<SkipSpan>(session_dir, layout::SKIPS, &mut r);
    if let (Some(timeline), Some(skips)) = (&timeline, &skips) {
        for (line, it) in timeline {
            if !(it.t_start <= it.t_end) {
                r.push(layout::TIMELINE, *line, format!("{}: item ends before it starts", it.timeline_id));
            }
            if it.class.is_governance() && skips.iter().any(|(_, s)| it.intersects(&s.span())) {
                r.push(
                    layout::TIMELINE,
                    *line,
                    format!("{}: governance item inside an auto-skip span", it.timeline_id),
                );
            }
        }
    }
    parse_lines::<SuppressedItem>(session_dir, layout::SUPPRESSED, &mut r);
    parse_lines::<FinalLabel>(session_dir, layout::FINAL_LABELS, &mut r);

    let audit = session_dir.join(layout::AUDIT);
    if audit.exists() {
        match std::fs::read(&audit) {
            Ok(bytes) => match verify_jsonl(&bytes) {
                Ok(_) => {}
                Err(e @ ChainError::Malformed { .. }) => r.push(layout::AUDIT, e.line() + 1, e.to_string()),
                Err(e @ ChainError::Broken { seq, .. }) => {
                    r.push(layout::AUDIT, seq as usize + 1, format!("chain broken at {e}"))
                }
            },
            Err(e) => r.push(layout::AUDIT, 0, e.to_string()),
        }
    }

    let ledger = session_dir.join(layout::LEDGER);
    if ledger.exists() {
        match gaze_core::io::read_json::<SessionLedger>(&ledger) {
            Ok(l) => {
                if let Err(e) = l.verify() {
                    r.push(layout::LEDGER, 0, e.to_string());
                }
            }
            Err(e) => r.push(layout::LEDGER, 0, e.to_string()),
        }
    }

    let deliverable = session_dir.join(layout::DELIVERABLE);
    let stored = deliverable.join(EXPORT_LEDGER);
    if stored.exists() {
        let rel = format!("{}/{}", layout::DELIVERABLE, EXPORT_LEDGER);
        match (
            gaze_core::io::read_json::<ExportLedger>(&stored),
            ledger_for_dir(&deliverable, &[EXPORT_LEDGER]),
        ) {
            (Ok(s), Ok(fresh)) => {
                for e in &fresh.entries {
                    match s.entries.iter().find(|x| x.path == e.path) {
                        None => r.push(&rel, 0, format!("{} not in export ledger", e.path)),
                        Some(x) if x.content_hash != e.content_hash => {
                            r.push(&rel, 0, format!("{} hash mismatch", e.path))
                        }
                        _ => {}
                    }
                }
                for x in &s.entries {
                    if !fresh.entries.iter().any(|e| e.path == x.path) {
                        r.push(&rel, 0, format!("{} listed but missing", x.path));
                    }
                }
                if s.ledger_digest != fresh.ledger_digest && r.violations.iter().all(|v| v.file != rel) {
                    r.push(&rel, 0, "ledger digest mismatch");
                }
            }
            (Err(e), _) => r.push(&rel, 0, e.to_string()),
            (_, Err(e)) => r.push(&rel, 0, e.to_string()),
        }
    }
    r
}
