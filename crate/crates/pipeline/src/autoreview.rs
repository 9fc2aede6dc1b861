// SPDX-License-Identifier: Apache-2.0

//! Review session persistence, plus a headless reviewer that accepts every
//! suggestion. The headless reviewer exists for batch runs and tests; it
//! makes no judgment of its own.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::{TimeZone, Utc};
use gaze_core::clock::{Clock, SteppingClock};
use gaze_core::detectors::EvidenceClass;
use gaze_core::fusion::{SkipSpan, TimelineItem};
use gaze_core::intervals::IntervalSet;
use gaze_core::io::{atomic_write, read_jsonl, write_json, write_jsonl};
use gaze_core::review::audit::{to_jsonl, verify_jsonl};
use gaze_core::review::questionnaire::{Interval, IntervalAnswer, PiiType};
use gaze_core::review::{
    compute_iaa, FinalLabel, FinalizeOutcome, NextItem, QuestionnaireResponse, ReviewSession, ReviewerAction,
};
use serde::Serialize;

use crate::layout;
use crate::PipelineConfig;

pub const FIRST_REVIEWER: &str = "auto_a";
pub const QA_REVIEWER: &str = "auto_b";

/// Rebuilds the review session of `session_dir` from its timeline, skips
/// and (if present) audit log.
pub fn open_review(session_dir: &Path, session_id: &str, clock: Arc<dyn Clock>) -> Result<ReviewSession> {
    let tl_path = session_dir.join(layout::TIMELINE);
    let timeline: Vec<TimelineItem> = read_jsonl(&tl_path).with_context(|| tl_path.display().to_string())?;
    let skips: Vec<SkipSpan> = read_jsonl(&session_dir.join(layout::SKIPS))?;
    let audit = session_dir.join(layout::AUDIT);
    let chain = if audit.exists() {
        verify_jsonl(&std::fs::read(&audit)?)?
    } else {
        Vec::new()
    };
    Ok(ReviewSession::restore(session_id, timeline, skips, chain, clock)?)
}

pub fn persist_audit(session_dir: &Path, session: &ReviewSession) -> std::io::Result<()> {
    std::fs::create_dir_all(session_dir.join(layout::REVIEW))?;
    atomic_write(&session_dir.join(layout::AUDIT), &to_jsonl(session.chain()))
}

#[derive(Debug, Clone, Serialize)]
pub struct QaReport {
    pub sample: Option<gaze_core::review::QaSample>,
    pub pairs: usize,
    pub kappa: Option<f64>,
    pub qa_dwell_ms: u64,
}

/// Writes the audit log, final labels, QA summary and questionnaire.
pub fn persist_finalize(
    session_dir: &Path,
    session: &ReviewSession,
    outcome: &FinalizeOutcome,
    questionnaire: &QuestionnaireResponse,
) -> std::io::Result<()> {
    persist_audit(session_dir, session)?;
    write_jsonl(&session_dir.join(layout::FINAL_LABELS), &outcome.labels)?;
    let pairs = session.qa_pairs();
    let qa = QaReport {
        sample: session.qa().cloned(),
        pairs: pairs.len(),
        kappa: compute_iaa(&pairs).ok(),
        qa_dwell_ms: session.qa_dwell_ms(),
    };
    write_json(&session_dir.join(layout::QA), &qa)?;
    write_json(&session_dir.join(layout::QUESTIONNAIRE), questionnaire)
}

fn mmss(t: f64) -> String {
    let s = t.max(0.0) as u64;
    format!("{:02}:{:02}", s / 60, s % 60)
}

fn interval_answer(labels: &[FinalLabel], class: EvidenceClass) -> IntervalAnswer {
    let hits: Vec<&FinalLabel> = labels.iter().filter(|l| l.class == class && l.actionable).collect();
    if hits.is_empty() {
        return IntervalAnswer::default();
    }
    let start = hits.iter().map(|l| l.t_start).fold(f64::INFINITY, f64::min);
    let end = hits.iter().map(|l| l.t_end).fold(0.0, f64::max);
    IntervalAnswer {
        video: true,
        audio: false,
        interval: Some(Interval {
            start: mmss(start.floor()),
            end: mmss(end.ceil()),
        }),
    }
}

/// Questionnaire answers implied by the final labels.
pub fn questionnaire_from_labels(labels: &[FinalLabel]) -> QuestionnaireResponse {
    let mut q = QuestionnaireResponse::default();
    q.compliance.minors = interval_answer(labels, EvidenceClass::MinorRisk);
    q.compliance.nudity = interval_answer(labels, EvidenceClass::Nsfw);
    if labels.iter().any(|l| l.class == EvidenceClass::Pii && l.actionable) {
        q.compliance.pii.audio = true;
        q.compliance.pii.audio_types = vec![PiiType::Other];
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutoReviewSummary {
    pub accepted: usize,
    pub qa_sampled: usize,
    pub labels: usize,
    pub audit_records: usize,
}

/// Accepts every pending item as [`FIRST_REVIEWER`], charging as dwell only
/// the part of each item not already watched or auto-skipped, has
/// [`QA_REVIEWER`] agree with the QA sample, then finalizes. Any previous
/// review state is discarded. Timestamps come from a stepping clock pinned to the
/// recording time, so the audit log is reproducible.
pub fn auto_review(cfg: &PipelineConfig) -> Result<AutoReviewSummary> {
    let dir = &cfg.session_dir;
    let review = dir.join(layout::REVIEW);
    if review.exists() {
        std::fs::remove_dir_all(&review)?;
    }
    let start = cfg
        .input
        .recorded_at
        .unwrap_or_else(|| Utc.timestamp_millis_opt(0).unwrap());
    let clock: Arc<dyn Clock> = Arc::new(SteppingClock::new(start, 1000));
    let mut s = open_review(dir, &cfg.session_id, clock)?;
    let mut accepted = 0;
    let mut covered = IntervalSet::from_spans(s.skips().iter().map(|k| k.span()));
    while let NextItem::Item { item } = s.next_item(FIRST_REVIEWER)? {
        let fresh = IntervalSet::from_spans([item.span()]).subtract(&covered);
        let dwell = (fresh.total_len() * 1000.0).round() as u64;
        covered = covered.union(&fresh);
        s.apply_action(&ReviewerAction::accept(&item.timeline_id, FIRST_REVIEWER, dwell))?;
        accepted += 1;
    }
    let mut qa_sampled = 0;
    if accepted > 0 {
        let sample = s.draw_qa_sample(cfg.qa_fraction, cfg.seeds.qa, QA_REVIEWER)?;
        for id in &sample.sampled {
            let dwell = s
                .item(id)
                .map(|t| ((t.t_end - t.t_start).max(0.0) * 1000.0).round() as u64)
                .unwrap_or(0);
            s.judge_qa(id, QA_REVIEWER, true, dwell)?;
        }
        qa_sampled = sample.sampled.len();
    }
    let preview: Vec<FinalLabel> = s
        .items()
        .iter()
        .map(|t| FinalLabel {
            timeline_id: t.timeline_id.clone(),
            class: t.class,
            t_start: t.t_start,
            t_end: t.t_end,
            views: t.views.clone(),
            geometry: t.geometry.clone(),
            action: t.suggested_action,
            actionable: t.suggested_action.is_actionable(),
            status: t.status,
            rationale_code: None,
            reviewer_id: String::new(),
            confidence: t.confidence,
            evidence_refs: Vec::new(),
        })
        .collect();
    let questionnaire = questionnaire_from_labels(&preview);
    let outcome = s.finalize(&questionnaire, FIRST_REVIEWER)?;
    persist_finalize(dir, &s, &outcome, &questionnaire)?;
    Ok(AutoReviewSummary {
        accepted,
        qa_sampled,
        labels: outcome.labels.len(),
        audit_records: s.chain().len(),
    })
}
