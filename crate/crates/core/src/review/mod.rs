// SPDX-License-Identifier: Apache-2.0

//! Review-by-exception over a fused timeline.
//!
//! A [`ReviewSession`] owns the live item states, reviewer locks and the
//! audit chain. Every state change goes through [`ReviewSession::apply_action`],
//! [`ReviewSession::judge_qa`] or [`ReviewSession::finalize`] and appends one
//! audit record, so the chain alone is enough to rebuild the session
//! ([`ReviewSession::restore`]).

pub mod audit;
pub mod qa;
pub mod questionnaire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::zero_digest;
use crate::clock::Clock;
use crate::detectors::{BBox, EvidenceClass, SuggestedAction};
use crate::fusion::{FusionPolicy, ItemStatus, SkipSpan, TimelineItem};
use crate::projection::View;

pub use audit::{AuditEvent, AuditRecord, ChainError, RationaleCode};
pub use qa::{compute_iaa, QaOutcome, QaSample};
pub use questionnaire::QuestionnaireResponse;

pub const LOCK_TTL_MINUTES: i64 = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ReviewError {
    #[error("unknown session {0}")]
    SessionUnknown(String),
    #[error("unknown timeline item {0}")]
    UnknownItem(String),
    #[error("item {0} is not locked by this reviewer")]
    NotLocked(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("override requires a rationale code")]
    MissingRationale,
    #[error("no accepted items to sample")]
    NothingAccepted,
    #[error("no paired judgments")]
    NoPairs,
    #[error("{0} items still pending or in adjudication")]
    PendingItemsRemain(usize),
    #[error("questionnaire invalid: {0}")]
    QuestionnaireInvalid(String),
    #[error("session already finalized")]
    AlreadyFinalized,
    #[error("audit chain: {0}")]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Accept,
    Adjust,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewerAction {
    pub timeline_id: String,
    pub operation: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<BTreeMap<View, BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_action: Option<SuggestedAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_code: Option<RationaleCode>,
    pub reviewer_id: String,
    #[serde(default)]
    pub dwell_ms: u64,
}

impl ReviewerAction {
    pub fn accept(timeline_id: &str, reviewer_id: &str, dwell_ms: u64) -> Self {
        Self {
            timeline_id: timeline_id.into(),
            operation: Operation::Accept,
            t_start: None,
            t_end: None,
            geometry: None,
            new_action: None,
            rationale_code: None,
            reviewer_id: reviewer_id.into(),
            dwell_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NextItem {
    Item { item: TimelineItem },
    /// Unreviewed items remain but are locked by other reviewers.
    Waiting,
    Done,
}

#[derive(Debug, Clone)]
struct Lock {
    reviewer: String,
    expires: DateTime<Utc>,
}

/// One row of `final_labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalLabel {
    pub timeline_id: String,
    pub class: EvidenceClass,
    pub t_start: f64,
    pub t_end: f64,
    pub views: BTreeSet<View>,
    #[serde(default)]
    pub geometry: BTreeMap<View, BBox>,
    pub action: SuggestedAction,
    pub actionable: bool,
    pub status: ItemStatus,
    pub rationale_code: Option<RationaleCode>,
    pub reviewer_id: String,
    pub confidence: f64,
    pub evidence_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeOutcome {
    pub labels: Vec<FinalLabel>,
    pub reviewer_ids: Vec<String>,
    pub terminal_record: AuditRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdNudge {
    pub class: EvidenceClass,
    pub reviewed: usize,
    pub fp_overrides: usize,
    pub fp_rate: f64,
    pub current: f64,
    pub recommended: f64,
}

/// Override-rate bands for threshold recommendations.
pub const NUDGE_RAISE_ABOVE: f64 = 0.2;
pub const NUDGE_STEP: f64 = 0.05;
pub const NUDGE_MIN_REVIEWED: usize = 5;

pub struct ReviewSession {
    pub session_id: String,
    items: Vec<TimelineItem>,
    index: HashMap<String, usize>,
    skips: Vec<SkipSpan>,
    locks: HashMap<String, Lock>,
    chain: Vec<AuditRecord>,
    dwell_ms: BTreeMap<String, u64>,
    qa_dwell_ms: u64,
    reviewed_by: HashMap<String, String>,
    rationale: HashMap<String, RationaleCode>,
    qa: Option<QaSample>,
    finalized: bool,
    clock: Arc<dyn Clock>,
}

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl ReviewSession {
    pub fn new(session_id: &str, timeline: Vec<TimelineItem>, skips: Vec<SkipSpan>, clock: Arc<dyn Clock>) -> Self {
        let mut items = timeline;
        items.sort_by_key(|t| t.priority_rank);
        let index = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.timeline_id.clone(), i))
            .collect();
        Self {
            session_id: session_id.into(),
            items,
            index,
            skips,
            locks: HashMap::new(),
            chain: Vec::new(),
            dwell_ms: BTreeMap::new(),
            qa_dwell_ms: 0,
            reviewed_by: HashMap::new(),
            rationale: HashMap::new(),
            qa: None,
            finalized: false,
            clock,
        }
    }

    /// Rebuilds a session from the fused timeline plus its audit chain.
    pub fn restore(
        session_id: &str,
        timeline: Vec<TimelineItem>,
        skips: Vec<SkipSpan>,
        chain: Vec<AuditRecord>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ReviewError> {
        audit::verify_chain(&chain)?;
        let initial = timeline.clone();
        let states = audit::replay(&initial, &chain)?;
        let mut s = Self::new(session_id, timeline, skips, clock);
        for it in &mut s.items {
            if let Some(st) = states.get(&it.timeline_id) {
                *it = st.clone();
            }
        }
        for rec in &chain {
            match rec.event {
                AuditEvent::Accept | AuditEvent::Adjust | AuditEvent::Override => {
                    if let Some(id) = &rec.timeline_id {
                        *s.dwell_ms.entry(id.clone()).or_default() += rec.dwell_ms;
                        s.reviewed_by.insert(id.clone(), rec.reviewer_id.clone());
                        if let Some(r) = rec.rationale_code {
                            s.rationale.insert(id.clone(), r);
                        }
                    }
                }
                AuditEvent::QaDraw => {
                    s.qa = serde_json::from_value(rec.detail.clone()).ok();
                }
                AuditEvent::QaJudgment => {
                    s.qa_dwell_ms += rec.dwell_ms;
                    if let (Some(qa), Some(id)) = (&mut s.qa, &rec.timeline_id) {
                        if let Ok(o) = serde_json::from_value::<QaOutcome>(rec.detail["outcome"].clone()) {
                            qa.outcomes.insert(id.clone(), o);
                        }
                    }
                }
                AuditEvent::Finalize => s.finalized = true,
                AuditEvent::LockExpired => {}
            }
        }
        s.chain = chain;
        Ok(s)
    }

    pub fn items(&self) -> &[TimelineItem] {
        &self.items
    }

    pub fn skips(&self) -> &[SkipSpan] {
        &self.skips
    }

    pub fn chain(&self) -> &[AuditRecord] {
        &self.chain
    }

    pub fn qa(&self) -> Option<&QaSample> {
        self.qa.as_ref()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn item(&self, id: &str) -> Option<&TimelineItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Per-item reviewer dwell, excluding QA re-review.
    pub fn dwell_ms(&self) -> &BTreeMap<String, u64> {
        &self.dwell_ms
    }

    pub fn total_dwell_ms(&self) -> u64 {
        self.dwell_ms.values().sum()
    }

    pub fn qa_dwell_ms(&self) -> u64 {
        self.qa_dwell_ms
    }

    fn push_record(&mut self, rec: AuditRecord) -> AuditRecord {
        let sealed = audit::seal(&self.chain, rec);
        self.chain.push(sealed.clone());
        sealed
    }

    fn blank_record(&self, reviewer: &str, event: AuditEvent) -> AuditRecord {
        AuditRecord {
            seq: 0,
            timestamp: ts(self.clock.now()),
            reviewer_id: reviewer.into(),
            event,
            timeline_id: None,
            item_hash: None,
            pre_state: None,
            post_state: None,
            rationale_code: None,
            dwell_ms: 0,
            detail: Value::Null,
            prev_record_digest: zero_digest(),
            record_digest: String::new(),
        }
    }

    fn expire_locks(&mut self) {
        let now = self.clock.now();
        let mut expired: Vec<(String, String)> = self
            .locks
            .iter()
            .filter(|(_, l)| l.expires <= now)
            .map(|(id, l)| (id.clone(), l.reviewer.clone()))
            .collect();
        expired.sort();
        for (id, reviewer) in expired {
            self.locks.remove(&id);
            let mut rec = self.blank_record(&reviewer, AuditEvent::LockExpired);
            rec.timeline_id = Some(id);
            self.push_record(rec);
        }
    }

    fn needs_review(&self, it: &TimelineItem) -> bool {
        matches!(it.status, ItemStatus::Pending | ItemStatus::Adjudication)
            && !self.skips.iter().any(|s| it.intersects(&s.span()))
    }

    /// Lowest-rank unreviewed item not locked by someone else, locked to
    /// `reviewer`. Pending items come before adjudication items.
    pub fn next_item(&mut self, reviewer: &str) -> Result<NextItem, ReviewError> {
        if self.finalized {
            return Ok(NextItem::Done);
        }
        self.expire_locks();
        let now = self.clock.now();
        let ttl = Duration::minutes(LOCK_TTL_MINUTES);
        if let Some((id, _)) = self.locks.iter().find(|(_, l)| l.reviewer == reviewer) {
            let id = id.clone();
            if let Some(l) = self.locks.get_mut(&id) {
                l.expires = now + ttl;
            }
            return Ok(NextItem::Item {
                item: self.items[self.index[&id]].clone(),
            });
        }
        let mut any_unreviewed = false;
        for pass in [ItemStatus::Pending, ItemStatus::Adjudication] {
            for it in &self.items {
                if it.status != pass || !self.needs_review(it) {
                    continue;
                }
                any_unreviewed = true;
                if self.locks.contains_key(&it.timeline_id) {
                    continue;
                }
                let id = it.timeline_id.clone();
                let item = it.clone();
                self.locks.insert(
                    id,
                    Lock {
                        reviewer: reviewer.into(),
                        expires: now + ttl,
                    },
                );
                return Ok(NextItem::Item { item });
            }
        }
        Ok(if any_unreviewed { NextItem::Waiting } else { NextItem::Done })
    }

    pub fn apply_action(&mut self, action: &ReviewerAction) -> Result<AuditRecord, ReviewError> {
        if self.finalized {
            return Err(ReviewError::AlreadyFinalized);
        }
        self.expire_locks();
        let idx = *self
            .index
            .get(&action.timeline_id)
            .ok_or_else(|| ReviewError::UnknownItem(action.timeline_id.clone()))?;
        match self.locks.get(&action.timeline_id) {
            Some(l) if l.reviewer == action.reviewer_id => {}
            _ => return Err(ReviewError::NotLocked(action.timeline_id.clone())),
        }
        let pre = self.items[idx].clone();
        if !matches!(pre.status, ItemStatus::Pending | ItemStatus::Adjudication) {
            return Err(ReviewError::InvalidTransition(format!(
                "{} is already {:?}",
                pre.timeline_id, pre.status
            )));
        }
        let mut post = pre.clone();
        let (event, rationale) = match action.operation {
            Operation::Accept => {
                post.status = ItemStatus::Accepted;
                (AuditEvent::Accept, None)
            }
            Operation::Adjust => {
                if let Some(t) = action.t_start {
                    post.t_start = t;
                }
                if let Some(t) = action.t_end {
                    post.t_end = t;
                }
                if let Some(g) = &action.geometry {
                    post.geometry = g.clone();
                }
                if !(post.t_start.is_finite() && post.t_end.is_finite() && post.t_start <= post.t_end && post.t_start >= 0.0) {
                    return Err(ReviewError::InvalidTransition("adjusted bounds are not ordered".into()));
                }
                if (post.t_start, post.t_end) == (pre.t_start, pre.t_end) && post.geometry == pre.geometry {
                    return Err(ReviewError::InvalidTransition("adjust changes nothing".into()));
                }
                post.status = ItemStatus::Adjusted;
                (AuditEvent::Adjust, action.rationale_code)
            }
            Operation::Override => {
                let code = action.rationale_code.ok_or(ReviewError::MissingRationale)?;
                let new_action = action
                    .new_action
                    .ok_or_else(|| ReviewError::InvalidTransition("override requires new_action".into()))?;
                post.suggested_action = new_action;
                post.status = ItemStatus::Overridden;
                (AuditEvent::Override, Some(code))
            }
        };
        self.items[idx] = post.clone();
        self.locks.remove(&action.timeline_id);
        *self.dwell_ms.entry(action.timeline_id.clone()).or_default() += action.dwell_ms;
        self.reviewed_by
            .insert(action.timeline_id.clone(), action.reviewer_id.clone());
        if let Some(r) = rationale {
            self.rationale.insert(action.timeline_id.clone(), r);
        }
        let mut rec = self.blank_record(&action.reviewer_id, event);
        rec.timeline_id = Some(action.timeline_id.clone());
        rec.item_hash = Some(audit::item_hash(&pre));
        rec.pre_state = Some(pre);
        rec.post_state = Some(post);
        rec.rationale_code = rationale;
        rec.dwell_ms = action.dwell_ms;
        Ok(self.push_record(rec))
    }

    /// Draws the QA sample from accepted items (in priority order).
    pub fn draw_qa_sample(&mut self, fraction: f64, seed: u64, requested_by: &str) -> Result<QaSample, ReviewError> {
        if self.finalized {
            return Err(ReviewError::AlreadyFinalized);
        }
        let accepted: Vec<String> = self
            .items
            .iter()
            .filter(|t| t.status == ItemStatus::Accepted)
            .map(|t| t.timeline_id.clone())
            .collect();
        let sampled = qa::sample_ids(&accepted, fraction, seed)?;
        let sample = QaSample {
            seed,
            fraction,
            sampled,
            outcomes: BTreeMap::new(),
        };
        let mut rec = self.blank_record(requested_by, AuditEvent::QaDraw);
        rec.detail = serde_json::to_value(&sample).unwrap_or(Value::Null);
        self.push_record(rec);
        self.qa = Some(sample.clone());
        Ok(sample)
    }

    /// Records a blind second review. The second reviewer must differ from
    /// whoever accepted the item; disagreement sends it to adjudication.
    pub fn judge_qa(&mut self, timeline_id: &str, reviewer: &str, agree: bool, dwell_ms: u64) -> Result<AuditRecord, ReviewError> {
        if self.finalized {
            return Err(ReviewError::AlreadyFinalized);
        }
        let qa = self
            .qa
            .as_ref()
            .ok_or_else(|| ReviewError::InvalidTransition("no QA sample drawn".into()))?;
        if !qa.sampled.iter().any(|s| s == timeline_id) {
            return Err(ReviewError::InvalidTransition(format!("{timeline_id} is not in the QA sample")));
        }
        if qa.outcomes.contains_key(timeline_id) {
            return Err(ReviewError::InvalidTransition(format!("{timeline_id} already judged")));
        }
        if self.reviewed_by.get(timeline_id).map(String::as_str) == Some(reviewer) {
            return Err(ReviewError::InvalidTransition("QA reviewer must differ from the first reviewer".into()));
        }
        let idx = self.index[timeline_id];
        let pre = self.items[idx].clone();
        if pre.status != ItemStatus::Accepted {
            return Err(ReviewError::InvalidTransition(format!("{timeline_id} is no longer accepted")));
        }
        let outcome = if agree { QaOutcome::Agree } else { QaOutcome::Disagree };
        let mut rec = self.blank_record(reviewer, AuditEvent::QaJudgment);
        rec.timeline_id = Some(timeline_id.into());
        rec.item_hash = Some(audit::item_hash(&pre));
        rec.dwell_ms = dwell_ms;
        rec.detail = json!({ "outcome": outcome });
        if !agree {
            let mut post = pre.clone();
            post.status = ItemStatus::Adjudication;
            self.items[idx] = post.clone();
            rec.post_state = Some(post);
        }
        rec.pre_state = Some(pre);
        if let Some(qa) = &mut self.qa {
            qa.outcomes.insert(timeline_id.into(), outcome);
        }
        self.qa_dwell_ms += dwell_ms;
        Ok(self.push_record(rec))
    }

    /// Paired QA verdicts as (first reviewer accepted, second reviewer agreed
    /// that it should be accepted).
    pub fn qa_pairs(&self) -> Vec<(bool, bool)> {
        self.qa
            .as_ref()
            .map(|q| {
                q.outcomes
                    .values()
                    .map(|o| (true, *o == QaOutcome::Agree))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn outstanding(&self) -> usize {
        self.items.iter().filter(|t| self.needs_review(t)).count()
    }

    pub fn finalize(&mut self, questionnaire: &QuestionnaireResponse, finalized_by: &str) -> Result<FinalizeOutcome, ReviewError> {
        if self.finalized {
            return Err(ReviewError::AlreadyFinalized);
        }
        let outstanding = self.outstanding();
        if outstanding > 0 {
            return Err(ReviewError::PendingItemsRemain(outstanding));
        }
        questionnaire.validate().map_err(ReviewError::QuestionnaireInvalid)?;
        let labels: Vec<FinalLabel> = self
            .items
            .iter()
            .filter(|t| matches!(t.status, ItemStatus::Accepted | ItemStatus::Adjusted | ItemStatus::Overridden))
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
                rationale_code: self.rationale.get(&t.timeline_id).copied(),
                reviewer_id: self.reviewed_by.get(&t.timeline_id).cloned().unwrap_or_default(),
                confidence: t.confidence,
                evidence_refs: t.evidence_refs.clone(),
            })
            .collect();
        let reviewer_ids: Vec<String> = self
            .chain
            .iter()
            .filter(|r| r.event != AuditEvent::LockExpired)
            .map(|r| r.reviewer_id.clone())
            .chain(std::iter::once(finalized_by.to_string()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rec = self.blank_record(finalized_by, AuditEvent::Finalize);
        rec.detail = json!({
            "labels": labels.len(),
            "actionable": labels.iter().filter(|l| l.actionable).count(),
            "questionnaire": questionnaire,
        });
        let terminal_record = self.push_record(rec);
        self.finalized = true;
        self.locks.clear();
        Ok(FinalizeOutcome {
            labels,
            reviewer_ids,
            terminal_record,
        })
    }

    /// Recommends per-class threshold changes from FP override rates. Classes
    /// with an FP rate above [`NUDGE_RAISE_ABOVE`] get a higher threshold;
    /// classes with at least [`NUDGE_MIN_REVIEWED`] reviews and no FP
    /// overrides get a lower one. Nothing is applied.
    pub fn threshold_nudges(&self, policy: &FusionPolicy) -> Vec<ThresholdNudge> {
        let mut stats: BTreeMap<EvidenceClass, (usize, usize)> = BTreeMap::new();
        for t in &self.items {
            if matches!(t.status, ItemStatus::Pending) {
                continue;
            }
            let e = stats.entry(t.class).or_default();
            e.0 += 1;
            if self.rationale.get(&t.timeline_id) == Some(&RationaleCode::Fp) && t.status == ItemStatus::Overridden {
                e.1 += 1;
            }
        }
        stats
            .into_iter()
            .map(|(class, (reviewed, fp))| {
                let current = policy.threshold(class);
                let fp_rate = fp as f64 / reviewed as f64;
                let recommended = if fp_rate > NUDGE_RAISE_ABOVE {
                    (current + NUDGE_STEP).min(0.95)
                } else if fp == 0 && reviewed >= NUDGE_MIN_REVIEWED {
                    (current - NUDGE_STEP).max(0.05)
                } else {
                    current
                };
                ThresholdNudge {
                    class,
                    reviewed,
                    fp_overrides: fp,
                    fp_rate,
                    current,
                    recommended: crate::canonical::round_float(recommended),
                }
            })
            .collect()
    }
}
