// SPDX-License-Identifier: Apache-2.0

//! Evidence fusion: session-time mapping, same-class merging, cross-view
//! deduplication, priority ranking and conservative auto-skip.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::tracker::{cosine, Track};
use crate::detectors::{BBox, DetectorError, EvidenceClass, EvidenceItem, Geometry, SuggestedAction};
use crate::intervals::{IntervalSet, Span};
use crate::projection::View;
use crate::segmenter::ClipRecord;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("unknown clip {0}")]
    UnknownClip(String),
    #[error(transparent)]
    SchemaViolation(#[from] DetectorError),
    #[error("invalid fusion policy: {0}")]
    PolicyInvalid(String),
    #[error("duration must be positive")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Adjusted,
    Overridden,
    Adjudication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineItem {
    pub timeline_id: String,
    pub class: EvidenceClass,
    pub t_start: f64,
    pub t_end: f64,
    pub confidence: f64,
    pub evidence_refs: Vec<String>,
    pub views: BTreeSet<View>,
    /// Union box of the constituents, per view.
    #[serde(default)]
    pub geometry: BTreeMap<View, BBox>,
    pub suggested_action: SuggestedAction,
    pub priority_rank: u32,
    pub status: ItemStatus,
}

impl TimelineItem {
    pub fn span(&self) -> Span {
        Span::new(self.t_start, self.t_end)
    }

    /// Closed-interval test, so point items inside `span` count.
    pub fn intersects(&self, span: &Span) -> bool {
        if self.t_start == self.t_end {
            span.start <= self.t_start && self.t_start < span.end
        } else {
            self.t_start < span.end && span.start < self.t_end
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Idle,
    Black,
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipSpan {
    pub t_start: f64,
    pub t_end: f64,
    pub reason: SkipReason,
}

impl SkipSpan {
    pub fn span(&self) -> Span {
        Span::new(self.t_start, self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressReason {
    BelowThreshold,
    AutoSkipped,
}

/// Evidence kept out of the timeline, retained for audit and re-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressedItem {
    pub reason: SuppressReason,
    pub class: EvidenceClass,
    pub t_start: f64,
    pub t_end: f64,
    pub confidence: f64,
    pub evidence_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoskipPolicy {
    pub motion_below: f64,
    pub loudness_below: f64,
    pub black_above: f64,
    pub min_span_s: f64,
    /// Clearance kept around governance items.
    pub governance_guard_s: f64,
}

impl Default for AutoskipPolicy {
    fn default() -> Self {
        Self {
            motion_below: 0.01,
            loudness_below: -60.0,
            black_above: 0.9,
            min_span_s: 5.0,
            governance_guard_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    pub thresholds: BTreeMap<EvidenceClass, f64>,
    pub gap_tolerance: f64,
    /// Flag classes, highest priority first. Classes absent here are
    /// context evidence and never become timeline items.
    pub priority: Vec<EvidenceClass>,
    pub autoskip: AutoskipPolicy,
    pub default_actions: BTreeMap<EvidenceClass, SuggestedAction>,
    pub dedup_iou: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        use EvidenceClass::*;
        let priority = vec![Nsfw, MinorRisk, Pii, ActivityTag, SceneChange, HighMotion, Idle];
        let thresholds = priority
            .iter()
            .map(|&c| (c, if c.is_governance() { 0.3 } else { 0.5 }))
            .collect();
        Self {
            thresholds,
            gap_tolerance: 0.5,
            priority,
            autoskip: AutoskipPolicy::default(),
            default_actions: [
                (MinorRisk, SuggestedAction::BlurAndReview),
                (Nsfw, SuggestedAction::Withhold),
                (Pii, SuggestedAction::Mute),
            ]
            .into_iter()
            .collect(),
            dedup_iou: 0.5,
        }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::PolicyInvalid(m));
        for (c, t) in &self.thresholds {
            if !(0.0..=1.0).contains(t) {
                return bad(format!("threshold for {c} outside [0, 1]"));
            }
        }
        let unique: BTreeSet<_> = self.priority.iter().collect();
        if unique.len() != self.priority.len() {
            return bad("priority order repeats a class".into());
        }
        for g in [EvidenceClass::Nsfw, EvidenceClass::MinorRisk, EvidenceClass::Pii] {
            if !unique.contains(&g) {
                return bad(format!("governance class {g} missing from priority order"));
            }
        }
        if !(self.gap_tolerance >= 0.0) || !(self.dedup_iou > 0.0 && self.dedup_iou <= 1.0) {
            return bad("gap_tolerance must be >= 0 and dedup_iou in (0, 1]".into());
        }
        let a = &self.autoskip;
        if !(a.min_span_s >= 0.0 && a.governance_guard_s > 0.0) {
            return bad("autoskip spans must be non-negative and the guard positive".into());
        }
        Ok(())
    }

    pub fn threshold(&self, class: EvidenceClass) -> f64 {
        self.thresholds.get(&class).copied().unwrap_or(0.0)
    }

    pub fn class_rank(&self, class: EvidenceClass) -> Option<usize> {
        self.priority.iter().position(|&c| c == class)
    }
}

pub fn clip_time_to_session_time(clips: &[ClipRecord], clip_id: &str, t: f64) -> Result<f64, FusionError> {
    clips
        .iter()
        .find(|c| c.clip_id == clip_id)
        .map(|c| c.t_start + t)
        .ok_or_else(|| FusionError::UnknownClip(clip_id.to_string()))
}

fn action_strictness(a: SuggestedAction) -> u8 {
    match a {
        SuggestedAction::Withhold => 7,
        SuggestedAction::BlurAndReview => 6,
        SuggestedAction::Blur => 5,
        SuggestedAction::ToneReplace => 4,
        SuggestedAction::Mute => 3,
        SuggestedAction::TextOverlay => 2,
        SuggestedAction::Skip => 1,
        SuggestedAction::None => 0,
    }
}

fn absorb(into: &mut TimelineItem, other: TimelineItem) {
    into.t_start = into.t_start.min(other.t_start);
    into.t_end = into.t_end.max(other.t_end);
    into.confidence = into.confidence.max(other.confidence);
    into.evidence_refs.extend(other.evidence_refs);
    into.views.extend(other.views);
    for (v, b) in other.geometry {
        into.geometry
            .entry(v)
            .and_modify(|e| *e = e.union(&b))
            .or_insert(b);
    }
    if action_strictness(other.suggested_action) > action_strictness(into.suggested_action) {
        into.suggested_action = other.suggested_action;
    }
}

/// Union-merges items of one class whose gap is at most `gap_tolerance`.
pub fn merge_same_class(mut items: Vec<TimelineItem>, gap_tolerance: f64) -> Vec<TimelineItem> {
    items.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_end.total_cmp(&b.t_end)));
    let mut out: Vec<TimelineItem> = Vec::with_capacity(items.len());
    for it in items {
        match out.last_mut() {
            Some(cur) if it.t_start - cur.t_end <= gap_tolerance => absorb(cur, it),
            _ => out.push(it),
        }
    }
    out
}

/// Merges items of one class seen from disjoint view sets whose spans reach
/// temporal IoU `min_iou`. Repeats until no pair qualifies.
pub fn dedup_across_views(mut items: Vec<TimelineItem>, min_iou: f64) -> Vec<TimelineItem> {
    items.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_end.total_cmp(&b.t_end)));
    loop {
        let mut merged = false;
        'outer: for i in 0..items.len() {
            for j in i + 1..items.len() {
                let (a, b) = (&items[i], &items[j]);
                if a.views.is_disjoint(&b.views) && a.span().iou(&b.span()) >= min_iou {
                    let b = items.remove(j);
                    absorb(&mut items[i], b);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return items;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionOutput {
    pub timeline: Vec<TimelineItem>,
    pub skips: Vec<SkipSpan>,
    pub suppressed: Vec<SuppressedItem>,
}

fn clip_skip_reason(c: &ClipRecord, p: &AutoskipPolicy) -> Option<SkipReason> {
    let d = &c.descriptors;
    if d.black_ratio > p.black_above {
        Some(SkipReason::Black)
    } else if d.motion_energy < p.motion_below && d.loudness < p.loudness_below {
        Some(SkipReason::Idle)
    } else {
        None
    }
}

/// Regions where every covering clip of every view is low-salience, minus a
/// guard band around governance evidence, keeping spans of at least
/// `min_span_s`.
pub fn compute_skip_spans(clips: &[ClipRecord], governance: &[Span], duration: f64, policy: &AutoskipPolicy) -> Vec<SkipSpan> {
    let all = IntervalSet::from_spans(clips.iter().map(|c| Span::new(c.t_start, c.t_end)));
    let salient = IntervalSet::from_spans(
        clips
            .iter()
            .filter(|c| clip_skip_reason(c, policy).is_none())
            .map(|c| Span::new(c.t_start, c.t_end)),
    );
    let guard = IntervalSet::from_spans(
        governance
            .iter()
            .map(|s| Span::new(s.start - policy.governance_guard_s, s.end + policy.governance_guard_s)),
    );
    let bounds = IntervalSet::from_spans([Span::new(0.0, duration)]);
    let skip = all
        .subtract(&salient)
        .subtract(&guard)
        .intersect(&bounds)
        .retain_min_len(policy.min_span_s);
    skip.spans()
        .iter()
        .map(|s| {
            let covering: Vec<_> = clips.iter().filter(|c| c.t_start < s.end && s.start < c.t_end).collect();
            let black = !covering.is_empty()
                && covering
                    .iter()
                    .all(|c| clip_skip_reason(c, policy) == Some(SkipReason::Black));
            SkipSpan {
                t_start: s.start,
                t_end: s.end,
                reason: if black { SkipReason::Black } else { SkipReason::Idle },
            }
        })
        .collect()
}

/// Builds the prioritized timeline. Evidence times are clip-relative on
/// input; the output is in session time.
pub fn build_timeline(
    evidence: &[EvidenceItem],
    clips: &[ClipRecord],
    duration: f64,
    policy: &FusionPolicy,
) -> Result<FusionOutput, FusionError> {
    policy.validate()?;
    if !(duration > 0.0) {
        return Err(FusionError::ZeroDuration);
    }
    let clip_index: HashMap<&str, &ClipRecord> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let mut suppressed = Vec::new();
    let mut by_class: BTreeMap<(EvidenceClass, View), Vec<TimelineItem>> = BTreeMap::new();
    let mut governance_spans = Vec::new();

    for ev in evidence {
        ev.validate()?;
        let clip = clip_index
            .get(ev.clip_id.as_str())
            .ok_or_else(|| FusionError::UnknownClip(ev.clip_id.clone()))?;
        if policy.class_rank(ev.class).is_none() {
            continue;
        }
        let t_start = (clip.t_start + ev.t_start).clamp(0.0, duration);
        let t_end = (clip.t_start + ev.t_end).clamp(0.0, duration);
        if ev.class.is_governance() {
            governance_spans.push(Span::new(t_start, t_end));
        }
        if ev.confidence < policy.threshold(ev.class) {
            suppressed.push(SuppressedItem {
                reason: SuppressReason::BelowThreshold,
                class: ev.class,
                t_start,
                t_end,
                confidence: ev.confidence,
                evidence_refs: vec![ev.item_id.clone()],
            });
            continue;
        }
        let action = match policy.default_actions.get(&ev.class) {
            Some(&d) if !ev.suggested_action.is_actionable() => d,
            _ => ev.suggested_action,
        };
        let mut geometry = BTreeMap::new();
        if let Some(Geometry::Box(b)) = &ev.geometry {
            geometry.insert(ev.view, *b);
        }
        by_class.entry((ev.class, ev.view)).or_default().push(TimelineItem {
            timeline_id: String::new(),
            class: ev.class,
            t_start,
            t_end,
            confidence: ev.confidence,
            evidence_refs: vec![ev.item_id.clone()],
            views: [ev.view].into_iter().collect(),
            geometry,
            suggested_action: action,
            priority_rank: 0,
            status: ItemStatus::Pending,
        });
    }

    let mut per_class: BTreeMap<EvidenceClass, Vec<TimelineItem>> = BTreeMap::new();
    for ((class, _), items) in by_class {
        per_class
            .entry(class)
            .or_default()
            .extend(merge_same_class(items, policy.gap_tolerance));
    }

    let skips = compute_skip_spans(clips, &governance_spans, duration, &policy.autoskip);
    let skip_set = IntervalSet::from_spans(skips.iter().map(SkipSpan::span));

    let mut timeline = Vec::new();
    for (class, items) in per_class {
        for it in dedup_across_views(items, policy.dedup_iou) {
            if class.is_governance() {
                timeline.push(it);
                continue;
            }
            let span = it.span();
            let pieces = if span.is_empty() {
                if skip_set.intersects(&span) {
                    IntervalSet::new()
                } else {
                    // point items survive as-is
                    timeline.push(it);
                    continue;
                }
            } else {
                IntervalSet::from_spans([span]).subtract(&skip_set)
            };
            if pieces.is_empty() {
                suppressed.push(SuppressedItem {
                    reason: SuppressReason::AutoSkipped,
                    class,
                    t_start: it.t_start,
                    t_end: it.t_end,
                    confidence: it.confidence,
                    evidence_refs: it.evidence_refs,
                });
                continue;
            }
            for p in pieces.spans() {
                let mut piece = it.clone();
                piece.t_start = p.start;
                piece.t_end = p.end;
                timeline.push(piece);
            }
        }
    }

    timeline.sort_by(|a, b| {
        policy
            .class_rank(a.class)
            .cmp(&policy.class_rank(b.class))
            .then(a.t_start.total_cmp(&b.t_start))
            .then(a.t_end.total_cmp(&b.t_end))
            .then(a.views.cmp(&b.views))
            .then(a.evidence_refs.cmp(&b.evidence_refs))
    });
    for (i, it) in timeline.iter_mut().enumerate() {
        it.timeline_id = format!("tl_{i:06}");
        it.priority_rank = i as u32;
        it.evidence_refs.sort();
    }
    suppressed.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.class.cmp(&b.class))
            .then(a.evidence_refs.cmp(&b.evidence_refs))
    });
    Ok(FusionOutput {
        timeline,
        skips,
        suppressed,
    })
}

/// `1 - |flagged \ skipped| / duration`, clamped to [0, 1].
pub fn review_volume_reduction(timeline: &[TimelineItem], skips: &[SkipSpan], duration: f64) -> Result<f64, FusionError> {
    if !(duration > 0.0) {
        return Err(FusionError::ZeroDuration);
    }
    let flagged = IntervalSet::from_spans(timeline.iter().map(TimelineItem::span));
    let skipped = IntervalSet::from_spans(skips.iter().map(SkipSpan::span));
    let kept = flagged.subtract(&skipped).total_len();
    Ok((1.0 - kept / duration).clamp(0.0, 1.0))
}

pub const REENTRY_MIN_COSINE: f64 = 0.8;
pub const REENTRY_WINDOW_S: f64 = 60.0;

/// Links tracks that plausibly belong to one person: a track starting within
/// `window_s` after another ends, with embedding cosine at least
/// `min_cosine`, continues that identity. Returns `(track_id, identity)`
/// pairs and sets each track's `reentry_count` to the number of re-entries
/// of its identity.
pub fn link_reentries(tracks: &mut [Track], min_cosine: f64, window_s: f64) -> Vec<(String, String)> {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| {
        tracks[a]
            .t_start
            .total_cmp(&tracks[b].t_start)
            .then(tracks[a].track_id.cmp(&tracks[b].track_id))
    });
    let mut identity: Vec<usize> = (0..tracks.len()).collect();
    let mut linked: Vec<bool> = vec![false; tracks.len()];
    for (pos, &i) in order.iter().enumerate() {
        let Some(ei) = tracks[i].embedding.as_ref() else { continue };
        let mut best: Option<(f64, usize)> = None;
        for &j in &order[..pos] {
            if linked[j] {
                continue;
            }
            let gap = tracks[i].t_start - tracks[j].t_end;
            if !(gap > 0.0 && gap <= window_s) {
                continue;
            }
            let Some(ej) = tracks[j].embedding.as_ref() else { continue };
            let c = cosine(ei, ej);
            if c >= min_cosine && best.is_none_or(|(bc, _)| c > bc) {
                best = Some((c, j));
            }
        }
        if let Some((_, j)) = best {
            // each track continues at most one predecessor and is continued at most once
            linked[j] = true;
            identity[i] = identity[j];
        }
    }
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for &id in &identity {
        *counts.entry(id).or_default() += 1;
    }
    for (i, t) in tracks.iter_mut().enumerate() {
        t.reentry_count = counts[&identity[i]] - 1;
    }
    let mut out: Vec<(String, String)> = (0..tracks.len())
        .map(|i| (tracks[i].track_id.clone(), tracks[identity[i]].track_id.clone()))
        .collect();
    out.sort();
    out
}
