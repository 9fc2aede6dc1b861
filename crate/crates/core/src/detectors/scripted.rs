// SPDX-License-Identifier: Apache-2.0

//! Fixture replay standing in for the neural detectors.
//!
//! A fixture is one JSON document, all times in session seconds:
//!
//! ```json
//! {
//!   "model_version": "fixture-1",
//!   "captions":      [{"view": "front", "t_start": 0, "t_end": 12, "label": "two people cooking",
//!                      "confidence": 0.8, "frames": [{"t": 3.0, "score": 0.9}]}],
//!   "activity_tags": [{"view": "front", "t_start": 4, "t_end": 9, "label": "cooking", "confidence": 0.7}],
//!   "nsfw":          [{"view": "left", "t_start": 30, "t_end": 40, "label": "nsfw", "confidence": 0.95}],
//!   "faces":         [{"face_id": "f1", "view": "front", "t": 2.5, "bbox": {"x":0,"y":0,"w":8,"h":8},
//!                      "age": 16, "confidence": 0.9}],
//!   "persons":       [{"view": "front", "frame": 0, "t": 0.0, "detections": [{"bbox": {...}, "score": 0.9}]}],
//!   "transcript":    [{"speaker": "SPEAKER_00", "words": [{"text": "hi", "t_start": 1.0, "t_end": 1.2}]}]
//! }
//! ```
//!
//! Every list is optional. Faces are replayed at `face_fps` (first
//! observation per `1/face_fps` bucket per face); caption and tag supporting
//! frames at `caption_fps`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::age::aggregate_track_age;
use super::pii::TranscriptSegment;
use super::tracker::{Detection, FrameDetections, Track};
use super::{clip_overlaps, frame_uri, BBox, DetectorError, EvidenceClass, EvidenceItem, Geometry, SuggestedAction};
use crate::projection::View;
use crate::segmenter::ClipRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportFrame {
    pub t: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanLabel {
    pub view: View,
    pub t_start: f64,
    pub t_end: f64,
    pub label: String,
    pub confidence: f64,
    #[serde(default)]
    pub frames: Vec<SupportFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceObservation {
    pub face_id: String,
    pub view: View,
    pub t: f64,
    pub bbox: BBox,
    pub age: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonFrame {
    pub view: View,
    pub frame: u64,
    pub t: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedFixture {
    pub model_version: String,
    pub captions: Vec<SpanLabel>,
    pub activity_tags: Vec<SpanLabel>,
    pub nsfw: Vec<SpanLabel>,
    pub faces: Vec<FaceObservation>,
    pub persons: Vec<PersonFrame>,
    pub transcript: Vec<TranscriptSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayParams {
    pub caption_fps: f64,
    pub face_fps: f64,
    pub top_k: usize,
    pub adult_threshold: f64,
}

impl Default for ReplayParams {
    fn default() -> Self {
        Self {
            caption_fps: 1.0,
            face_fps: 2.0,
            top_k: 3,
            adult_threshold: 18.0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> DetectorError {
    DetectorError::FixtureInvalid(msg.into())
}

fn check_conf(c: f64, what: &str) -> Result<(), DetectorError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(invalid(format!("{what}: confidence {c} outside [0, 1]")))
    }
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let fx: ScriptedFixture = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        fx.validate()?;
        Ok(fx)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        for (kind, list) in [("caption", &self.captions), ("activity_tag", &self.activity_tags), ("nsfw", &self.nsfw)] {
            for s in list {
                if !(s.t_start.is_finite() && s.t_end.is_finite() && 0.0 <= s.t_start && s.t_start <= s.t_end) {
                    return Err(invalid(format!("{kind} span [{}, {}]", s.t_start, s.t_end)));
                }
                check_conf(s.confidence, kind)?;
                for f in &s.frames {
                    if !f.t.is_finite() || !f.score.is_finite() {
                        return Err(invalid(format!("{kind} supporting frame not finite")));
                    }
                }
            }
        }
        for f in &self.faces {
            if f.face_id.is_empty() || !(f.age.is_finite() && f.age >= 0.0) || !(f.t >= 0.0) {
                return Err(invalid(format!("face {:?}", f.face_id)));
            }
            check_conf(f.confidence, "face")?;
        }
        let mut last: BTreeMap<View, u64> = BTreeMap::new();
        for p in &self.persons {
            if let Some(&prev) = last.get(&p.view) {
                if p.frame <= prev {
                    return Err(invalid(format!("person frames out of order in {}", p.view)));
                }
            }
            last.insert(p.view, p.frame);
        }
        for seg in &self.transcript {
            seg.validate().map_err(invalid)?;
        }
        Ok(())
    }
}

fn blank_item(clip: &ClipRecord, class: EvidenceClass, t0: f64, t1: f64, confidence: f64) -> EvidenceItem {
    EvidenceItem {
        item_id: String::new(),
        clip_id: clip.clip_id.clone(),
        view: clip.view,
        class,
        t_start: t0,
        t_end: t1,
        confidence,
        geometry: None,
        payload: Map::new(),
        evidence_uris: Vec::new(),
        suggested_action: SuggestedAction::None,
    }
}

/// Supporting frames inside the clip stretch, deduplicated to the replay
/// cadence, best `k` by score (ties to earlier), returned in time order.
fn top_frames(frames: &[SupportFrame], clip: &ClipRecord, t0: f64, t1: f64, fps: f64, k: usize) -> Vec<SupportFrame> {
    let (a, b) = (clip.t_start + t0, clip.t_start + t1);
    let mut by_bucket: BTreeMap<i64, SupportFrame> = BTreeMap::new();
    for f in frames.iter().filter(|f| a <= f.t && f.t <= b) {
        let bucket = (f.t * fps).floor() as i64;
        let e = by_bucket.entry(bucket).or_insert(*f);
        if f.score > e.score {
            *e = *f;
        }
    }
    let mut v: Vec<SupportFrame> = by_bucket.into_values().collect();
    v.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.t.total_cmp(&y.t)));
    v.truncate(k);
    v.sort_by(|x, y| x.t.total_cmp(&y.t));
    v
}

fn span_items(
    list: &[SpanLabel],
    class: EvidenceClass,
    clips: &[ClipRecord],
    params: &ReplayParams,
    out: &mut Vec<EvidenceItem>,
) {
    for s in list {
        for (clip, t0, t1) in clip_overlaps(clips, s.view, s.t_start, s.t_end) {
            let mut it = blank_item(clip, class, t0, t1, s.confidence);
            let frames = top_frames(&s.frames, clip, t0, t1, params.caption_fps, params.top_k);
            it.evidence_uris = if frames.is_empty() {
                vec![frame_uri(clip.view, clip.t_start + 0.5 * (t0 + t1), clip.fps)]
            } else {
                frames.iter().map(|f| frame_uri(clip.view, f.t, clip.fps)).collect()
            };
            let key = match class {
                EvidenceClass::Caption => "text",
                EvidenceClass::ActivityTag => "tag",
                _ => "label",
            };
            it.payload.insert(key.into(), Value::String(s.label.clone()));
            if class == EvidenceClass::Nsfw {
                it.payload.insert("nsfw_score".into(), json!(s.confidence));
                it.suggested_action = SuggestedAction::Withhold;
            }
            out.push(it);
        }
    }
}

/// Face observations kept at the replay cadence, grouped by face id.
fn replay_faces(fixture: &ScriptedFixture, face_fps: f64) -> BTreeMap<String, Vec<&FaceObservation>> {
    let mut groups: BTreeMap<String, BTreeMap<(View, i64), &FaceObservation>> = BTreeMap::new();
    for f in &fixture.faces {
        let bucket = (f.t * face_fps).floor() as i64;
        let g = groups.entry(f.face_id.clone()).or_default();
        let e = g.entry((f.view, bucket)).or_insert(f);
        if f.t < e.t {
            *e = f;
        }
    }
    groups
        .into_iter()
        .map(|(id, g)| {
            let mut v: Vec<&FaceObservation> = g.into_values().collect();
            v.sort_by(|a, b| a.t.total_cmp(&b.t));
            (id, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAgeRecord {
    pub face_id: String,
    pub views: Vec<View>,
    pub t_start: f64,
    pub t_end: f64,
    pub estimates: usize,
    pub track_age: f64,
    pub minor_risk: bool,
}

/// Session-level age verdict per face id (the `age.jsonl` rows).
pub fn face_age_records(fixture: &ScriptedFixture, params: &ReplayParams) -> Vec<FaceAgeRecord> {
    replay_faces(fixture, params.face_fps)
        .into_iter()
        .filter_map(|(id, obs)| {
            let ages: Vec<f64> = obs.iter().map(|o| o.age).collect();
            let v = aggregate_track_age(&ages, params.adult_threshold).ok()?;
            let mut views: Vec<View> = obs.iter().map(|o| o.view).collect();
            views.sort();
            views.dedup();
            Some(FaceAgeRecord {
                face_id: id,
                views,
                t_start: obs.first()?.t,
                t_end: obs.last()?.t,
                estimates: ages.len(),
                track_age: v.track_age,
                minor_risk: v.minor_risk,
            })
        })
        .collect()
}

fn face_items(fixture: &ScriptedFixture, clips: &[ClipRecord], params: &ReplayParams, out: &mut Vec<EvidenceItem>) {
    for (face_id, obs) in replay_faces(fixture, params.face_fps) {
        for clip in clips {
            let inside: Vec<&FaceObservation> = obs
                .iter()
                .copied()
                .filter(|o| o.view == clip.view && clip.t_start <= o.t && o.t <= clip.t_end)
                .collect();
            let Some(first) = inside.first() else { continue };
            let ages: Vec<f64> = inside.iter().map(|o| o.age).collect();
            let Ok(verdict) = aggregate_track_age(&ages, params.adult_threshold) else { continue };
            if !verdict.minor_risk {
                continue;
            }
            let last = inside[inside.len() - 1];
            let conf = inside.iter().map(|o| o.confidence).fold(0.0, f64::max);
            let mut it = blank_item(clip, EvidenceClass::MinorRisk, first.t - clip.t_start, last.t - clip.t_start, conf);
            let bbox = inside[1..].iter().fold(first.bbox, |acc, o| acc.union(&o.bbox));
            it.geometry = Some(Geometry::Box(bbox));
            it.suggested_action = verdict.suggested_action;
            it.payload.insert("face_id".into(), json!(face_id));
            it.payload.insert("track_age".into(), json!(verdict.track_age));
            it.payload.insert("adult_threshold".into(), json!(params.adult_threshold));
            it.payload.insert("estimates".into(), json!(ages.len()));
            let mut best: Vec<&FaceObservation> = inside.clone();
            best.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.t.total_cmp(&b.t)));
            best.truncate(params.top_k);
            best.sort_by(|a, b| a.t.total_cmp(&b.t));
            it.evidence_uris = best.iter().map(|o| frame_uri(clip.view, o.t, clip.fps)).collect();
            out.push(it);
        }
    }
}

/// Replays captions, activity tags, NSFW spans and face ages against the
/// clip ledger. Items carry clip-relative times and are not yet finalized.
pub fn run_scripted_detector(
    fixture: &ScriptedFixture,
    clips: &[ClipRecord],
    params: &ReplayParams,
) -> Result<Vec<EvidenceItem>, DetectorError> {
    fixture.validate()?;
    if !(params.caption_fps > 0.0 && params.face_fps > 0.0 && params.top_k >= 1) {
        return Err(invalid("replay cadence and top_k must be positive"));
    }
    let mut out = Vec::new();
    span_items(&fixture.captions, EvidenceClass::Caption, clips, params, &mut out);
    span_items(&fixture.activity_tags, EvidenceClass::ActivityTag, clips, params, &mut out);
    span_items(&fixture.nsfw, EvidenceClass::Nsfw, clips, params, &mut out);
    face_items(fixture, clips, params, &mut out);
    for it in &out {
        it.validate()?;
    }
    Ok(out)
}

/// Per-frame person detections for one view, in frame order.
pub fn replay_person_detections(fixture: &ScriptedFixture, view: View) -> Vec<FrameDetections> {
    let mut v: Vec<FrameDetections> = fixture
        .persons
        .iter()
        .filter(|p| p.view == view)
        .map(|p| FrameDetections {
            frame: p.frame,
            t: p.t,
            detections: p.detections.clone(),
        })
        .collect();
    v.sort_by_key(|f| f.frame);
    v
}

pub fn replay_transcript(fixture: &ScriptedFixture) -> Vec<TranscriptSegment> {
    fixture.transcript.clone()
}

/// One `person_track` item per (track, clip) overlap. Evidence is the
/// entrance, peak and exit keyframes that fall inside the clip, or the
/// frame nearest the overlap midpoint.
pub fn person_track_items(tracks: &[Track], clips: &[ClipRecord], view: View, fps: f64) -> Vec<EvidenceItem> {
    let mut out = Vec::new();
    for tr in tracks {
        for (clip, t0, t1) in clip_overlaps(clips, view, tr.t_start, tr.t_end) {
            let mut it = blank_item(clip, EvidenceClass::PersonTrack, t0, t1, 1.0);
            it.geometry = Some(Geometry::Box(tr.peak_box()));
            let (a, b) = (clip.t_start + t0, clip.t_start + t1);
            let mut uris: Vec<String> = [tr.keyframes.entrance, tr.keyframes.peak, tr.keyframes.exit]
                .iter()
                .map(|&f| f as f64 / fps)
                .filter(|t| a - 1e-9 <= *t && *t <= b + 1e-9)
                .map(|t| frame_uri(view, t, fps))
                .collect();
            uris.dedup();
            if uris.is_empty() {
                uris.push(frame_uri(view, 0.5 * (a + b), fps));
            }
            it.evidence_uris = uris;
            it.payload.insert("track_id".into(), json!(tr.track_id));
            it.payload.insert("dwell_time".into(), json!(tr.dwell_time));
            it.payload.insert("reentry_count".into(), json!(tr.reentry_count));
            out.push(it);
        }
    }
    out
}
