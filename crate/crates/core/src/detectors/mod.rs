// SPDX-License-Identifier: Apache-2.0

//! Detector contract and reference detectors.
//!
//! Every detector, reference or external, emits [`EvidenceItem`] records in
//! clip-relative time. Fusion consumes only this contract, so a detector can
//! be swapped without touching anything downstream.

pub mod age;
pub mod audio;
pub mod external;
pub mod motion;
pub mod pii;
pub mod scripted;
pub mod tracker;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical::to_canonical_string;
use crate::projection::View;
use crate::segmenter::ClipRecord;

pub use age::{aggregate_track_age, AgeVerdict};
pub use audio::{detect_claps, ClapAnchor, ClapParams};
pub use pii::{pii_items, scan_pii, PiiEntity, PiiHit, PiiPolicy, TranscriptSegment, Word};
pub use scripted::{run_scripted_detector, ReplayParams, ScriptedFixture};
pub use tracker::{crowdness, run_tracker, Detection, FrameDetections, Track, TrackerParams};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("detections out of order: frame {frame} after {prev}")]
    UnorderedInput { frame: u64, prev: u64 },
    #[error("sample rate {0} Hz below 8 kHz")]
    SampleRateTooLow(u32),
    #[error("invalid PII policy: {0}")]
    PolicyInvalid(String),
    #[error("no age estimates")]
    NoEstimates,
    #[error("invalid fixture: {0}")]
    FixtureInvalid(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("external detector failed: {0}")]
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceClass {
    Caption,
    ActivityTag,
    PersonTrack,
    Pii,
    MinorRisk,
    Nsfw,
    SceneChange,
    HighMotion,
    Idle,
    ClapAnchor,
}

impl EvidenceClass {
    pub const ALL: [EvidenceClass; 10] = [
        EvidenceClass::Caption,
        EvidenceClass::ActivityTag,
        EvidenceClass::PersonTrack,
        EvidenceClass::Pii,
        EvidenceClass::MinorRisk,
        EvidenceClass::Nsfw,
        EvidenceClass::SceneChange,
        EvidenceClass::HighMotion,
        EvidenceClass::Idle,
        EvidenceClass::ClapAnchor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvidenceClass::Caption => "caption",
            EvidenceClass::ActivityTag => "activity_tag",
            EvidenceClass::PersonTrack => "person_track",
            EvidenceClass::Pii => "pii",
            EvidenceClass::MinorRisk => "minor_risk",
            EvidenceClass::Nsfw => "nsfw",
            EvidenceClass::SceneChange => "scene_change",
            EvidenceClass::HighMotion => "high_motion",
            EvidenceClass::Idle => "idle",
            EvidenceClass::ClapAnchor => "clap_anchor",
        }
    }

    /// Classes whose flags carry mandatory default actions.
    pub fn is_governance(&self) -> bool {
        matches!(self, EvidenceClass::Pii | EvidenceClass::MinorRisk | EvidenceClass::Nsfw)
    }

    /// Classes allowed to omit evidence URIs.
    pub fn evidence_optional(&self) -> bool {
        matches!(self, EvidenceClass::Idle | EvidenceClass::ClapAnchor)
    }
}

impl fmt::Display for EvidenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestedAction {
    Blur,
    Mute,
    ToneReplace,
    TextOverlay,
    Withhold,
    BlurAndReview,
    Skip,
    None,
}

impl SuggestedAction {
    /// Whether accepting this action changes the deliverable.
    pub fn is_actionable(&self) -> bool {
        !matches!(self, SuggestedAction::Skip | SuggestedAction::None)
    }
}

/// Axis-aligned box in pixels of the view it was detected in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection_area(&self, o: &BBox) -> f64 {
        let ix = (self.x + self.w).min(o.x + o.w) - self.x.max(o.x);
        let iy = (self.y + self.h).min(o.y + o.h) - self.y.max(o.y);
        ix.max(0.0) * iy.max(0.0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = self.intersection_area(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn union(&self, o: &BBox) -> BBox {
        let x0 = self.x.min(o.x);
        let y0 = self.y.min(o.y);
        let x1 = (self.x + self.w).max(o.x + o.w);
        let y1 = (self.y + self.h).max(o.y + o.h);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Integer pixel rectangle `(x0, y0, x1, y1)` (exclusive end) clipped to
    /// a `width x height` raster; `None` when empty.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = self.x.floor().max(0.0).min(width as f64) as u32;
        let y0 = self.y.floor().max(0.0).min(height as f64) as u32;
        let x1 = (self.x + self.w).ceil().max(0.0).min(width as f64) as u32;
        let y1 = (self.y + self.h).ceil().max(0.0).min(height as f64) as u32;
        (x1 > x0 && y1 > y0 && self.w > 0.0 && self.h > 0.0).then_some((x0, y0, x1, y1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Box(BBox),
    Mask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceItem {
    pub item_id: String,
    pub clip_id: String,
    pub view: View,
    pub class: EvidenceClass,
    pub t_start: f64,
    pub t_end: f64,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub payload: Map<String, Value>,
    #[serde(default)]
    pub evidence_uris: Vec<String>,
    pub suggested_action: SuggestedAction,
}

impl EvidenceItem {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::SchemaViolation(format!("{}: {m}", self.item_id)));
        if self.clip_id.is_empty() {
            return bad("empty clip_id".into());
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start > self.t_end {
            return bad(format!("bad span [{}, {}]", self.t_start, self.t_end));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if self.evidence_uris.is_empty() && !self.class.evidence_optional() {
            return bad(format!("{} item without evidence", self.class));
        }
        if let Some(Geometry::Box(b)) = &self.geometry {
            if !(b.w >= 0.0 && b.h >= 0.0) {
                return bad("negative box extent".into());
            }
        }
        Ok(())
    }

    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.clip_id
            .cmp(&other.clip_id)
            .then(self.class.cmp(&other.class))
            .then(self.t_start.total_cmp(&other.t_start))
            .then(self.t_end.total_cmp(&other.t_end))
    }
}

/// Sorts by `(clip_id, class, t_start, t_end, content)` and assigns
/// `<clip_id>:<class>:<nnn>` ids, so the result does not depend on the order
/// detectors finished in.
pub fn finalize_items(mut items: Vec<EvidenceItem>) -> Vec<EvidenceItem> {
    for it in &mut items {
        it.item_id.clear();
    }
    let keyed: Vec<(String, EvidenceItem)> = items
        .into_iter()
        .map(|it| (to_canonical_string(&it).unwrap_or_default(), it))
        .collect();
    let mut keyed = keyed;
    keyed.sort_by(|a, b| a.1.sort_key_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(keyed.len());
    let mut counter: Option<(String, EvidenceClass, usize)> = None;
    for (_, mut it) in keyed {
        let n = match &mut counter {
            Some((c, k, n)) if *c == it.clip_id && *k == it.class => {
                *n += 1;
                *n
            }
            _ => {
                counter = Some((it.clip_id.clone(), it.class, 0));
                0
            }
        };
        it.item_id = format!("{}:{}:{n:03}", it.clip_id, it.class);
        out.push(it);
    }
    out
}

/// Clips of `view` that share a positive-length stretch with session span
/// `[t_start, t_end]`, paired with that stretch in clip-relative time. A
/// zero-length span is assigned to every clip containing it.
pub fn clip_overlaps<'a>(
    clips: &'a [ClipRecord],
    view: View,
    t_start: f64,
    t_end: f64,
) -> Vec<(&'a ClipRecord, f64, f64)> {
    clips
        .iter()
        .filter(|c| c.view == view)
        .filter_map(|c| {
            let a = t_start.max(c.t_start);
            let b = t_end.min(c.t_end);
            let hit = if t_end > t_start { b > a } else { a <= b };
            hit.then(|| (c, a - c.t_start, b - c.t_start))
        })
        .collect()
}

/// Evidence URI of the source frame nearest to session time `t`.
pub fn frame_uri(view: View, t: f64, fps: f64) -> String {
    let idx = if fps > 0.0 { (t * fps).round().max(0.0) as u64 } else { 0 };
    format!("views/{view}/frame_{idx:06}.ppm")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(class: EvidenceClass, t0: f64, t1: f64) -> EvidenceItem {
        EvidenceItem {
            item_id: "x".into(),
            clip_id: "s_front_000000".into(),
            view: View::Front,
            class,
            t_start: t0,
            t_end: t1,
            confidence: 0.9,
            geometry: None,
            payload: Map::new(),
            evidence_uris: vec!["views/front/frame_000000.ppm".into()],
            suggested_action: SuggestedAction::None,
        }
    }

    #[test]
    fn validation_rules() {
        item(EvidenceClass::Caption, 0.0, 1.0).validate().unwrap();
        assert!(item(EvidenceClass::Caption, 2.0, 1.0).validate().is_err());
        let mut i = item(EvidenceClass::Nsfw, 0.0, 1.0);
        i.confidence = 1.5;
        assert!(i.validate().is_err());
        let mut i = item(EvidenceClass::Pii, 0.0, 1.0);
        i.evidence_uris.clear();
        assert!(i.validate().is_err());
        let mut i = item(EvidenceClass::Idle, 0.0, 1.0);
        i.evidence_uris.clear();
        i.validate().unwrap();
    }

    #[test]
    fn finalize_is_order_independent() {
        let a = vec![
            item(EvidenceClass::Pii, 3.0, 4.0),
            item(EvidenceClass::Caption, 0.0, 60.0),
            item(EvidenceClass::Pii, 1.0, 2.0),
        ];
        let mut b = a.clone();
        b.reverse();
        let fa = finalize_items(a);
        assert_eq!(fa, finalize_items(b));
        let ids: Vec<_> = fa.iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(
            ids,
            ["s_front_000000:caption:000", "s_front_000000:pii:000", "s_front_000000:pii:001"]
        );
        assert_eq!(fa[1].t_start, 1.0);
    }

    #[test]
    fn box_iou_and_rect() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.pixel_rect(8, 8), Some((0, 0, 8, 8)));
        assert_eq!(BBox::new(2.0, 2.0, 0.0, 5.0).pixel_rect(8, 8), None);
    }
}
