// SPDX-License-Identifier: Apache-2.0

//! IoU-gated multi-object tracker with a colour-histogram appearance term.
//!
//! Association is greedy per frame: candidate (track, detection) pairs with
//! IoU at or above the threshold are scored as
//! `(1 - w) * IoU + w * cosine(embeddings)` and taken in descending score
//! order, one-to-one. A track unmatched for more than `age_out_frames`
//! consecutive frames is closed; a later detection starts a new track.

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BBox, DetectorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub iou_threshold: f64,
    pub age_out_frames: u64,
    pub appearance_weight: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            age_out_frames: 30,
            appearance_weight: 0.25,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(format!("iou_threshold {} outside (0, 1)", self.iou_threshold));
        }
        if self.age_out_frames < 1 {
            return Err("age_out_frames must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.appearance_weight) {
            return Err("appearance_weight outside [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub bbox: BBox,
    #[serde(default = "one")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: u64,
    pub t: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframes {
    pub entrance: u64,
    pub peak: u64,
    pub exit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub track_id: String,
    pub boxes: BTreeMap<u64, BBox>,
    pub t_start: f64,
    pub t_end: f64,
    pub keyframes: Keyframes,
    pub dwell_time: f64,
    pub reentry_count: u32,
    #[serde(default)]
    pub mask_uris: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Track {
    pub fn peak_box(&self) -> BBox {
        self.boxes[&self.keyframes.peak]
    }
}

struct ActiveTrack {
    id: usize,
    boxes: BTreeMap<u64, BBox>,
    times: BTreeMap<u64, f64>,
    last_frame: u64,
    embedding: Option<Vec<f64>>,
}

impl ActiveTrack {
    fn last_box(&self) -> BBox {
        *self.boxes.values().next_back().expect("tracks hold at least one box")
    }

    fn finish(self) -> Track {
        let (&first, _) = self.boxes.iter().next().expect("non-empty");
        let (&last, _) = self.boxes.iter().next_back().expect("non-empty");
        let mut peak = first;
        let mut best = f64::NEG_INFINITY;
        for (&f, b) in &self.boxes {
            if b.area() > best {
                best = b.area();
                peak = f;
            }
        }
        let t_start = self.times[&first];
        let t_end = self.times[&last];
        Track {
            track_id: format!("trk_{:06}", self.id),
            boxes: self.boxes,
            t_start,
            t_end,
            keyframes: Keyframes {
                entrance: first,
                peak,
                exit: last,
            },
            dwell_time: t_end - t_start,
            reentry_count: 0,
            mask_uris: Vec::new(),
            embedding: self.embedding,
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Association score of a track/detection pair, or `None` below the IoU gate.
pub fn match_score(
    track_box: &BBox,
    track_emb: Option<&[f64]>,
    det: &Detection,
    params: &TrackerParams,
) -> Option<f64> {
    let iou = track_box.iou(&det.bbox);
    if iou < params.iou_threshold {
        return None;
    }
    Some(match (track_emb, det.embedding.as_deref()) {
        (Some(a), Some(b)) => {
            (1.0 - params.appearance_weight) * iou + params.appearance_weight * cosine(a, b)
        }
        _ => iou,
    })
}

fn canonical_order(dets: &[Detection]) -> Vec<Detection> {
    let mut v = dets.to_vec();
    v.sort_by(|a, b| {
        a.bbox
            .x
            .total_cmp(&b.bbox.x)
            .then(a.bbox.y.total_cmp(&b.bbox.y))
            .then(a.bbox.w.total_cmp(&b.bbox.w))
            .then(a.bbox.h.total_cmp(&b.bbox.h))
            .then(b.score.total_cmp(&a.score))
    });
    v
}

/// Runs the tracker over frames in strictly increasing frame order.
pub fn run_tracker(
    frames: &[FrameDetections],
    params: &TrackerParams,
) -> Result<Vec<Track>, DetectorError> {
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut done: Vec<ActiveTrack> = Vec::new();
    let mut next_id = 1usize;
    let mut prev: Option<u64> = None;

    for fd in frames {
        if let Some(p) = prev {
            if fd.frame <= p {
                return Err(DetectorError::UnorderedInput { frame: fd.frame, prev: p });
            }
        }
        prev = Some(fd.frame);

        // Close tracks that missed more than `age_out_frames` frames.
        let (keep, expired): (Vec<_>, Vec<_>) = active
            .into_iter()
            .partition(|t| fd.frame - t.last_frame - 1 <= params.age_out_frames);
        active = keep;
        done.extend(expired);

        let dets = canonical_order(&fd.detections);
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in active.iter().enumerate() {
            let tb = t.last_box();
            for (di, d) in dets.iter().enumerate() {
                if let Some(s) = match_score(&tb, t.embedding.as_deref(), d, params) {
                    candidates.push((s, ti, di));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; active.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, ti, di) in candidates {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let t = &mut active[ti];
            t.boxes.insert(fd.frame, dets[di].bbox);
            t.times.insert(fd.frame, fd.t);
            t.last_frame = fd.frame;
            if dets[di].embedding.is_some() {
                t.embedding = dets[di].embedding.clone();
            }
        }
        for (di, d) in dets.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            active.push(ActiveTrack {
                id: next_id,
                boxes: BTreeMap::from([(fd.frame, d.bbox)]),
                times: BTreeMap::from([(fd.frame, fd.t)]),
                last_frame: fd.frame,
                embedding: d.embedding.clone(),
            });
            next_id += 1;
        }
    }
    done.extend(active);
    done.sort_by_key(|t| t.id);
    Ok(done.into_iter().map(ActiveTrack::finish).collect())
}

/// Unique tracks per tumbling window of `window` seconds over `[0, duration)`.
pub fn crowdness(tracks: &[Track], window: f64, duration: f64) -> Vec<usize> {
    if !(window > 0.0) || !(duration > 0.0) {
        return Vec::new();
    }
    let n = (duration / window).ceil() as usize;
    let mut counts = vec![0usize; n];
    for t in tracks {
        let first = (t.t_start / window).floor().max(0.0) as usize;
        let last = ((t.t_end / window).floor().max(0.0) as usize).min(n.saturating_sub(1));
        for c in counts.iter_mut().take(last + 1).skip(first) {
            *c += 1;
        }
    }
    counts
}

pub const EMBEDDING_BINS: usize = 8;
pub const EMBEDDING_DIM: usize = 3 * EMBEDDING_BINS * EMBEDDING_BINS;

/// Appearance embedding of the pixels under `bbox`: three joint 8x8 colour
/// histograms (R-G, R-B, G-B), concatenated and L2-normalized.
pub fn appearance_embedding(img: &RgbImage, bbox: &BBox) -> Option<Vec<f64>> {
    let (x0, y0, x1, y1) = bbox.pixel_rect(img.width(), img.height())?;
    let mut h = vec![0.0f64; EMBEDDING_DIM];
    let plane = EMBEDDING_BINS * EMBEDDING_BINS;
    for y in y0..y1 {
        for x in x0..x1 {
            let [r, g, b] = img.get_pixel(x, y).0;
            let (r, g, b) = (r as usize / 32, g as usize / 32, b as usize / 32);
            h[r * EMBEDDING_BINS + g] += 1.0;
            h[plane + r * EMBEDDING_BINS + b] += 1.0;
            h[2 * plane + g * EMBEDDING_BINS + b] += 1.0;
        }
    }
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    h.iter_mut().for_each(|v| *v /= norm);
    Some(h)
}
