// SPDX-License-Identifier: Apache-2.0

//! Frame-difference cues: idle, high motion and scene changes.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{frame_uri, EvidenceClass, EvidenceItem, SuggestedAction};
use crate::media::luma_plane;
use crate::segmenter::{pair_motion, ClipRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub idle_below: f64,
    pub idle_min_s: f64,
    pub high_above: f64,
    pub high_min_s: f64,
    pub scene_change_distance: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            idle_below: 0.01,
            idle_min_s: 2.0,
            high_above: 0.15,
            high_min_s: 0.5,
            scene_change_distance: 0.5,
        }
    }
}

pub const HIST_BINS: usize = 16;

/// Normalized 16-bin luma histogram.
pub fn luma_histogram(luma: &[u8]) -> [f64; HIST_BINS] {
    let mut h = [0.0; HIST_BINS];
    for &y in luma {
        h[y as usize * HIST_BINS / 256] += 1.0;
    }
    let n = luma.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Half the L1 distance of two normalized histograms, in [0, 1].
pub fn histogram_distance(a: &[f64; HIST_BINS], b: &[f64; HIST_BINS]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Maximal runs of pair indices satisfying `pred`, as `(first, last)` pair
/// indices (pair `i` joins frames `i` and `i + 1`).
fn runs(values: &[f64], pred: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (pred(v), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, values.len() - 1));
    }
    out
}

/// Runs on one clip's frames, given as `(session time, image)` in time
/// order. Output times are clip-relative.
pub fn detect_motion(frames: &[(f64, &RgbImage)], clip: &ClipRecord, params: &MotionParams) -> Vec<EvidenceItem> {
    if frames.len() < 2 {
        return Vec::new();
    }
    let lumas: Vec<Vec<u8>> = frames.iter().map(|(_, img)| luma_plane(img)).collect();
    let motion: Vec<f64> = lumas.windows(2).map(|w| pair_motion(&w[0], &w[1])).collect();
    let rel = |i: usize| frames[i].0 - clip.t_start;
    let uri = |i: usize| frame_uri(clip.view, frames[i].0, clip.fps);
    let mut out = Vec::new();
    let mut push = |class, t0: f64, t1: f64, conf: f64, action, uris: Vec<String>, energy: f64| {
        let mut payload = serde_json::Map::new();
        payload.insert("motion_energy".into(), json!(energy));
        out.push(EvidenceItem {
            item_id: String::new(),
            clip_id: clip.clip_id.clone(),
            view: clip.view,
            class,
            t_start: t0,
            t_end: t1,
            confidence: conf.clamp(0.0, 1.0),
            geometry: None,
            payload,
            evidence_uris: uris,
            suggested_action: action,
        });
    };
    let mean = |a: usize, b: usize| motion[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;

    for (a, b) in runs(&motion, |m| m < params.idle_below) {
        let (t0, t1) = (rel(a), rel(b + 1));
        if t1 - t0 >= params.idle_min_s {
            let m = mean(a, b);
            let conf = 1.0 - m / params.idle_below;
            push(EvidenceClass::Idle, t0, t1, conf, SuggestedAction::Skip, Vec::new(), m);
        }
    }
    for (a, b) in runs(&motion, |m| m > params.high_above) {
        let (t0, t1) = (rel(a), rel(b + 1));
        if t1 - t0 >= params.high_min_s {
            let m = mean(a, b);
            let peak = (a..=b).max_by(|&i, &j| motion[i].total_cmp(&motion[j]).then(j.cmp(&i))).unwrap_or(a);
            push(EvidenceClass::HighMotion, t0, t1, m.min(1.0), SuggestedAction::None, vec![uri(peak + 1)], m);
        }
    }
    let hists: Vec<_> = lumas.iter().map(|l| luma_histogram(l)).collect();
    for i in 0..hists.len() - 1 {
        let d = histogram_distance(&hists[i], &hists[i + 1]);
        if d > params.scene_change_distance {
            push(
                EvidenceClass::SceneChange,
                rel(i),
                rel(i + 1),
                d,
                SuggestedAction::None,
                vec![uri(i), uri(i + 1)],
                motion[i],
            );
        }
    }
    out
}
