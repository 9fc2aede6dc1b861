// SPDX-License-Identifier: Apache-2.0

//! Independent reference implementations and fixtures shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gaze::autoreview::auto_review;
use gaze::synth::{generate, SynthParams};
use gaze::{run_pipeline, PipelineConfig, Stage};
use gaze_core::detectors::tracker::{Detection, FrameDetections, Track};
use gaze_core::detectors::BBox;
use gaze_core::metrics::{LogEvent, ReviewLogEntry};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ----- tracker ----------------------------------------------------------------

/// A track as the ordered list of `(frame, box bits)` it owns.
pub type TrackSig = Vec<(u64, [u64; 4])>;

fn bits(b: &BBox) -> [u64; 4] {
    [b.x.to_bits(), b.y.to_bits(), b.w.to_bits(), b.h.to_bits()]
}

/// The tracker's own gate measure.
fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

pub fn signatures(tracks: &[Track]) -> Vec<TrackSig> {
    let mut v: Vec<TrackSig> = tracks
        .iter()
        .map(|t| t.boxes.iter().map(|(f, b)| (*f, bits(b))).collect())
        .collect();
    v.sort();
    v
}

struct OracleTrack {
    boxes: Vec<(u64, BBox)>,
}

impl OracleTrack {
    fn last(&self) -> (u64, BBox) {
        *self.boxes.last().unwrap()
    }
}

/// Best total score over one-to-one assignments of `dets` to `tracks`, by
/// enumeration. `pairs[d]` lists `(track, score)` for gated pairs.
fn best_assignment(pairs: &[Vec<(usize, f64)>], d: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, best: &mut (f64, Vec<Option<usize>>)) {
    if d == pairs.len() {
        let total: f64 = cur
            .iter()
            .enumerate()
            .filter_map(|(di, t)| t.map(|ti| pairs[di].iter().find(|p| p.0 == ti).unwrap().1))
            .sum();
        if total > best.0 {
            *best = (total, cur.clone());
        }
        return;
    }
    for &(ti, _) in &pairs[d] {
        if used[ti] {
            continue;
        }
        used[ti] = true;
        cur[d] = Some(ti);
        best_assignment(pairs, d + 1, used, cur, best);
        used[ti] = false;
        cur[d] = None;
    }
    best_assignment(pairs, d + 1, used, cur, best);
}

/// Tracker with the same gate and age-out rule, but optimal per-frame
/// assignment (maximum total IoU) instead of greedy.
pub fn oracle_tracks(frames: &[FrameDetections], iou_gate: f64, age_out: u64) -> Vec<TrackSig> {
    let mut active: Vec<OracleTrack> = Vec::new();
    let mut done: Vec<OracleTrack> = Vec::new();
    for fd in frames {
        let (keep, gone): (Vec<_>, Vec<_>) = active
            .into_iter()
            .partition(|t| fd.frame - t.last().0 - 1 <= age_out);
        active = keep;
        done.extend(gone);
        let pairs: Vec<Vec<(usize, f64)>> = fd
            .detections
            .iter()
            .map(|d| {
                active
                    .iter()
                    .enumerate()
                    .filter_map(|(ti, t)| {
                        let s = iou(&t.last().1, &d.bbox);
                        (s >= iou_gate).then_some((ti, s))
                    })
                    .collect()
            })
            .collect();
        let mut best = (-1.0, vec![None; pairs.len()]);
        best_assignment(&pairs, 0, &mut vec![false; active.len()], &mut vec![None; pairs.len()], &mut best);
        for (di, d) in fd.detections.iter().enumerate() {
            match best.1[di] {
                Some(ti) => active[ti].boxes.push((fd.frame, d.bbox)),
                None => active.push(OracleTrack {
                    boxes: vec![(fd.frame, d.bbox)],
                }),
            }
        }
    }
    done.extend(active);
    let mut v: Vec<TrackSig> = done
        .iter()
        .map(|t| t.boxes.iter().map(|(f, b)| (*f, bits(b))).collect())
        .collect();
    v.sort();
    v
}

pub struct Scene {
    pub frames: Vec<FrameDetections>,
    /// No box of one object ever gates a box of another within the age-out
    /// horizon.
    pub crossing_free: bool,
}

/// Up to four boxes moving at constant velocity over up to 60 frames, with
/// random dropouts. In `lanes` mode each object keeps to its own horizontal
/// band.
pub fn random_scene(rng: &mut ChaCha8Rng, lanes: bool, iou_gate: f64, age_out: u64) -> Scene {
    let n_obj = rng.random_range(1..=4usize);
    let n_frames = rng.random_range(10..=60u64);
    let mut paths: Vec<BTreeMap<u64, BBox>> = Vec::new();
    for k in 0..n_obj {
        let w = rng.random_range(20.0..40.0f64).round();
        let h = rng.random_range(20.0..40.0f64).round();
        let (mut x, mut y) = if lanes {
            (rng.random_range(0.0..200.0f64).round(), 10.0 + 60.0 * k as f64)
        } else {
            (rng.random_range(0.0..90.0f64).round(), rng.random_range(0.0..90.0f64).round())
        };
        let vx = rng.random_range(-4.0..4.0f64).round();
        let vy = if lanes { 0.0 } else { rng.random_range(-4.0..4.0f64).round() };
        let a = rng.random_range(0..n_frames / 2);
        let b = rng.random_range(a + 1..=n_frames);
        let mut path = BTreeMap::new();
        for f in 0..n_frames {
            if f >= a && f < b && !rng.random_bool(0.12) {
                path.insert(f, BBox::new(x, y, w, h));
            }
            x += vx;
            y += vy;
        }
        paths.push(path);
    }
    let mut crossing_free = true;
    for i in 0..n_obj {
        for j in 0..n_obj {
            if i == j {
                continue;
            }
            for (fi, bi) in &paths[i] {
                for (fj, bj) in &paths[j] {
                    if fi.abs_diff(*fj) <= age_out + 1 && iou(bi, bj) >= iou_gate {
                        crossing_free = false;
                    }
                }
            }
        }
    }
    let frames = (0..n_frames)
        .map(|f| FrameDetections {
            frame: f,
            t: f as f64 / 10.0,
            detections: paths
                .iter()
                .filter_map(|p| p.get(&f))
                .map(|b| Detection {
                    bbox: *b,
                    score: 0.9,
                    embedding: None,
                })
                .collect(),
        })
        .collect();
    Scene { frames, crossing_free }
}

// ----- redaction ----------------------------------------------------------------

/// Pixel-by-pixel mosaic of `rect` (exclusive max): each cell anchored at the
/// rect origin takes the rounded channel means of its clipped block.
pub fn brute_mosaic(img: &RgbImage, rect: (u32, u32, u32, u32), cell: u32) -> RgbImage {
    let mut out = img.clone();
    let (x0, y0, x1, y1) = rect;
    for y in y0..y1 {
        for x in x0..x1 {
            let cx = x0 + (x - x0) / cell * cell;
            let cy = y0 + (y - y0) / cell * cell;
            let mut sum = [0u64; 3];
            let mut n = 0u64;
            for yy in cy..(cy + cell).min(y1) {
                for xx in cx..(cx + cell).min(x1) {
                    let p = img.get_pixel(xx, yy).0;
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                    n += 1;
                }
            }
            // round half up on exact integers
            let m = sum.map(|s| ((2 * s + n) / (2 * n)) as u8);
            out.put_pixel(x, y, image::Rgb(m));
        }
    }
    out
}

pub fn noise_image(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
}

// ----- metrics ------------------------------------------------------------------

/// Dwell in whole milliseconds by marking every credited playback
/// millisecond on a bitmap of the flagged timeline.
pub fn oracle_dwell_ms(log: &[ReviewLogEntry], flagged: &[(i64, i64)], duration_ms: i64) -> i64 {
    let mut is_flagged = vec![false; duration_ms as usize + 1];
    for &(a, b) in flagged {
        for m in a..b {
            is_flagged[m as usize] = true;
        }
    }
    let mut streams: BTreeMap<(&str, &str), Vec<&ReviewLogEntry>> = BTreeMap::new();
    for e in log {
        streams.entry((&e.session_id, &e.reviewer_id)).or_default().push(e);
    }
    let mut total = 0;
    for s in streams.values() {
        for w in s.windows(2) {
            if w[0].event != LogEvent::Play || w[0].qa {
                continue;
            }
            let wall = (w[1].t_wall - w[0].t_wall).num_milliseconds();
            let start = (w[0].position * 1000.0).round() as i64;
            let advance = ((w[1].position - w[0].position) * 1000.0).round() as i64;
            let credited = if wall > 30_000 { wall.min(advance.max(0)) } else { wall };
            for m in start..(start + credited).min(duration_ms) {
                if is_flagged[m as usize] {
                    total += 1;
                }
            }
        }
    }
    total
}

/// Percentile bootstrap of the mean written out longhand: same RNG stream
/// contract (ChaCha8 seeded with `seed`, `n` draws of `random_range(0..n)`
/// per resample), type-7 quantiles.
pub fn oracle_bootstrap(samples: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64, f64) {
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += samples[rng.random_range(0..n)];
        }
        means.push(s / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = (resamples - 1) as f64 * p;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        means[lo] + (h - lo as f64) * (means[hi] - means[lo])
    };
    let alpha = 1.0 - level;
    (samples.iter().sum::<f64>() / n as f64, q(alpha / 2.0), q(1.0 - alpha / 2.0))
}

// ----- sessions -------------------------------------------------------------------

/// Short synthetic session written under `dir`; returns the loaded config.
pub fn synth(dir: &Path, params: &SynthParams) -> PipelineConfig {
    let truth = generate(dir, params).expect("synth session");
    PipelineConfig::load(&truth.config_path).expect("config loads")
}

pub fn small_params() -> SynthParams {
    SynthParams {
        duration_s: 100.0,
        idle_s: 20.0,
        ..Default::default()
    }
}

/// Automatic stages, headless review, export and report.
pub fn full_run(cfg: &PipelineConfig) {
    run_pipeline(cfg, &Stage::AUTOMATIC).expect("automatic stages");
    auto_review(cfg).expect("auto review");
    run_pipeline(cfg, &[Stage::Export, Stage::Report]).expect("export and report");
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p: PathBuf = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
