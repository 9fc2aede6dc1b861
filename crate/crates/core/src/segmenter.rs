// SPDX-License-Identifier: Apache-2.0

//! Overlapping clip windows and per-clip descriptors (black-frame ratio,
//! frame-difference motion energy, RMS loudness).

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::luma_plane;
use crate::projection::View;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("bad segmenter config: {0}")]
    BadConfig(String),
    #[error("duration must be > 0, got {0}")]
    BadDuration(f64),
    #[error("window has no frames or samples")]
    EmptyWindow,
    #[error("motion energy needs at least two frames")]
    TooFewFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub clip_len: f64,
    pub overlap: f64,
    pub black_luma_threshold: u8,
    pub black_pixel_fraction: f64,
    pub silence_floor_dbfs: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            clip_len: 60.0,
            overlap: 2.5,
            black_luma_threshold: 16,
            black_pixel_fraction: 0.98,
            silence_floor_dbfs: -90.0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.clip_len > 0.0) {
            return Err(SegmentError::BadConfig("clip_len must be > 0".into()));
        }
        if !(self.overlap > 0.0 && self.overlap < self.clip_len) {
            return Err(SegmentError::BadConfig(format!(
                "overlap {} must lie in (0, clip_len)",
                self.overlap
            )));
        }
        if !(0.0..=1.0).contains(&self.black_pixel_fraction) {
            return Err(SegmentError::BadConfig("black_pixel_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lens {
    Rectilinear,
    Fisheye,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptors {
    pub black_ratio: f64,
    pub motion_energy: f64,
    pub loudness: f64,
}

/// One row of the clip ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub view: View,
    pub t_start: f64,
    pub t_end: f64,
    pub fps: f64,
    pub resolution: String,
    pub lens: Lens,
    pub descriptors: Descriptors,
}

impl ClipRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

pub fn clip_id(session_id: &str, view: View, index: usize) -> String {
    format!("{session_id}_{view}_{index:06}")
}

/// Window bounds for a stream of length `duration`. Starts fall on multiples
/// of `clip_len - overlap`; the last window ends exactly at `duration`.
pub fn plan_windows(duration: f64, config: &SegmenterConfig) -> Result<Vec<(f64, f64)>, SegmentError> {
    config.validate()?;
    if !(duration > 0.0) {
        return Err(SegmentError::BadDuration(duration));
    }
    let stride = config.clip_len - config.overlap;
    let mut windows: Vec<(f64, f64)> = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * stride;
        let end = start + config.clip_len;
        if end >= duration {
            windows.push((start, duration));
            break;
        }
        windows.push((start, end));
        k += 1;
    }
    // A trailing window shorter than the overlap would be covered by its
    // predecessor already; fold it in. With the stride above the final
    // window is always longer than the overlap, so this is a guard only.
    if windows.len() > 1 {
        let (s, e) = windows[windows.len() - 1];
        if e - s < config.overlap {
            windows.pop();
            if let Some(last) = windows.last_mut() {
                last.1 = duration;
            }
        }
    }
    Ok(windows)
}

/// Fraction of frames in which at least `black_pixel_fraction` of pixels have
/// luma below `black_luma_threshold`.
pub fn compute_black_ratio(frames: &[&RgbImage], config: &SegmenterConfig) -> Result<f64, SegmentError> {
    if frames.is_empty() {
        return Err(SegmentError::EmptyWindow);
    }
    let black = frames
        .iter()
        .filter(|img| is_black_frame(img, config))
        .count();
    Ok(black as f64 / frames.len() as f64)
}

pub fn is_black_frame(img: &RgbImage, config: &SegmenterConfig) -> bool {
    let n = (img.width() as usize * img.height() as usize).max(1);
    let dark = img
        .pixels()
        .filter(|p| crate::media::luma(p) < config.black_luma_threshold)
        .count();
    dark as f64 / n as f64 >= config.black_pixel_fraction
}

/// Mean over consecutive frame pairs of the mean absolute luma difference,
/// scaled to [0, 1].
pub fn compute_motion_energy(frames: &[&RgbImage]) -> Result<f64, SegmentError> {
    if frames.len() < 2 {
        return Err(SegmentError::TooFewFrames);
    }
    let lumas: Vec<Vec<u8>> = frames.iter().map(|f| luma_plane(f)).collect();
    let total: f64 = lumas.windows(2).map(|w| pair_motion(&w[0], &w[1])).sum();
    Ok(total / (lumas.len() - 1) as f64)
}

/// Mean absolute luma difference of two planes, in [0, 1].
pub fn pair_motion(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let sum: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64)
        .sum();
    sum as f64 / n as f64 / 255.0
}

/// `20 log10(RMS)` of normalized samples, floored at `silence_floor_dbfs`.
pub fn compute_loudness(samples: &[f64], silence_floor_dbfs: f64) -> Result<f64, SegmentError> {
    if samples.is_empty() {
        return Err(SegmentError::EmptyWindow);
    }
    let ms = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    let rms = ms.sqrt();
    let db = if rms > 0.0 { 20.0 * rms.log10() } else { f64::NEG_INFINITY };
    Ok(db.max(silence_floor_dbfs))
}
