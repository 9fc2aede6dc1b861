// SPDX-License-Identifier: Apache-2.0

//! Synthetic capture session: dual-fisheye frames rendered from a simple
//! ERP scene, a PCM track and a scripted detector fixture, plus a ready
//! config file. The first `idle_s` seconds are static and silent.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::Result;
use chrono::{DateTime, TimeZone, Utc};
use gaze_core::detectors::pii::{TranscriptSegment, TranscriptSource, Word};
use gaze_core::detectors::scripted::{FaceObservation, PersonFrame, ScriptedFixture, SpanLabel, SupportFrame};
use gaze_core::detectors::tracker::Detection;
use gaze_core::detectors::BBox;
use gaze_core::ingest::SessionJournal;
use gaze_core::io::write_json;
use gaze_core::media::{write_frames_index, write_ppm, write_wav, FrameIndexEntry, PcmAudio};
use gaze_core::projection::{erp_pixel_to_direction, render_dual_fisheye, FisheyeLayout, TimedFrame, View, ViewSpec};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DetectConfig, InputConfig, ProjectionConfig, Seeds};
use crate::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub session_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub idle_s: f64,
    pub erp_width: u32,
    pub erp_height: u32,
    pub lens_px: u32,
    pub lens_fov_deg: f64,
    pub view_px: u32,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            session_id: "synth_0001".into(),
            duration_s: 180.0,
            fps: 2.0,
            idle_s: 60.0,
            erp_width: 256,
            erp_height: 128,
            lens_px: 128,
            lens_fov_deg: 190.0,
            view_px: 96,
            sample_rate: 16_000,
            seed: 11,
        }
    }
}

/// Where the planted events are, in session seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub config_path: PathBuf,
    pub idle_s: f64,
    pub clap_t: f64,
    pub minor_span: (f64, f64),
    pub nsfw_span: (f64, f64),
    pub phone_t: f64,
    pub lighting_change_t: f64,
}

const RECT_HALF_LON_DEG: f64 = 10.0;
const RECT_HALF_LAT_DEG: f64 = 15.0;
const SWEEP_PERIOD_S: f64 = 40.0;
const SWEEP_AMPLITUDE_DEG: f64 = 60.0;

pub fn recorded_at() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap()
}

/// Longitude of the moving subject at `t`, or `None` while idle.
fn subject_lon_deg(p: &SynthParams, t: f64) -> Option<f64> {
    if t < p.idle_s {
        return None;
    }
    let phase = ((t - p.idle_s) / SWEEP_PERIOD_S).fract();
    let tri = if phase < 0.5 { 4.0 * phase - 1.0 } else { 3.0 - 4.0 * phase };
    Some(SWEEP_AMPLITUDE_DEG * tri)
}

fn render_erp(p: &SynthParams, t: f64) -> RgbImage {
    let lit = t >= p.idle_s + 60.0;
    let subject = subject_lon_deg(p, t);
    RgbImage::from_fn(p.erp_width, p.erp_height, |u, v| {
        let (lon, lat) = erp_pixel_to_direction(u, v, p.erp_width, p.erp_height).expect("in range");
        let (lon_d, lat_d) = (lon * 180.0 / PI, lat * 180.0 / PI);
        if let Some(c) = subject {
            if (lon_d - c).abs() < RECT_HALF_LON_DEG && lat_d.abs() < RECT_HALF_LAT_DEG {
                return Rgb([210, 70, 40]);
            }
        }
        let checker = ((u / 16 + v / 16) % 2) as u8 * 30;
        let base = if lit { 110 } else { 70 } + checker;
        Rgb([base, base, base.saturating_add(10)])
    })
}

/// Subject box in a 90° front view, when fully visible.
fn front_box(p: &SynthParams, t: f64) -> Option<BBox> {
    let c = subject_lon_deg(p, t)?;
    if (c.abs() + RECT_HALF_LON_DEG) >= 45.0 {
        return None;
    }
    let half = p.view_px as f64 / 2.0;
    let f = half;
    let x0 = half + f * (c - RECT_HALF_LON_DEG).to_radians().tan();
    let x1 = half + f * (c + RECT_HALF_LON_DEG).to_radians().tan();
    let hh = f * RECT_HALF_LAT_DEG.to_radians().tan() / c.to_radians().cos();
    Some(BBox::new(x0, half - hh, x1 - x0, 2.0 * hh))
}

fn span(view: View, t0: f64, t1: f64, label: &str, confidence: f64, frames: Vec<SupportFrame>) -> SpanLabel {
    SpanLabel {
        view,
        t_start: t0,
        t_end: t1,
        label: label.into(),
        confidence,
        frames,
    }
}

fn fixture(p: &SynthParams, truth: &SynthTruth) -> ScriptedFixture {
    let i = p.idle_s;
    let d = p.duration_s;
    let n = (d * p.fps).round() as u64;
    let persons: Vec<PersonFrame> = (0..n)
        .filter_map(|k| {
            let t = k as f64 / p.fps;
            front_box(p, t).map(|b| PersonFrame {
                view: View::Front,
                frame: k,
                t,
                detections: vec![Detection {
                    bbox: b,
                    score: 0.9,
                    embedding: None,
                }],
            })
        })
        .collect();
    let (m0, m1) = truth.minor_span;
    let faces: Vec<FaceObservation> = (0..((m1 - m0) * 2.0) as usize)
        .map(|k| {
            let t = m0 + k as f64 * 0.5;
            let b = front_box(p, t).unwrap_or(BBox::new(40.0, 30.0, 16.0, 36.0));
            FaceObservation {
                face_id: "f1".into(),
                view: View::Front,
                t,
                bbox: BBox::new(b.x + b.w * 0.25, b.y, b.w * 0.5, b.h * 0.3),
                age: 12.0 + (k % 3) as f64,
                confidence: 0.9,
            }
        })
        .collect();
    let words = ["please", "call", "me", "at", "555-0142"];
    let transcript = vec![TranscriptSegment {
        speaker: "SPEAKER_00".into(),
        words: words
            .iter()
            .enumerate()
            .map(|(k, w)| Word {
                text: (*w).into(),
                t_start: truth.phone_t + k as f64 * 0.4,
                t_end: truth.phone_t + k as f64 * 0.4 + 0.3,
            })
            .collect(),
        source: TranscriptSource::default(),
    }];
    ScriptedFixture {
        model_version: "synth-fixture-1".into(),
        captions: vec![span(
            View::Front,
            i,
            d,
            "a person moving around a room",
            0.8,
            vec![
                SupportFrame { t: i + 5.0, score: 0.9 },
                SupportFrame { t: i + 30.0, score: 0.8 },
            ],
        )],
        activity_tags: vec![span(View::Front, i, i + 60.0, "walking", 0.7, vec![])],
        nsfw: vec![span(View::Front, truth.nsfw_span.0, truth.nsfw_span.1, "nsfw", 0.95, vec![])],
        faces,
        persons,
        transcript,
    }
}

fn audio(p: &SynthParams, clap_t: f64) -> PcmAudio {
    let n = (p.duration_s * p.sample_rate as f64).round() as usize;
    let idle_n = (p.idle_s * p.sample_rate as f64).round() as usize;
    let clap_n = (clap_t * p.sample_rate as f64).round() as usize;
    let burst = (0.02 * p.sample_rate as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xa0d1);
    let samples: Vec<f64> = (0..n)
        .map(|k| {
            if k < idle_n {
                return 0.0;
            }
            let mut x = rng.random_range(-0.02..0.02);
            if k >= clap_n && k < clap_n + burst {
                let decay = (-((k - clap_n) as f64) / (0.004 * p.sample_rate as f64)).exp();
                x += 0.8 * decay * rng.random_range(-1.0..1.0);
            }
            x
        })
        .collect();
    PcmAudio::from_normalized(p.sample_rate, &samples)
}

/// Writes the session under `dir` and returns where the events were planted.
pub fn generate(dir: &Path, p: &SynthParams) -> Result<SynthTruth> {
    let input = dir.join("input");
    let fisheye = input.join("fisheye");
    std::fs::create_dir_all(&fisheye)?;
    let i = p.idle_s;
    let truth = SynthTruth {
        config_path: dir.join("config.json"),
        idle_s: i,
        clap_t: i + 2.0,
        minor_span: (i + 20.0, i + 30.0),
        nsfw_span: (i + 70.0, i + 75.0),
        phone_t: i + 40.0,
        lighting_change_t: i + 60.0,
    };

    let layout = FisheyeLayout::side_by_side(p.lens_px, p.lens_fov_deg);
    write_json(&input.join("fisheye_layout.json"), &layout)?;
    let n = (p.duration_s * p.fps).round() as u32;
    let mut index = Vec::with_capacity(n as usize);
    for k in 0..n {
        let t = k as f64 / p.fps;
        let erp = TimedFrame {
            image: render_erp(p, t),
            t_seconds: t,
        };
        let fe = render_dual_fisheye(&erp, &layout, 2 * p.lens_px, p.lens_px)?;
        write_ppm(&fisheye.join(gaze_core::media::frame_file_name(k)), &fe.image)?;
        index.push(FrameIndexEntry { index: k, t_seconds: t });
    }
    write_frames_index(&fisheye, &index)?;
    write_wav(&input.join("audio.wav"), &audio(p, truth.clap_t))?;
    write_json(&input.join("scripted.json"), &fixture(p, &truth))?;
    let journal = SessionJournal {
        session_id: p.session_id.clone(),
        free_text_notes: "synthetic session".into(),
        device_id: "synth-cam".into(),
        frame_rate: p.fps,
        lens_model: Some("equidistant-dual".into()),
        local_clock_offset: 0.0,
        consent_ack: true,
        device_logs: None,
    };
    write_json(&input.join("session.json"), &journal)?;

    let cfg = PipelineConfig {
        session_id: p.session_id.clone(),
        store_root: "store".into(),
        session_dir: "work".into(),
        input: InputConfig {
            journal: "input/session.json".into(),
            fisheye_dir: "input/fisheye".into(),
            layout: "input/fisheye_layout.json".into(),
            audio: Some("input/audio.wav".into()),
            recorded_at: Some(recorded_at()),
        },
        projection: ProjectionConfig {
            erp_width: p.erp_width,
            erp_height: p.erp_height,
            views: ViewSpec::default_four(p.view_px, p.view_px),
        },
        segmenter: Default::default(),
        detect: DetectConfig {
            scripted_fixture: Some("input/scripted.json".into()),
            ..Default::default()
        },
        fusion: Default::default(),
        export: Default::default(),
        seeds: Seeds::default(),
        qa_fraction: gaze_core::review::qa::DEFAULT_QA_FRACTION,
        workers: 1,
        domain: "synthetic".into(),
    };
    write_json(&truth.config_path, &cfg)?;
    Ok(truth)
}
