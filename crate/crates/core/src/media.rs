// SPDX-License-Identifier: Apache-2.0

//! Decoded media bundle I/O: PPM (P6) frame sequences with a `frames.json`
//! timing index, and 16-bit mono PCM WAV audio.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{atomic_write, read_json, write_json};

pub const FRAMES_INDEX: &str = "frames.json";

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("bad audio {path}: {reason}")]
    Audio { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MediaError + '_ {
    move |source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of `frames.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameIndexEntry {
    pub index: u32,
    pub t_seconds: f64,
}

pub fn frame_file_name(index: u32) -> String {
    format!("frame_{index:06}.ppm")
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
        .expect("in-memory PPM encoding cannot fail");
    buf
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, String> {
    image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map(|img| img.to_rgb8())
        .map_err(|e| e.to_string())
}

/// A frame directory on disk: `frame_%06d.ppm` files plus `frames.json`.
#[derive(Debug, Clone)]
pub struct FrameDir {
    pub root: PathBuf,
    pub index: Vec<FrameIndexEntry>,
}

impl FrameDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, MediaError> {
        let root = root.into();
        let path = root.join(FRAMES_INDEX);
        let index: Vec<FrameIndexEntry> = read_json(&path).map_err(io_err(&path))?;
        Ok(Self { root, index })
    }

    pub fn frame_path(&self, index: u32) -> PathBuf {
        self.root.join(frame_file_name(index))
    }

    pub fn load(&self, index: u32) -> Result<RgbImage, MediaError> {
        read_ppm(&self.frame_path(index))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Frames whose timestamp falls in `[t_start, t_end)`.
    pub fn entries_in(&self, t_start: f64, t_end: f64) -> Vec<FrameIndexEntry> {
        self.index
            .iter()
            .copied()
            .filter(|e| e.t_seconds >= t_start && e.t_seconds < t_end)
            .collect()
    }

    /// Estimated frame rate from the timing index; 0 when fewer than two frames.
    pub fn fps(&self) -> f64 {
        if self.index.len() < 2 {
            return 0.0;
        }
        let first = self.index[0].t_seconds;
        let last = self.index[self.index.len() - 1].t_seconds;
        if last <= first {
            return 0.0;
        }
        (self.index.len() - 1) as f64 / (last - first)
    }

    /// Stream duration: last timestamp plus one frame period.
    pub fn duration(&self) -> f64 {
        match self.index.last() {
            None => 0.0,
            Some(last) => {
                let fps = self.fps();
                last.t_seconds + if fps > 0.0 { 1.0 / fps } else { 0.0 }
            }
        }
    }
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, MediaError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|reason| MediaError::Image {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<(), MediaError> {
    atomic_write(path, &encode_ppm(image)).map_err(io_err(path))
}

pub fn write_frames_index(dir: &Path, index: &[FrameIndexEntry]) -> Result<(), MediaError> {
    let path = dir.join(FRAMES_INDEX);
    write_json(&path, index).map_err(io_err(&path))
}

/// Mono 16-bit PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl PcmAudio {
    pub fn new(sample_rate: u32, samples: Vec<i16>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    /// Builds from normalized samples in [-1, 1].
    pub fn from_normalized(sample_rate: u32, samples: &[f64]) -> Self {
        let samples = samples.iter().map(|&x| normalized_to_i16(x)).collect();
        Self::new(sample_rate, samples)
    }

    pub fn duration(&self) -> f64 {
        if self.sample_rate == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.sample_rate as f64
        }
    }

    pub fn to_normalized(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / 32768.0).collect()
    }

    /// Sample index for time `t`, rounded to nearest and clamped to the stream.
    pub fn index_at(&self, t: f64) -> usize {
        ((t * self.sample_rate as f64).round().max(0.0) as usize).min(self.samples.len())
    }
}

pub fn normalized_to_i16(x: f64) -> i16 {
    (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn read_wav(path: &Path) -> Result<PcmAudio, MediaError> {
    let bad = |reason: String| MediaError::Audio {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(bad("expected 16-bit integer PCM".into()));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    // Downmix to mono by averaging channels.
    let samples = if channels == 1 {
        raw
    } else {
        raw.chunks(channels)
            .map(|c| (c.iter().map(|&s| s as i32).sum::<i32>() / channels as i32) as i16)
            .collect()
    };
    Ok(PcmAudio::new(spec.sample_rate, samples))
}

pub fn encode_wav(audio: &PcmAudio) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV header");
        let mut w16 = writer.get_i16_writer(audio.samples.len() as u32);
        for &s in &audio.samples {
            w16.write_sample(s);
        }
        w16.flush().expect("in-memory WAV write");
        writer.finalize().expect("in-memory WAV finalize");
    }
    cursor.into_inner()
}

pub fn write_wav(path: &Path, audio: &PcmAudio) -> Result<(), MediaError> {
    atomic_write(path, &encode_wav(audio)).map_err(io_err(path))
}

/// Integer luma: `round(0.299 R + 0.587 G + 0.114 B)`.
#[inline]
pub fn luma(p: &image::Rgb<u8>) -> u8 {
    let [r, g, b] = p.0;
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

pub fn luma_plane(image: &RgbImage) -> Vec<u8> {
    image.pixels().map(luma).collect()
}
