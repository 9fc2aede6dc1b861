// SPDX-License-Identifier: Apache-2.0

//! Clap / impulse anchors: band-pass, short-time energy, peak picking.
//!
//! The band-pass is a 4th-order Butterworth built from the 2nd-order analog
//! low-pass prototype by the low-pass → band-pass substitution
//! `s → (s² + Ω0²) / (B s)`, mapped to z with the bilinear transform using
//! prewarped band edges. The four poles split into two conjugate pairs, one
//! biquad each; each biquad has one zero at z = 1 and one at z = -1 and is
//! normalized to unit gain at the digital center frequency. The resulting
//! magnitude response is
//!
//! ```text
//! |H(f)|² = 1 / (1 + ((Ω² - Ω0²) / (B Ω))⁴),  Ω = 2 fs tan(π f / fs)
//! ```
//!
//! with `Ω0² = Ω1 Ω2` and `B = Ω2 - Ω1` for the prewarped edges.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DetectorError;

/// Upper band edge is limited to this fraction of the sample rate so the
/// design stays below Nyquist at low rates.
pub const MAX_EDGE_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClapParams {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub min_gap_s: f64,
    pub k_sigma: f64,
    pub hop_s: f64,
}

impl Default for ClapParams {
    fn default() -> Self {
        Self {
            band_low_hz: 2000.0,
            band_high_hz: 6000.0,
            min_gap_s: 0.3,
            k_sigma: 4.0,
            hop_s: 0.010,
        }
    }
}

/// Direct-form biquad `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Transposed direct form II.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + s1;
                s1 = self.b1 * x - self.a1 * y + s2;
                s2 = self.b2 * x - self.a2 * y;
                y
            })
            .collect()
    }
}

/// Effective band edges after clamping to the sample rate.
pub fn effective_band(low_hz: f64, high_hz: f64, sample_rate: f64) -> (f64, f64) {
    (low_hz, high_hz.min(MAX_EDGE_FRACTION * sample_rate))
}

/// Designs the two biquad sections of the band-pass.
pub fn design_bandpass(low_hz: f64, high_hz: f64, sample_rate: f64) -> [Biquad; 2] {
    let (low_hz, high_hz) = effective_band(low_hz, high_hz, sample_rate);
    let fs2 = 2.0 * sample_rate;
    let w1 = fs2 * (PI * low_hz / sample_rate).tan();
    let w2 = fs2 * (PI * high_hz / sample_rate).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // Upper-half-plane prototype pole of the 2nd-order Butterworth low-pass.
    let p = Complex64::from_polar(1.0, 3.0 * PI / 4.0);
    let disc = (p * p * bw * bw - 4.0 * w0 * w0).sqrt();
    let analog = [(p * bw + disc) / 2.0, (p * bw - disc) / 2.0];

    // Digital center frequency matching Ω0.
    let f0 = sample_rate / PI * (w0 / fs2).atan();

    analog.map(|s| {
        let z = (1.0 + s / fs2) / (1.0 - s / fs2);
        let mut bq = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * z.re,
            a2: z.norm_sqr(),
        };
        let g = 1.0 / bq.response(f0, sample_rate).norm();
        bq.b0 *= g;
        bq.b2 *= g;
        bq
    })
}

/// Short-time mean energy over non-overlapping frames of `hop` samples.
pub fn energy_envelope(signal: &[f64], hop: usize) -> Vec<f64> {
    signal
        .chunks(hop.max(1))
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClapAnchor {
    /// Seconds from the start of the analysed signal (envelope frame center).
    pub t: f64,
    pub strength: f64,
    pub confidence: f64,
}

/// Detects impulsive onsets. Peaks must exceed `mean + k_sigma * std` of the
/// envelope and be local maxima; of two peaks closer than `min_gap_s` the
/// weaker is dropped.
pub fn detect_claps(
    pcm: &[f64],
    sample_rate: u32,
    params: &ClapParams,
) -> Result<Vec<ClapAnchor>, DetectorError> {
    if sample_rate < 8000 {
        return Err(DetectorError::SampleRateTooLow(sample_rate));
    }
    if pcm.is_empty() {
        return Ok(Vec::new());
    }
    let fs = sample_rate as f64;
    let sections = design_bandpass(params.band_low_hz, params.band_high_hz, fs);
    let filtered = sections.iter().fold(pcm.to_vec(), |acc, bq| bq.filter(&acc));
    let hop = ((params.hop_s * fs).round() as usize).max(1);
    let env = energy_envelope(&filtered, hop);

    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let var = env.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let peak_max = env.iter().cloned().fold(0.0, f64::max);
    if std <= 0.0 || peak_max <= f64::MIN_POSITIVE {
        return Ok(Vec::new());
    }
    let threshold = mean + params.k_sigma * std;

    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in 0..env.len() {
        let e = env[i];
        let left_ok = i == 0 || e > env[i - 1];
        let right_ok = i + 1 == env.len() || e >= env[i + 1];
        if e > threshold && left_ok && right_ok {
            peaks.push((i, e));
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let hop_s = hop as f64 / fs;
    let time_of = |i: usize| (i as f64 + 0.5) * hop_s;
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (i, e) in peaks {
        if kept
            .iter()
            .all(|&(j, _)| (time_of(i) - time_of(j)).abs() >= params.min_gap_s)
        {
            kept.push((i, e));
        }
    }
    kept.sort_by_key(|&(i, _)| i);
    Ok(kept
        .into_iter()
        .map(|(i, e)| {
            let z = (e - mean) / std;
            ClapAnchor {
                t: time_of(i),
                strength: e,
                confidence: 1.0 - (-z / params.k_sigma).exp(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn analog_magnitude(f: f64, low: f64, high: f64, fs: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2, w) = (warp(low), warp(high), warp(f));
        let w0sq = w1 * w2;
        let x = (w * w - w0sq) / ((w2 - w1) * w);
        1.0 / (1.0 + x.powi(4)).sqrt()
    }

    #[test]
    fn bandpass_matches_analog_prototype() {
        for fs in [16_000.0, 44_100.0, 48_000.0] {
            let sections = design_bandpass(2000.0, 6000.0, fs);
            for f in [100.0, 1000.0, 2000.0, 3000.0, 3464.0, 5000.0, 6000.0, 7000.0, 7900.0] {
                let h: f64 = sections.iter().map(|s| s.response(f, fs).norm()).product();
                let expect = analog_magnitude(f, 2000.0, 6000.0, fs);
                assert!((h - expect).abs() < 1e-9, "fs {fs} f {f}: {h} vs {expect}");
            }
            // -3 dB at the band edges
            let edge: f64 = sections.iter().map(|s| s.response(2000.0, fs).norm()).product();
            assert!((edge - 0.5f64.sqrt()).abs() < 1e-9);
        }
    }

    fn burst(signal: &mut [f64], fs: f64, t: f64, amp: f64, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let start = (t * fs) as usize;
        let len = (0.005 * fs) as usize;
        for s in &mut signal[start..start + len] {
            *s += amp * rng.random_range(-1.0..1.0);
        }
    }

    #[test]
    fn silence_yields_nothing() {
        assert!(detect_claps(&vec![0.0; 48_000], 16_000, &ClapParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_impulse_located() {
        let fs = 16_000.0;
        let mut s = vec![0.0; 4 * 16_000];
        burst(&mut s, fs, 2.0, 0.8, 1);
        let a = detect_claps(&s, 16_000, &ClapParams::default()).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0].t - 2.0).abs() <= 0.020, "{}", a[0].t);
    }

    #[test]
    fn min_gap_suppression() {
        let fs = 16_000.0;
        let mut s = vec![0.0; 5 * 16_000];
        burst(&mut s, fs, 2.0, 0.8, 1);
        burst(&mut s, fs, 2.5, 0.6, 2);
        assert_eq!(detect_claps(&s, 16_000, &ClapParams::default()).unwrap().len(), 2);

        let mut s = vec![0.0; 5 * 16_000];
        burst(&mut s, fs, 2.0, 0.8, 1);
        burst(&mut s, fs, 2.2, 0.6, 2);
        let a = detect_claps(&s, 16_000, &ClapParams::default()).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0].t - 2.0).abs() <= 0.020);
    }

    #[test]
    fn low_rate_rejected() {
        assert_eq!(
            detect_claps(&[0.0; 10], 4000, &ClapParams::default()),
            Err(DetectorError::SampleRateTooLow(4000))
        );
        // 8 kHz works with a clamped upper edge.
        assert!(detect_claps(&[0.0; 8000], 8000, &ClapParams::default()).is_ok());
    }

    #[test]
    fn gain_invariance() {
        let fs = 16_000.0;
        let mut s = vec![0.0; 4 * 16_000];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for x in s.iter_mut() {
            *x = 0.001 * rng.random_range(-1.0..1.0);
        }
        burst(&mut s, fs, 1.3, 0.5, 3);
        burst(&mut s, fs, 3.1, 0.4, 4);
        let base: Vec<f64> = detect_claps(&s, 16_000, &ClapParams::default())
            .unwrap()
            .iter()
            .map(|a| a.t)
            .collect();
        for g in [0.1, 0.5, 2.0] {
            let scaled: Vec<f64> = s.iter().map(|x| x * g).collect();
            let t: Vec<f64> = detect_claps(&scaled, 16_000, &ClapParams::default())
                .unwrap()
                .iter()
                .map(|a| a.t)
                .collect();
            assert_eq!(t, base, "gain {g}");
        }
    }
}
