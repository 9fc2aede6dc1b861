// SPDX-License-Identifier: Apache-2.0

use gaze_core::detectors::audio::{design_bandpass, detect_claps, effective_band, ClapParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 16_000;

fn scene(secs: f64, claps: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pcm: Vec<f64> = (0..(secs * SR as f64) as usize).map(|_| rng.random_range(-0.002..0.002)).collect();
    for &t in claps {
        let k0 = (t * SR as f64).round() as usize;
        for k in 0..(0.02 * SR as f64) as usize {
            let decay = (-(k as f64) / (0.004 * SR as f64)).exp();
            pcm[k0 + k] += 0.8 * decay * rng.random_range(-1.0..1.0);
        }
    }
    pcm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn separated_claps_are_each_found(gaps in prop::collection::vec(0.5f64..1.5, 1..4), seed in any::<u64>()) {
        let mut t = 0.7;
        let mut times = Vec::new();
        for g in gaps {
            times.push(t);
            t += g;
        }
        let pcm = scene(t + 0.5, &times, seed);
        let got = detect_claps(&pcm, SR, &ClapParams::default()).unwrap();
        prop_assert_eq!(got.len(), times.len(), "{:?}", got.iter().map(|a| a.t).collect::<Vec<_>>());
        for (a, want) in got.iter().zip(&times) {
            prop_assert!((a.t - want).abs() <= 0.020, "anchor {} vs {}", a.t, want);
            prop_assert!((0.0..1.0).contains(&a.confidence));
        }
    }

    #[test]
    fn anchors_respect_min_gap(gap in 0.05f64..0.29, seed in any::<u64>()) {
        let pcm = scene(3.0, &[1.0, 1.0 + gap], seed);
        let got = detect_claps(&pcm, SR, &ClapParams::default()).unwrap();
        prop_assert_eq!(got.len(), 1);
    }

    #[test]
    fn low_hiss_alone_gives_few_anchors(seed in any::<u64>()) {
        let got = detect_claps(&scene(4.0, &[], seed), SR, &ClapParams::default()).unwrap();
        for w in got.windows(2) {
            prop_assert!(w[1].t - w[0].t >= 0.3);
        }
    }
}

#[test]
fn silence_gives_nothing() {
    assert!(detect_claps(&vec![0.0; SR as usize * 3], SR, &ClapParams::default()).unwrap().is_empty());
    assert!(detect_claps(&[], SR, &ClapParams::default()).unwrap().is_empty());
}

#[test]
fn low_sample_rates_are_rejected() {
    assert!(detect_claps(&[0.0; 100], 4000, &ClapParams::default()).is_err());
}

#[test]
fn bandpass_passes_its_center_and_stops_dc() {
    let fs = SR as f64;
    let (lo, hi) = effective_band(2000.0, 6000.0, fs);
    let sections = design_bandpass(lo, hi, fs);
    let gain = |f: f64| sections.iter().map(|s| s.response(f, fs).norm()).product::<f64>();
    let center = (lo * hi).sqrt();
    assert!(gain(center) > 0.7, "center gain {}", gain(center));
    assert!(gain(1.0) < 1e-3);
    assert!(gain(fs / 2.0 - 1.0) < 0.1);
}
