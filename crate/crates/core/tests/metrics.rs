// SPDX-License-Identifier: Apache-2.0

use chrono::{TimeZone, Utc};
use gaze_core::intervals::Span;
use gaze_core::metrics::simulate::simulate_session;
use gaze_core::metrics::{
    bootstrap_mean_ci, compute_dwell, fp_burden, quantile_sorted, rtr, savings_model, LogEvent, ReviewLogEntry,
    ReviewedItem, DEFAULT_FEATURES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entry(reviewer: &str, event: LogEvent, wall_ms: i64, position: f64, qa: bool) -> ReviewLogEntry {
    ReviewLogEntry {
        session_id: "s".into(),
        reviewer_id: reviewer.into(),
        timeline_id: None,
        event,
        t_wall: Utc.timestamp_millis_opt(wall_ms).unwrap(),
        position,
        qa,
    }
}

/// Millisecond bitmap dwell: credited playback per play interval, counted
/// against a flagged mask.
fn bitmap_dwell_ms(log: &[ReviewLogEntry], flagged: &[(i64, i64)], duration_ms: i64) -> i64 {
    let mut mask = vec![false; duration_ms as usize];
    for &(a, b) in flagged {
        for m in a..b {
            mask[m as usize] = true;
        }
    }
    let mut total = 0;
    for r in ["r1", "r2"] {
        let s: Vec<&ReviewLogEntry> = log.iter().filter(|e| e.reviewer_id == r).collect();
        for w in s.windows(2) {
            if w[0].event != LogEvent::Play || w[0].qa {
                continue;
            }
            let wall = (w[1].t_wall - w[0].t_wall).num_milliseconds();
            let start = (w[0].position * 1000.0).round() as i64;
            let advance = ((w[1].position - w[0].position) * 1000.0).round() as i64;
            let credited = if wall > 30_000 { wall.min(advance.max(0)) } else { wall };
            total += (start..(start + credited).min(duration_ms)).filter(|&m| mask[m as usize]).count() as i64;
        }
    }
    total
}

fn log_strategy() -> impl Strategy<Value = Vec<ReviewLogEntry>> {
    prop::collection::vec((0usize..2, 0usize..5, 0i64..60, 0i64..600, any::<bool>(), 0u8..10), 1..40).prop_map(
        |steps| {
            let mut wall = [0i64; 2];
            let mut pos = [0i64; 2];
            steps
                .into_iter()
                .map(|(r, ev, dwall, dpos, jump, qa)| {
                    wall[r] += dwall * 1000;
                    pos[r] = if jump { dpos } else { (pos[r] + dwall).min(600) };
                    let event = [LogEvent::Play, LogEvent::Pause, LogEvent::Seek, LogEvent::Idle, LogEvent::Action][ev];
                    entry(["r1", "r2"][r], event, wall[r], pos[r] as f64, qa == 0)
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn dwell_matches_bitmap(log in log_strategy(), spans in prop::collection::vec((0i64..600, 0i64..120), 0..6)) {
        let flagged_ms: Vec<(i64, i64)> = spans.iter().map(|&(a, l)| (a * 1000, ((a + l) * 1000).min(700_000))).collect();
        let flagged: Vec<Span> = flagged_ms.iter().map(|&(a, b)| Span::new(a as f64 / 1000.0, b as f64 / 1000.0)).collect();
        let got = compute_dwell(&log, &flagged).unwrap();
        let want = bitmap_dwell_ms(&log, &flagged_ms, 700_000) as f64 / 1000.0;
        prop_assert!((got - want).abs() < 1e-6, "dwell {} vs bitmap {}", got, want);
    }

    #[test]
    fn dwell_is_bounded_by_flagged_length(log in log_strategy()) {
        let flagged = [Span::new(100.0, 160.0)];
        let d = compute_dwell(&log, &flagged).unwrap();
        prop_assert!(d >= 0.0);
        let plays = log.iter().filter(|e| e.event == LogEvent::Play && !e.qa).count() as f64;
        prop_assert!(d <= plays * 60.0 + 1e-9);
    }

    #[test]
    fn simulated_sessions_hit_their_dwell(dur in 600i64..7200, frac in 0.05f64..0.9, seed in 0u64..1000) {
        let dur_ms = dur * 1000;
        let dwell_ms = ((dur_ms as f64) * frac).round() as i64;
        let s = simulate_session("sim", dur_ms, dwell_ms, seed);
        let got = compute_dwell(&s.log, &s.flagged).unwrap();
        prop_assert!((got - dwell_ms as f64 / 1000.0).abs() < 1e-6);
        let r = rtr(got, dur as f64).unwrap();
        prop_assert!((r - (1.0 - dwell_ms as f64 / dur_ms as f64)).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_matches_longhand(samples in prop::collection::vec(-1.0f64..1.0, 2..30), seed in any::<u64>(), level in 0.5f64..0.99) {
        let ci = bootstrap_mean_ci(&samples, level, 500, seed).unwrap();
        let n = samples.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means: Vec<f64> = (0..500)
            .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let h = 499.0 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            means[lo] + (h - lo as f64) * (means[hi] - means[lo])
        };
        let a = 1.0 - level;
        prop_assert_eq!(ci.lo, q(a / 2.0));
        prop_assert_eq!(ci.hi, q(1.0 - a / 2.0));
        prop_assert!(ci.lo <= ci.hi);
    }

    #[test]
    fn savings_compound_multiplicatively(fs in prop::collection::vec(0.0f64..0.99, 0..8)) {
        let factors: Vec<(String, f64)> = fs.iter().enumerate().map(|(i, f)| (format!("f{i}"), *f)).collect();
        let s = savings_model(&factors).unwrap();
        let remaining: f64 = fs.iter().map(|f| 1.0 - f).product();
        prop_assert!((s.combined_fraction - (1.0 - remaining)).abs() < 1e-12);
        prop_assert!(s.combined_fraction <= s.naive_sum_fraction + 1e-12);
        prop_assert!(fs.iter().all(|f| s.combined_fraction >= *f - 1e-12));
        let mut rev = factors.clone();
        rev.reverse();
        prop_assert!((savings_model(&rev).unwrap().combined_fraction - s.combined_fraction).abs() < 1e-12);
        prop_assert!((s.combined_minutes_per_hour - 60.0 * s.combined_fraction).abs() < 1e-9);
    }

    #[test]
    fn quantile_is_monotone(mut xs in prop::collection::vec(-10.0f64..10.0, 1..50), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(quantile_sorted(&xs, lo) <= quantile_sorted(&xs, hi));
        prop_assert_eq!(quantile_sorted(&xs, 0.0), xs[0]);
        prop_assert_eq!(quantile_sorted(&xs, 1.0), xs[xs.len() - 1]);
    }
}

#[test]
fn default_features_combine_to_thirty_point_eight_percent() {
    let factors: Vec<(String, f64)> = DEFAULT_FEATURES.iter().map(|(n, f)| (n.to_string(), *f)).collect();
    let s = savings_model(&factors).unwrap();
    let want = 1.0 - 0.95 * 0.90 * 0.92 * 0.88;
    assert!((s.combined_fraction - want).abs() < 1e-12);
    assert_eq!(format!("{:.1}", 100.0 * s.combined_fraction), "30.8");
    assert_eq!(format!("{:.1}", s.combined_minutes_per_hour), "18.5");
    let mins: Vec<String> = s.features.iter().map(|f| format!("{:.1}", f.minutes_per_hour)).collect();
    assert_eq!(mins, ["3.0", "6.0", "4.8", "7.2"]);
}

#[test]
fn out_of_range_factors_are_rejected() {
    assert!(savings_model(&[("x".into(), 1.0)]).is_err());
    assert!(savings_model(&[("x".into(), -0.1)]).is_err());
}

#[test]
fn rtr_identities() {
    assert_eq!(rtr(0.0, 10.0).unwrap(), 1.0);
    assert_eq!(rtr(10.0, 10.0).unwrap(), 0.0);
    assert!(rtr(15.0, 10.0).unwrap() < 0.0);
    assert!(rtr(1.0, 0.0).is_err());
}

#[test]
fn idle_gap_credits_only_playhead_advance() {
    let log = vec![
        entry("r1", LogEvent::Play, 0, 10.0, false),
        entry("r1", LogEvent::Pause, 45_000, 15.0, false),
        entry("r1", LogEvent::Play, 50_000, 15.0, false),
        entry("r1", LogEvent::Pause, 70_000, 35.0, false),
    ];
    let d = compute_dwell(&log, &[Span::new(0.0, 100.0)]).unwrap();
    assert!((d - 25.0).abs() < 1e-9);
}

#[test]
fn qa_revisits_are_excluded() {
    let log = vec![
        entry("r1", LogEvent::Play, 0, 10.0, true),
        entry("r1", LogEvent::Pause, 5_000, 15.0, true),
    ];
    assert_eq!(compute_dwell(&log, &[Span::new(0.0, 100.0)]).unwrap(), 0.0);
}

#[test]
fn unordered_log_is_rejected() {
    let log = vec![
        entry("r1", LogEvent::Play, 5_000, 10.0, false),
        entry("r1", LogEvent::Pause, 1_000, 15.0, false),
    ];
    assert!(compute_dwell(&log, &[]).is_err());
}

#[test]
fn fp_burden_counts_minutes_per_hour() {
    let items = [
        ReviewedItem {
            duration_s: 30.0,
            false_positive: true,
        },
        ReviewedItem {
            duration_s: 90.0,
            false_positive: true,
        },
        ReviewedItem {
            duration_s: 60.0,
            false_positive: false,
        },
    ];
    let b = fp_burden(&items, 1800.0).unwrap();
    assert!((b.fp_minutes_per_hour - 4.0).abs() < 1e-12);
    assert!((b.fp_occurrence_rate - 2.0 / 3.0).abs() < 1e-12);
}
