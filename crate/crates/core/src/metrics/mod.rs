// SPDX-License-Identifier: Apache-2.0

//! Review-time reduction, false-positive burden, bootstrap intervals and the
//! feature savings model.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intervals::{IntervalSet, Span};

pub mod report;
pub mod simulate;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("log out of order at entry {0}")]
    UnorderedLog(usize),
    #[error("zero or negative duration")]
    ZeroDuration,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("factor {0} outside [0, 1)")]
    FactorOutOfRange(f64),
    #[error("confidence level {0} outside (0, 1)")]
    LevelOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    Play,
    Pause,
    Seek,
    Idle,
    Action,
}

/// One client log line from `review_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewLogEntry {
    pub session_id: String,
    pub reviewer_id: String,
    #[serde(default)]
    pub timeline_id: Option<String>,
    pub event: LogEvent,
    pub t_wall: DateTime<Utc>,
    /// Player position, seconds of raw session time.
    pub position: f64,
    /// Set on QA revisits.
    #[serde(default)]
    pub qa: bool,
}

/// Wall-clock gap with no events above which a play interval is treated as
/// idle beyond what the playhead shows.
pub const IDLE_GAP_S: f64 = 30.0;

/// Reviewer dwell on flagged spans (`T_HITL`), in seconds.
///
/// Per (session, reviewer) stream, a play interval runs from a `play` event
/// to the next event of any kind. It is credited with its wall duration,
/// except when that exceeds [`IDLE_GAP_S`]: then only the playhead advance
/// reported by the closing event counts. The credited playback
/// `[position, position + credited]` is intersected with `flagged`; intervals
/// opened by a QA revisit are excluded.
pub fn compute_dwell(entries: &[ReviewLogEntry], flagged: &[Span]) -> Result<f64, MetricsError> {
    let flagged = IntervalSet::from_spans(flagged.iter().copied());
    let mut streams: std::collections::BTreeMap<(&str, &str), Vec<(usize, &ReviewLogEntry)>> = Default::default();
    for (i, e) in entries.iter().enumerate() {
        streams.entry((&e.session_id, &e.reviewer_id)).or_default().push((i, e));
    }
    let mut total = 0.0;
    for stream in streams.values() {
        for w in stream.windows(2) {
            if w[1].1.t_wall < w[0].1.t_wall {
                return Err(MetricsError::UnorderedLog(w[1].0));
            }
        }
        let mut open: Option<&ReviewLogEntry> = None;
        for &(_, e) in stream {
            if let Some(p) = open.take() {
                let wall = (e.t_wall - p.t_wall).num_milliseconds() as f64 / 1000.0;
                let credited = if wall > IDLE_GAP_S {
                    wall.min((e.position - p.position).max(0.0))
                } else {
                    wall
                };
                if !p.qa && credited > 0.0 {
                    let played = IntervalSet::from_spans([Span::new(p.position, p.position + credited)]);
                    total += played.intersect(&flagged).total_len();
                }
            }
            if e.event == LogEvent::Play {
                open = Some(e);
            }
        }
    }
    Ok(total)
}

/// `1 - t_hitl / t_watch_all`. Negative when review overhead exceeds a full
/// watch.
pub fn rtr(t_hitl: f64, t_watch_all: f64) -> Result<f64, MetricsError> {
    if !(t_watch_all > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    Ok(1.0 - t_hitl / t_watch_all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewedItem {
    pub duration_s: f64,
    pub false_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpBurden {
    pub fp_minutes_per_hour: f64,
    pub fp_occurrence_rate: f64,
}

pub fn fp_burden(items: &[ReviewedItem], duration_s: f64) -> Result<FpBurden, MetricsError> {
    if !(duration_s > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    let fp: Vec<&ReviewedItem> = items.iter().filter(|i| i.false_positive).collect();
    let fp_minutes = fp.iter().map(|i| i.duration_s).sum::<f64>() / 60.0;
    Ok(FpBurden {
        fp_minutes_per_hour: fp_minutes / (duration_s / 3600.0),
        fp_occurrence_rate: if items.is_empty() { 0.0 } else { fp.len() as f64 / items.len() as f64 },
    })
}

/// Reviewed items from final labels: an item counts as a false positive when
/// it was overridden with the `FP` rationale.
pub fn reviewed_items(labels: &[crate::review::FinalLabel]) -> Vec<ReviewedItem> {
    labels
        .iter()
        .map(|l| ReviewedItem {
            duration_s: l.t_end - l.t_start,
            false_positive: l.status == crate::fusion::ItemStatus::Overridden
                && l.rationale_code == Some(crate::review::RationaleCode::Fp),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the mean. Each resample draws `n` indices in order
/// with `random_range(0..n)` from one ChaCha8 stream seeded with `seed`.
pub fn bootstrap_mean_ci(samples: &[f64], level: f64, resamples: usize, seed: u64) -> Result<MeanCi, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::LevelOutOfRange(level));
    }
    let resamples = resamples.max(1);
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(MeanCi {
        mean,
        lo: quantile_sorted(&means, alpha / 2.0),
        hi: quantile_sorted(&means, 1.0 - alpha / 2.0),
        level,
        resamples,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSaving {
    pub feature: String,
    pub fraction: f64,
    pub minutes_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub features: Vec<FeatureSaving>,
    /// `1 - prod(1 - f_i)`.
    pub combined_fraction: f64,
    pub combined_minutes_per_hour: f64,
    pub naive_sum_fraction: f64,
}

pub const DEFAULT_FEATURES: [(&str, f64); 4] = [
    ("Proprietary format support", 0.05),
    ("Easy annotation via 1m/5m chunking", 0.10),
    ("Scene/empty/black detection", 0.08),
    ("PII/Minor/NSFW triage", 0.12),
];

pub fn savings_model(factors: &[(String, f64)]) -> Result<SavingsReport, MetricsError> {
    if let Some(&(_, f)) = factors.iter().find(|(_, f)| !(0.0..1.0).contains(f)) {
        return Err(MetricsError::FactorOutOfRange(f));
    }
    let remaining: f64 = factors.iter().map(|(_, f)| 1.0 - f).product();
    let combined = 1.0 - remaining;
    Ok(SavingsReport {
        features: factors
            .iter()
            .map(|(name, f)| FeatureSaving {
                feature: name.clone(),
                fraction: *f,
                minutes_per_hour: 60.0 * f,
            })
            .collect(),
        combined_fraction: combined,
        combined_minutes_per_hour: 60.0 * combined,
        naive_sum_fraction: factors.iter().map(|(_, f)| f).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(s: f64) -> DateTime<Utc> {
        Utc.timestamp_millis_opt((s * 1000.0).round() as i64).unwrap()
    }

    fn ev(event: LogEvent, t: f64, pos: f64) -> ReviewLogEntry {
        ReviewLogEntry {
            session_id: "s".into(),
            reviewer_id: "r".into(),
            timeline_id: None,
            event,
            t_wall: at(t),
            position: pos,
            qa: false,
        }
    }

    #[test]
    fn dwell_examples() {
        let flag = [Span::new(0.0, 1000.0)];
        assert_eq!(compute_dwell(&[], &flag).unwrap(), 0.0);
        assert_eq!(compute_dwell(&[ev(LogEvent::Pause, 5.0, 0.0)], &flag).unwrap(), 0.0);
        let log = [ev(LogEvent::Play, 0.0, 0.0), ev(LogEvent::Pause, 90.0, 90.0)];
        assert_eq!(compute_dwell(&log, &flag).unwrap(), 90.0);
        let log = [
            ev(LogEvent::Play, 0.0, 0.0),
            ev(LogEvent::Seek, 30.0, 30.0),
            ev(LogEvent::Play, 30.0, 200.0),
            ev(LogEvent::Pause, 70.0, 240.0),
        ];
        assert_eq!(compute_dwell(&log, &flag).unwrap(), 70.0);
        // outside flags does not count
        assert_eq!(compute_dwell(&log, &[Span::new(0.0, 10.0)]).unwrap(), 10.0);
        let mut qa = log.clone();
        qa[2].qa = true;
        assert_eq!(compute_dwell(&qa, &flag).unwrap(), 30.0);
        // stalled player: a 100 s gap with the playhead moved 5 s
        let log = [ev(LogEvent::Play, 0.0, 0.0), ev(LogEvent::Idle, 100.0, 5.0)];
        assert_eq!(compute_dwell(&log, &flag).unwrap(), 5.0);
        let bad = [ev(LogEvent::Play, 10.0, 0.0), ev(LogEvent::Pause, 5.0, 0.0)];
        assert_eq!(compute_dwell(&bad, &flag), Err(MetricsError::UnorderedLog(1)));
    }

    #[test]
    fn rtr_examples() {
        assert_eq!(rtr(3600.0, 3600.0).unwrap(), 0.0);
        assert_eq!(rtr(0.0, 3600.0).unwrap(), 1.0);
        assert!((rtr(44.0 * 60.0, 3600.0).unwrap() - (1.0 - 44.0 / 60.0)).abs() < 1e-12);
        assert!(rtr(4000.0, 3600.0).unwrap() < 0.0);
        assert_eq!(rtr(1.0, 0.0), Err(MetricsError::ZeroDuration));
    }

    #[test]
    fn fp_examples() {
        assert_eq!(
            fp_burden(&[], 3600.0).unwrap(),
            FpBurden {
                fp_minutes_per_hour: 0.0,
                fp_occurrence_rate: 0.0
            }
        );
        // 100 items, 11 false positives totalling 30 s in one hour
        let mut items: Vec<ReviewedItem> = (0..89)
            .map(|_| ReviewedItem {
                duration_s: 10.0,
                false_positive: false,
            })
            .collect();
        items.extend((0..11).map(|i| ReviewedItem {
            duration_s: if i == 0 { 10.0 } else { 2.0 },
            false_positive: true,
        }));
        let b = fp_burden(&items, 3600.0).unwrap();
        assert!((b.fp_minutes_per_hour - 0.5).abs() < 1e-12);
        assert!((b.fp_occurrence_rate - 0.11).abs() < 1e-12);
        let two = [
            ReviewedItem {
                duration_s: 15.0,
                false_positive: true,
            };
            2
        ];
        assert!((fp_burden(&two, 1800.0).unwrap().fp_minutes_per_hour - 1.0).abs() < 1e-12);
        assert_eq!(fp_burden(&two, 0.0), Err(MetricsError::ZeroDuration));
    }

    #[test]
    fn bootstrap_basics() {
        let c = bootstrap_mean_ci(&[0.3; 8], 0.95, 500, 1).unwrap();
        assert_eq!((c.lo, c.mean, c.hi), (0.3, 0.3, 0.3));
        let xs = [0.25, 0.31, 0.28, 0.35, 0.22, 0.30, 0.27, 0.33, 0.29, 0.30];
        assert_eq!(bootstrap_mean_ci(&xs, 0.95, 2000, 9), bootstrap_mean_ci(&xs, 0.95, 2000, 9));
        assert_eq!(bootstrap_mean_ci(&[1.0], 0.95, 10, 0), Err(MetricsError::TooFewSamples(1)));
    }

    #[test]
    fn savings_examples() {
        let f: Vec<(String, f64)> = DEFAULT_FEATURES.iter().map(|(n, f)| (n.to_string(), *f)).collect();
        let r = savings_model(&f).unwrap();
        let mins: Vec<String> = r.features.iter().map(|s| format!("{:.1}", s.minutes_per_hour)).collect();
        assert_eq!(mins, ["3.0", "6.0", "4.8", "7.2"]);
        assert!((r.combined_fraction - (1.0 - 0.95 * 0.90 * 0.92 * 0.88)).abs() < 1e-12);
        assert!((r.combined_minutes_per_hour - 18.5).abs() < 0.05);
        let one = savings_model(&[("x".into(), 0.08)]).unwrap();
        assert!((one.combined_fraction - 0.08).abs() < 1e-15);
        assert_eq!(savings_model(&[("x".into(), 1.0)]), Err(MetricsError::FactorOutOfRange(1.0)));
    }

    proptest! {
        #[test]
        fn rtr_fixed_points(x in 0.001f64..1e6) {
            prop_assert_eq!(rtr(x, x).unwrap(), 0.0);
            prop_assert_eq!(rtr(0.0, x).unwrap(), 1.0);
        }

        #[test]
        fn compounding_is_conservative(fs in proptest::collection::vec(0.0f64..0.99, 1..8)) {
            let named: Vec<(String, f64)> = fs.iter().map(|f| (String::new(), *f)).collect();
            let r = savings_model(&named).unwrap();
            prop_assert!(r.combined_fraction <= r.naive_sum_fraction + 1e-12);
        }

        #[test]
        fn paused_noise_does_not_change_dwell(
            plays in proptest::collection::vec((1u32..25, 0u32..40), 1..10),
            noise in proptest::collection::vec((any::<bool>(), 0u32..100), 0..10),
        ) {
            let flag = [Span::new(20.0, 400.0)];
            let mut log = Vec::new();
            let (mut t, mut pos) = (0.0, 0.0);
            for (k, (len, gap)) in plays.iter().enumerate() {
                log.push(ev(LogEvent::Play, t, pos));
                t += *len as f64;
                pos += *len as f64;
                log.push(ev(LogEvent::Pause, t, pos));
                if let Some((seek, p)) = noise.get(k) {
                    // injected while paused: zero net playback
                    let kind = if *seek { LogEvent::Seek } else { LogEvent::Idle };
                    log.push(ev(kind, t + 0.5, *p as f64));
                }
                t += *gap as f64 + 1.0;
            }
            let clean: Vec<ReviewLogEntry> =
                log.iter().filter(|e| matches!(e.event, LogEvent::Play | LogEvent::Pause)).cloned().collect();
            prop_assert_eq!(compute_dwell(&log, &flag).unwrap(), compute_dwell(&clean, &flag).unwrap());
        }

        #[test]
        fn symmetric_ci_contains_mean(half in proptest::collection::vec(0.0f64..1.0, 2..12), seed in 0u64..50) {
            let mut xs: Vec<f64> = half.iter().map(|x| 0.5 + x).collect();
            xs.extend(half.iter().map(|x| 0.5 - x));
            let c = bootstrap_mean_ci(&xs, 0.95, 400, seed).unwrap();
            prop_assert!(c.lo <= c.mean + 1e-12 && c.mean <= c.hi + 1e-12);
        }
    }
}
