// SPDX-License-Identifier: Apache-2.0

//! Seeded reviewer-log simulator. Produces client logs with a known dwell so
//! the metric path (log → dwell → RTR → bootstrap) can be exercised without
//! human trials.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_dwell, rtr, LogEvent, MetricsError, ReviewLogEntry};
use crate::intervals::Span;

const FLAG_CHUNK_MS: i64 = 120_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSession {
    pub session_id: String,
    pub duration_s: f64,
    pub flagged: Vec<Span>,
    pub log: Vec<ReviewLogEntry>,
}

fn wall(ms: i64) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(1_700_000_000_000 + ms).unwrap()
}

/// A session of `duration_ms` whose flagged spans total `dwell_ms`, watched
/// in short play/pause bursts with seeks between spans and idle breaks while
/// paused. Every flagged millisecond is played exactly once.
pub fn simulate_session(session_id: &str, duration_ms: i64, dwell_ms: i64, seed: u64) -> SimulatedSession {
    assert!(0 <= dwell_ms && dwell_ms <= duration_ms, "dwell must fit in the session");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ((dwell_ms + FLAG_CHUNK_MS - 1) / FLAG_CHUNK_MS).max(1);
    let gap = (duration_ms - dwell_ms) / (k + 1);
    let mut flagged = Vec::new();
    let mut log = Vec::new();
    let mut now = 0i64;
    let mut cursor = gap;
    let entry = |event, t: i64, pos: i64| ReviewLogEntry {
        session_id: session_id.into(),
        reviewer_id: "sim".into(),
        timeline_id: None,
        event,
        t_wall: wall(t),
        position: pos as f64 / 1000.0,
        qa: false,
    };
    for i in 0..k {
        let len = dwell_ms / k + if i < dwell_ms % k { 1 } else { 0 };
        let (a, b) = (cursor, cursor + len);
        flagged.push(Span::new(a as f64 / 1000.0, b as f64 / 1000.0));
        log.push(entry(LogEvent::Seek, now, a));
        now += rng.random_range(200..1500);
        let mut pos = a;
        while pos < b {
            let burst = rng.random_range(5_000..25_000).min(b - pos);
            log.push(entry(LogEvent::Play, now, pos));
            now += burst;
            pos += burst;
            log.push(entry(if pos == b { LogEvent::Action } else { LogEvent::Pause }, now, pos));
            now += rng.random_range(300..4_000);
            if rng.random_bool(0.2) {
                now += rng.random_range(31_000..120_000);
                log.push(entry(LogEvent::Idle, now, pos));
            }
        }
        cursor = b + gap;
    }
    SimulatedSession {
        session_id: session_id.into(),
        duration_s: duration_ms as f64 / 1000.0,
        flagged,
        log,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedResult {
    pub session_id: String,
    pub t_watch_all_s: f64,
    pub t_hitl_s: f64,
    pub rtr: f64,
}

/// `n` sessions of `duration_s` whose dwell is `mean_dwell_s` plus a uniform
/// deviation in `±spread_s`. Deviations are centred (in whole milliseconds)
/// so the batch mean dwell is exactly `mean_dwell_s`.
pub fn simulate_batch(
    n: usize,
    duration_s: f64,
    mean_dwell_s: f64,
    spread_s: f64,
    seed: u64,
) -> Result<Vec<SimulatedResult>, MetricsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = (spread_s * 1000.0).round() as i64;
    let mut dev: Vec<i64> = (0..n)
        .map(|_| if spread > 0 { rng.random_range(-spread..=spread) } else { 0 })
        .collect();
    let total: i64 = dev.iter().sum();
    if n > 0 {
        let base = total / n as i64;
        for d in dev.iter_mut() {
            *d -= base;
        }
        let rem: i64 = dev.iter().sum();
        for d in dev.iter_mut().take(rem.unsigned_abs() as usize) {
            *d -= rem.signum();
        }
    }
    let duration_ms = (duration_s * 1000.0).round() as i64;
    let mean_ms = (mean_dwell_s * 1000.0).round() as i64;
    dev.iter()
        .enumerate()
        .map(|(i, d)| {
            let dwell = (mean_ms + d).clamp(0, duration_ms);
            let s = simulate_session(&format!("sim_{i:04}"), duration_ms, dwell, seed.wrapping_add(1 + i as u64));
            let t_hitl = compute_dwell(&s.log, &s.flagged)?;
            Ok(SimulatedResult {
                session_id: s.session_id,
                t_watch_all_s: s.duration_s,
                t_hitl_s: t_hitl,
                rtr: rtr(t_hitl, s.duration_s)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_dwell_is_recovered() {
        let s = simulate_session("a", 3_600_000, 44 * 60_000, 3);
        let d = compute_dwell(&s.log, &s.flagged).unwrap();
        assert!((d - 2640.0).abs() < 1e-9);
        assert!((rtr(d, s.duration_s).unwrap() - 0.266_666_666_7).abs() < 1e-9);
        assert!(s.log.iter().any(|e| e.event == LogEvent::Idle));
    }

    #[test]
    fn batch_mean_is_centred() {
        let b = simulate_batch(12, 3600.0, 42.0 * 60.0, 300.0, 5).unwrap();
        let mean = b.iter().map(|r| r.rtr).sum::<f64>() / b.len() as f64;
        assert!((mean - 0.30).abs() < 1e-9);
        assert!(b.iter().any(|r| (r.rtr - 0.30).abs() > 1e-3));
    }
}
