// SPDX-License-Identifier: Apache-2.0

//! Per-session and batch reports, plus the plain-text savings table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bootstrap_mean_ci, fp_burden, rtr, MeanCi, MetricsError, ReviewedItem, SavingsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionReport {
    pub session_id: String,
    #[serde(default)]
    pub domain: String,
    pub t_watch_all_s: f64,
    pub t_hitl_s: f64,
    pub rtr: f64,
    pub fp_minutes_per_hour: f64,
    pub fp_occurrence_rate: f64,
    pub review_volume_reduction: f64,
}

impl SessionReport {
    pub fn build(
        session_id: &str,
        domain: &str,
        t_watch_all_s: f64,
        t_hitl_s: f64,
        reviewed: &[ReviewedItem],
        review_volume_reduction: f64,
    ) -> Result<Self, MetricsError> {
        let fp = fp_burden(reviewed, t_watch_all_s)?;
        Ok(Self {
            session_id: session_id.into(),
            domain: domain.into(),
            t_watch_all_s,
            t_hitl_s: t_hitl_s.max(0.0),
            rtr: rtr(t_hitl_s, t_watch_all_s)?,
            fp_minutes_per_hour: fp.fp_minutes_per_hour,
            fp_occurrence_rate: fp.fp_occurrence_rate,
            review_volume_reduction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub sessions: Vec<SessionReport>,
    /// Absent with fewer than two sessions.
    pub rtr_ci: Option<MeanCi>,
    pub savings: SavingsReport,
}

pub fn batch_report(
    sessions: Vec<SessionReport>,
    savings: SavingsReport,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<BatchReport, MetricsError> {
    let rtrs: Vec<f64> = sessions.iter().map(|s| s.rtr).collect();
    let rtr_ci = match bootstrap_mean_ci(&rtrs, level, resamples, seed) {
        Ok(c) => Some(c),
        Err(MetricsError::TooFewSamples(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BatchReport {
        sessions,
        rtr_ci,
        savings,
    })
}

pub fn render_savings_table(s: &SavingsReport) -> String {
    let width = s.features.iter().map(|f| f.feature.len()).max().unwrap_or(7).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>16}  {:>18}", "Feature", "Review % savings", "Minutes saved (1h)");
    for f in &s.features {
        let _ = writeln!(
            out,
            "{:<width$}  {:>15}%  {:>18.1}",
            f.feature,
            fmt_pct(f.fraction * 100.0),
            f.minutes_per_hour
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>15.1}%  {:>18.1}",
        "Combined (compounded)",
        s.combined_fraction * 100.0,
        s.combined_minutes_per_hour
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>15}%  {:>18.1}",
        "Naive sum",
        fmt_pct(s.naive_sum_fraction * 100.0),
        s.naive_sum_fraction * 60.0
    );
    out
}

fn fmt_pct(p: f64) -> String {
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round())
    } else {
        format!("{p:.1}")
    }
}

pub fn render_batch(b: &BatchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>10} {:>10} {:>8} {:>10} {:>8} {:>8}",
        "session", "watch_s", "hitl_s", "rtr", "fp_min/h", "fp_rate", "rvr"
    );
    for s in &b.sessions {
        let _ = writeln!(
            out,
            "{:<24} {:>10.1} {:>10.1} {:>8.4} {:>10.3} {:>8.3} {:>8.3}",
            s.session_id, s.t_watch_all_s, s.t_hitl_s, s.rtr, s.fp_minutes_per_hour, s.fp_occurrence_rate, s.review_volume_reduction
        );
    }
    if let Some(c) = &b.rtr_ci {
        let _ = writeln!(
            out,
            "mean RTR {:.4}  {:.0}% CI [{:.4}, {:.4}]  (resamples {}, seed {})",
            c.mean,
            c.level * 100.0,
            c.lo,
            c.hi,
            c.resamples,
            c.seed
        );
    }
    out.push('\n');
    out.push_str(&render_savings_table(&b.savings));
    out
}

#[cfg(test)]
mod tests {
    use super::super::{savings_model, DEFAULT_FEATURES};
    use super::*;

    #[test]
    fn table_rows() {
        let f: Vec<(String, f64)> = DEFAULT_FEATURES.iter().map(|(n, f)| (n.to_string(), *f)).collect();
        let t = render_savings_table(&savings_model(&f).unwrap());
        assert!(t.lines().nth(1).unwrap().trim_end().ends_with("5%                 3.0"));
        assert!(t.contains("30.8%"));
        assert!(t.contains("18.5"));
        assert!(t.lines().last().unwrap().contains("35%"));
    }
}
