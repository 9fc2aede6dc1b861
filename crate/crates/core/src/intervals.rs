// SPDX-License-Identifier: Apache-2.0

//! Sets of time intervals on the real line.
//!
//! Spans are half-open `[start, end)`; a set is kept as a sorted list of
//! disjoint, non-touching spans with `start < end`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Positive-measure overlap test.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Overlap test that also counts shared endpoints and points.
    pub fn touches(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn intersection(&self, other: &Span) -> Option<Span> {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        (s < e).then_some(Span::new(s, e))
    }

    /// Temporal intersection-over-union. Two identical points score 1.
    pub fn iou(&self, other: &Span) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        let union = self.end.max(other.end) - self.start.min(other.start);
        if union <= 0.0 {
            if self.start == other.start {
                1.0
            } else {
                0.0
            }
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSet {
    spans: Vec<Span>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spans<I: IntoIterator<Item = Span>>(spans: I) -> Self {
        let mut v: Vec<Span> = spans.into_iter().filter(|s| !s.is_empty()).collect();
        v.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        let mut out: Vec<Span> = Vec::with_capacity(v.len());
        for s in v {
            match out.last_mut() {
                Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
                _ => out.push(s),
            }
        }
        Self { spans: out }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn total_len(&self) -> f64 {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::from_spans(self.spans.iter().chain(other.spans.iter()).copied())
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.spans.len() && j < other.spans.len() {
            let a = self.spans[i];
            let b = other.spans[j];
            if let Some(x) = a.intersection(&b) {
                out.push(x);
            }
            if a.end < b.end {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet::from_spans(out)
    }

    pub fn subtract(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &s in &self.spans {
            let mut cur = s.start;
            for o in other.spans.iter().filter(|o| o.overlaps(&s)) {
                if o.start > cur {
                    out.push(Span::new(cur, o.start));
                }
                cur = cur.max(o.end);
            }
            if cur < s.end {
                out.push(Span::new(cur, s.end));
            }
        }
        IntervalSet::from_spans(out)
    }

    /// True when any member span overlaps `span` with positive measure, or
    /// contains it when `span` is a single point.
    pub fn intersects(&self, span: &Span) -> bool {
        self.spans.iter().any(|s| {
            if span.is_empty() {
                s.start <= span.start && span.start < s.end
            } else {
                s.overlaps(span)
            }
        })
    }

    /// Keeps only spans at least `min_len` long.
    pub fn retain_min_len(&self, min_len: f64) -> IntervalSet {
        IntervalSet {
            spans: self.spans.iter().copied().filter(|s| s.len() >= min_len).collect(),
        }
    }
}
