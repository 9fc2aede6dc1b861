// SPDX-License-Identifier: Apache-2.0

//! Hash-chained audit log.
//!
//! Each record's `record_digest` is the SHA-256 of the canonical JSON of the
//! record without that field; the record also carries the previous record's
//! digest (64 zeros for the first), so editing, dropping or reordering any
//! line breaks verification from that point on. On disk the log is JSONL with
//! one canonical record per line.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{canonical_digest, to_canonical_string, zero_digest};
use crate::fusion::TimelineItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    Accept,
    Adjust,
    Override,
    LockExpired,
    QaDraw,
    QaJudgment,
    Finalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RationaleCode {
    #[serde(rename = "FP")]
    Fp,
    WrongExtent,
    WrongClass,
    PolicyExempt,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    /// RFC 3339, UTC, millisecond precision.
    pub timestamp: String,
    pub reviewer_id: String,
    pub event: AuditEvent,
    pub timeline_id: Option<String>,
    /// Digest of the canonical pre-state.
    pub item_hash: Option<String>,
    pub pre_state: Option<TimelineItem>,
    pub post_state: Option<TimelineItem>,
    pub rationale_code: Option<RationaleCode>,
    pub dwell_ms: u64,
    pub detail: Value,
    pub prev_record_digest: String,
    pub record_digest: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("line {line}: unreadable record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("seq {seq}: {reason}")]
    Broken { seq: u64, reason: String },
}

impl ChainError {
    /// Zero-based index of the first bad line.
    pub fn line(&self) -> usize {
        match self {
            ChainError::Malformed { line, .. } => *line,
            ChainError::Broken { seq, .. } => *seq as usize,
        }
    }
}

pub fn record_digest(rec: &AuditRecord) -> String {
    let mut v = serde_json::to_value(rec).expect("audit record serializes");
    if let Value::Object(m) = &mut v {
        m.remove("record_digest");
    }
    canonical_digest(&v).expect("canonical digest")
}

pub fn item_hash(item: &TimelineItem) -> String {
    canonical_digest(item).expect("canonical digest")
}

/// Seals a record onto the end of `chain`: sets `seq`, `prev_record_digest`
/// and `record_digest`.
pub fn seal(chain: &[AuditRecord], mut rec: AuditRecord) -> AuditRecord {
    rec.seq = chain.len() as u64;
    rec.prev_record_digest = chain
        .last()
        .map(|r| r.record_digest.clone())
        .unwrap_or_else(zero_digest);
    rec.record_digest = record_digest(&rec);
    rec
}

pub fn to_line(rec: &AuditRecord) -> String {
    to_canonical_string(rec).expect("audit record serializes")
}

pub fn to_jsonl(chain: &[AuditRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in chain {
        out.extend_from_slice(to_line(r).as_bytes());
        out.push(b'\n');
    }
    out
}

/// Verifies raw JSONL bytes and returns the parsed chain.
pub fn verify_jsonl(bytes: &[u8]) -> Result<Vec<AuditRecord>, ChainError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ChainError::Malformed {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        reason: "invalid UTF-8".into(),
    })?;
    let mut chain: Vec<AuditRecord> = Vec::new();
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(chain);
    }
    for (i, line) in body.split('\n').enumerate() {
        let rec: AuditRecord = serde_json::from_str(line).map_err(|e| ChainError::Malformed {
            line: i,
            reason: e.to_string(),
        })?;
        if to_line(&rec) != line {
            return Err(ChainError::Broken {
                seq: i as u64,
                reason: "line is not in canonical form".into(),
            });
        }
        check_link(&chain, &rec, i)?;
        chain.push(rec);
    }
    Ok(chain)
}

fn check_link(prev: &[AuditRecord], rec: &AuditRecord, i: usize) -> Result<(), ChainError> {
    let broken = |reason: &str| ChainError::Broken {
        seq: i as u64,
        reason: reason.into(),
    };
    if rec.seq != i as u64 {
        return Err(broken("sequence number out of place"));
    }
    let expect_prev = prev.last().map(|r| r.record_digest.clone()).unwrap_or_else(zero_digest);
    if rec.prev_record_digest != expect_prev {
        return Err(broken("predecessor digest mismatch"));
    }
    if record_digest(rec) != rec.record_digest {
        return Err(broken("record digest mismatch"));
    }
    if let (Some(h), Some(pre)) = (&rec.item_hash, &rec.pre_state) {
        if *h != item_hash(pre) {
            return Err(broken("item hash does not match pre-state"));
        }
    }
    Ok(())
}

/// Verifies an in-memory chain.
pub fn verify_chain(chain: &[AuditRecord]) -> Result<(), ChainError> {
    for (i, rec) in chain.iter().enumerate() {
        check_link(&chain[..i], rec, i)?;
    }
    Ok(())
}

/// The first recorded pre-state of every item touched by the chain, i.e.
/// the state fusion handed to review, keyed by timeline id.
pub fn replay_original_states(chain: &[AuditRecord]) -> std::collections::BTreeMap<String, TimelineItem> {
    let mut out = std::collections::BTreeMap::new();
    for rec in chain {
        if let (Some(id), Some(pre)) = (&rec.timeline_id, &rec.pre_state) {
            out.entry(id.clone()).or_insert_with(|| pre.clone());
        }
    }
    out
}

/// Replays the chain forward from `initial` and checks every record's
/// pre-state against the replayed state. Returns the final states.
pub fn replay(
    initial: &[TimelineItem],
    chain: &[AuditRecord],
) -> Result<std::collections::BTreeMap<String, TimelineItem>, ChainError> {
    let mut state: std::collections::BTreeMap<String, TimelineItem> =
        initial.iter().map(|t| (t.timeline_id.clone(), t.clone())).collect();
    for rec in chain {
        let Some(id) = &rec.timeline_id else { continue };
        let Some(cur) = state.get(id) else {
            return Err(ChainError::Broken {
                seq: rec.seq,
                reason: format!("unknown item {id}"),
            });
        };
        if let Some(pre) = &rec.pre_state {
            if to_line_item(pre) != to_line_item(cur) {
                return Err(ChainError::Broken {
                    seq: rec.seq,
                    reason: format!("pre-state of {id} differs from replayed state"),
                });
            }
        }
        if let Some(post) = &rec.post_state {
            state.insert(id.clone(), post.clone());
        }
    }
    Ok(state)
}

fn to_line_item(t: &TimelineItem) -> String {
    to_canonical_string(t).expect("item serializes")
}
