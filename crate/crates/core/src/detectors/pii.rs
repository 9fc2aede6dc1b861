// SPDX-License-Identifier: Apache-2.0

//! Rule-based PII scanning over word-timed transcripts.
//!
//! Patterns (applied to the transcript text, words joined by single spaces and
//! segments by newlines):
//!
//! | entity  | rule |
//! |---------|------|
//! | EMAIL   | `local@domain.tld` |
//! | ID      | `ddd-dd-dddd`, or 1–3 capitals followed by 6–10 digits |
//! | PHONE   | optional `+cc`, optional area code, then `ddd-dddd` (separators ` `, `.`, `-`) |
//! | ADDRESS | house number, 1–3 capitalized words, street suffix; plus the policy dictionary |
//! | NAME    | policy dictionary, whole words, case-insensitive |
//! | CUSTOM  | policy dictionary (medication, payment terms, ...) |
//!
//! Overlapping candidates are resolved by entity priority in the order listed,
//! then by earliest start and longest match, so no two hits share characters.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use serde_json::{json, Map};

use super::{clip_overlaps, DetectorError, EvidenceClass, EvidenceItem, SuggestedAction};
use crate::projection::View;
use crate::segmenter::ClipRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Word {
    pub text: String,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    #[default]
    Scripted,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptSegment {
    pub speaker: String,
    pub words: Vec<Word>,
    #[serde(default)]
    pub source: TranscriptSource,
}

impl TranscriptSegment {
    pub fn validate(&self) -> Result<(), String> {
        for w in &self.words {
            if w.t_end < w.t_start {
                return Err(format!("word {:?} ends before it starts", w.text));
            }
        }
        if self.words.windows(2).any(|p| p[1].t_start < p[0].t_start) {
            return Err("word times not monotone".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PiiEntity {
    Name,
    Phone,
    Email,
    Address,
    Id,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RedactionPlanKind {
    #[default]
    MuteWindow,
    ToneReplace,
    TextOverlay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactionWindow {
    pub plan: RedactionPlanKind,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiiHit {
    pub entity_type: PiiEntity,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
    pub speaker: String,
    pub t_start: f64,
    pub t_end: f64,
    pub confidence: f64,
    pub redaction_plan: RedactionWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiiPolicy {
    pub names: Vec<String>,
    pub addresses: Vec<String>,
    pub custom_terms: Vec<String>,
    pub pad_s: f64,
    pub default_plan: RedactionPlanKind,
    pub pattern_confidence: f64,
    pub dictionary_confidence: f64,
}

impl Default for PiiPolicy {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            addresses: Vec::new(),
            custom_terms: Vec::new(),
            pad_s: 0.25,
            default_plan: RedactionPlanKind::MuteWindow,
            pattern_confidence: 0.95,
            dictionary_confidence: 0.85,
        }
    }
}

impl PiiPolicy {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::PolicyInvalid(m.to_string()));
        if !(self.pad_s.is_finite() && self.pad_s >= 0.0) {
            return bad("pad_s must be finite and >= 0");
        }
        for c in [self.pattern_confidence, self.dictionary_confidence] {
            if !(0.0..=1.0).contains(&c) {
                return bad("confidences must lie in [0, 1]");
            }
        }
        let all = self.names.iter().chain(&self.addresses).chain(&self.custom_terms);
        for t in all {
            if t.trim().is_empty() {
                return bad("dictionary terms must be non-empty");
            }
        }
        Ok(())
    }
}

struct Patterns {
    email: Regex,
    id: Regex,
    phone: Regex,
    address: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        email: Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}")
            .unwrap(),
        id: Regex::new(r"\b(?:\d{3}-\d{2}-\d{4}|[A-Z]{1,3}\d{6,10})\b").unwrap(),
        phone: Regex::new(
            r"(?:\+\d{1,3}[ .\-]?)?(?:\(\d{3}\)[ .\-]?|\b\d{3}[ .\-])?\b\d{3}[ .\-]\d{4}\b",
        )
        .unwrap(),
        address: Regex::new(
            r"\b\d{1,5}(?: [A-Z][a-z]+){1,3} (?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Lane|Ln|Drive|Dr)\b",
        )
        .unwrap(),
    })
}

fn dictionary_regex(terms: &[String]) -> Option<Regex> {
    if terms.is_empty() {
        return None;
    }
    let mut sorted: Vec<&String> = terms.iter().collect();
    // longest first so alternation prefers the longer phrase
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alt: Vec<String> = sorted.iter().map(|t| regex::escape(t.trim())).collect();
    Regex::new(&format!(r"(?i)\b(?:{})\b", alt.join("|"))).ok()
}

struct WordSpan {
    seg: usize,
    word: usize,
    byte_start: usize,
    byte_end: usize,
}

/// Scans transcripts for PII. Character offsets index the joined transcript
/// text (see module docs). Redaction windows are padded by `pad_s` and
/// clamped at zero.
pub fn scan_pii(segments: &[TranscriptSegment], policy: &PiiPolicy) -> Result<Vec<PiiHit>, DetectorError> {
    policy.validate()?;
    let mut text = String::new();
    let mut spans: Vec<WordSpan> = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        if si > 0 {
            text.push('\n');
        }
        for (wi, w) in seg.words.iter().enumerate() {
            if wi > 0 {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(&w.text);
            spans.push(WordSpan {
                seg: si,
                word: wi,
                byte_start: start,
                byte_end: text.len(),
            });
        }
    }

    let p = patterns();
    let mut candidates: Vec<(PiiEntity, usize, usize, f64)> = Vec::new();
    let mut push_all = |re: &Regex, ent: PiiEntity, conf: f64| {
        for m in re.find_iter(&text) {
            candidates.push((ent, m.start(), m.end(), conf));
        }
    };
    push_all(&p.email, PiiEntity::Email, policy.pattern_confidence);
    push_all(&p.id, PiiEntity::Id, policy.pattern_confidence);
    push_all(&p.phone, PiiEntity::Phone, policy.pattern_confidence);
    push_all(&p.address, PiiEntity::Address, policy.pattern_confidence);
    if let Some(re) = dictionary_regex(&policy.addresses) {
        push_all(&re, PiiEntity::Address, policy.dictionary_confidence);
    }
    if let Some(re) = dictionary_regex(&policy.names) {
        push_all(&re, PiiEntity::Name, policy.dictionary_confidence);
    }
    if let Some(re) = dictionary_regex(&policy.custom_terms) {
        push_all(&re, PiiEntity::Custom, policy.dictionary_confidence);
    }

    let rank = |e: PiiEntity| match e {
        PiiEntity::Email => 0,
        PiiEntity::Id => 1,
        PiiEntity::Phone => 2,
        PiiEntity::Address => 3,
        PiiEntity::Name => 4,
        PiiEntity::Custom => 5,
    };
    candidates.sort_by(|a, b| {
        rank(a.0)
            .cmp(&rank(b.0))
            .then(a.1.cmp(&b.1))
            .then((b.2 - b.1).cmp(&(a.2 - a.1)))
    });
    let mut accepted: Vec<(PiiEntity, usize, usize, f64)> = Vec::new();
    for c in candidates {
        if c.2 > c.1 && accepted.iter().all(|a| c.2 <= a.1 || a.2 <= c.1) {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|a| (a.1, a.2));

    let char_index = |byte: usize| text[..byte].chars().count();
    let mut hits = Vec::new();
    for (ent, bs, be, conf) in accepted {
        let covered: Vec<&WordSpan> = spans
            .iter()
            .filter(|w| w.byte_start < be && bs < w.byte_end)
            .collect();
        let (Some(first), Some(last)) = (covered.first(), covered.last()) else {
            continue;
        };
        let w0 = &segments[first.seg].words[first.word];
        let w1 = &segments[last.seg].words[last.word];
        let (t_start, t_end) = (w0.t_start, w1.t_end.max(w0.t_start));
        hits.push(PiiHit {
            entity_type: ent,
            char_start: char_index(bs),
            char_end: char_index(be),
            text: text[bs..be].to_string(),
            speaker: segments[first.seg].speaker.clone(),
            t_start,
            t_end,
            confidence: conf,
            redaction_plan: RedactionWindow {
                plan: policy.default_plan,
                t_start: (t_start - policy.pad_s).max(0.0),
                t_end: t_end + policy.pad_s,
            },
        });
    }
    Ok(hits)
}

/// URI of the audio snippet for the `n`-th hit.
pub fn snippet_uri(n: usize) -> String {
    format!("audio/pii/pii_{n:04}.wav")
}

/// One `pii` evidence item per (hit, clip) overlap on `view`, spanning the
/// padded redaction window. Matched text is not copied into the payload.
pub fn pii_items(hits: &[PiiHit], clips: &[ClipRecord], view: View) -> Vec<EvidenceItem> {
    let mut out = Vec::new();
    for (n, h) in hits.iter().enumerate() {
        let w = &h.redaction_plan;
        for (clip, t0, t1) in clip_overlaps(clips, view, w.t_start, w.t_end) {
            let mut payload = Map::new();
            payload.insert("entity_type".into(), json!(h.entity_type));
            payload.insert("char_start".into(), json!(h.char_start));
            payload.insert("char_end".into(), json!(h.char_end));
            payload.insert("speaker".into(), json!(h.speaker));
            out.push(EvidenceItem {
                item_id: String::new(),
                clip_id: clip.clip_id.clone(),
                view,
                class: EvidenceClass::Pii,
                t_start: t0,
                t_end: t1,
                confidence: h.confidence,
                geometry: None,
                payload,
                evidence_uris: vec![snippet_uri(n)],
                suggested_action: match w.plan {
                    RedactionPlanKind::MuteWindow => SuggestedAction::Mute,
                    RedactionPlanKind::ToneReplace => SuggestedAction::ToneReplace,
                    RedactionPlanKind::TextOverlay => SuggestedAction::TextOverlay,
                },
            });
        }
    }
    out
}
