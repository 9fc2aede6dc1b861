// SPDX-License-Identifier: Apache-2.0

//! Metadata and compliance questionnaire completed at the end of review.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YesNo {
    pub video: bool,
    pub audio: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    /// `MM:SS`
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalAnswer {
    pub video: bool,
    pub audio: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiType {
    FullNames,
    Addresses,
    PhoneNumbers,
    Email,
    Financial,
    Photographs,
    IpScreen,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiiAnswer {
    pub video: bool,
    pub audio: bool,
    #[serde(default)]
    pub audio_types: Vec<PiiType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataSection {
    pub domain: YesNo,
    pub activity: YesNo,
    pub specific_activity: YesNo,
    pub participants: YesNo,
    pub room: YesNo,
    pub lighting: YesNo,
    #[serde(default)]
    pub video_comments: String,
    #[serde(default)]
    pub audio_comments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceSection {
    pub signal: YesNo,
    pub pii: PiiAnswer,
    pub copyright: YesNo,
    pub minors: IntervalAnswer,
    pub nudity: IntervalAnswer,
    pub sensitive_topics: YesNo,
    #[serde(default)]
    pub video_comments: String,
    #[serde(default)]
    pub audio_comments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireResponse {
    pub metadata: MetadataSection,
    pub compliance: ComplianceSection,
}

/// Seconds from `MM:SS` (minutes may exceed 59; seconds may not).
pub fn parse_mmss(s: &str) -> Option<u32> {
    let (m, sec) = s.split_once(':')?;
    if m.is_empty() || sec.len() != 2 || !m.bytes().chain(sec.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let (m, sec): (u32, u32) = (m.parse().ok()?, sec.parse().ok()?);
    (sec < 60).then_some(m * 60 + sec)
}

fn check_interval(name: &str, a: &IntervalAnswer) -> Result<(), String> {
    match (&a.interval, a.video) {
        (None, true) => Err(format!("{name}.video is yes but no interval was given")),
        (Some(iv), _) => {
            let s = parse_mmss(&iv.start).ok_or_else(|| format!("{name}.interval.start {:?} is not MM:SS", iv.start))?;
            let e = parse_mmss(&iv.end).ok_or_else(|| format!("{name}.interval.end {:?} is not MM:SS", iv.end))?;
            if s > e {
                return Err(format!("{name}.interval ends before it starts"));
            }
            Ok(())
        }
        (None, false) => Ok(()),
    }
}

impl QuestionnaireResponse {
    pub fn validate(&self) -> Result<(), String> {
        let c = &self.compliance;
        check_interval("minors", &c.minors)?;
        check_interval("nudity", &c.nudity)?;
        if c.pii.audio && c.pii.audio_types.is_empty() {
            return Err("pii.audio is yes but no PII type was selected".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_no_is_valid() {
        QuestionnaireResponse::default().validate().unwrap();
    }

    #[test]
    fn conditional_fields() {
        let mut q = QuestionnaireResponse::default();
        q.compliance.minors.video = true;
        assert!(q.validate().is_err());
        q.compliance.minors.interval = Some(Interval {
            start: "01:30".into(),
            end: "01:10".into(),
        });
        assert!(q.validate().is_err());
        q.compliance.minors.interval = Some(Interval {
            start: "01:10".into(),
            end: "01:30".into(),
        });
        q.validate().unwrap();
        q.compliance.pii.audio = true;
        assert!(q.validate().is_err());
        q.compliance.pii.audio_types.push(PiiType::PhoneNumbers);
        q.validate().unwrap();
    }

    #[test]
    fn mmss() {
        assert_eq!(parse_mmss("00:00"), Some(0));
        assert_eq!(parse_mmss("75:05"), Some(4505));
        assert_eq!(parse_mmss("1:60"), None);
        assert_eq!(parse_mmss("1:5"), None);
        assert_eq!(parse_mmss("ab:cd"), None);
    }
}
