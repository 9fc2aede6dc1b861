// SPDX-License-Identifier: Apache-2.0

//! File names inside a session working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gaze_core::canonical::{canonical_digest, sha256_hex};

pub const VIEWS: &str = "views";
pub const AUDIO: &str = "audio.wav";
pub const LEDGER: &str = "ledger.json";
pub const CLIPS: &str = "clips.jsonl";
pub const DETECT: &str = "detect";
pub const EVIDENCE: &str = "detect/evidence.jsonl";
pub const TIMELINE: &str = "timeline.jsonl";
pub const SKIPS: &str = "skips.jsonl";
pub const SUPPRESSED: &str = "suppressed.jsonl";
pub const POLICY: &str = "policy.json";
pub const REVIEW: &str = "review";
pub const AUDIT: &str = "review/audit.jsonl";
pub const FINAL_LABELS: &str = "review/final_labels.jsonl";
pub const QA: &str = "review/qa.json";
pub const QUESTIONNAIRE: &str = "review/questionnaire.json";
pub const REVIEW_LOG: &str = "review_log.jsonl";
pub const DELIVERABLE: &str = "deliverable";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const STATUS: &str = "status.json";

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Content digest of a file, or of a directory tree as the canonical digest
/// of its sorted `(relative path, sha256)` pairs. Missing paths digest to
/// `"missing"`.
pub fn path_digest(path: &Path) -> std::io::Result<String> {
    if path.is_file() {
        return Ok(sha256_hex(&std::fs::read(path)?));
    }
    if !path.is_dir() {
        return Ok("missing".into());
    }
    let mut files = Vec::new();
    collect(path, path, &mut files)?;
    let mut pairs = BTreeMap::new();
    for f in files {
        let rel = f
            .strip_prefix(path)
            .unwrap_or(&f)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        pairs.insert(rel, sha256_hex(&std::fs::read(&f)?));
    }
    Ok(canonical_digest(&pairs).expect("string map serializes"))
}

/// Writes into `<dst>.partial` via `fill`, then swaps it into place, so a
/// failed stage never leaves a half-written directory at `dst`.
pub fn replace_dir<F>(dst: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&Path) -> anyhow::Result<()>,
{
    let mut name = dst.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = dst.with_file_name(name);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    fill(&tmp)?;
    if dst.exists() {
        std::fs::remove_dir_all(dst)?;
    }
    std::fs::rename(&tmp, dst)?;
    Ok(())
}
