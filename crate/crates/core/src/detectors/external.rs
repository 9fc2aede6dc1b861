// SPDX-License-Identifier: Apache-2.0

//! Adapters for detectors living outside this crate. Both speak the same
//! contract: one [`EvidenceItem`] JSON object per line.

use std::path::Path;
use std::process::{Command, Stdio};

use super::{DetectorError, EvidenceItem};
use crate::io::parse_jsonl;

fn parse_items(text: &str, origin: &str) -> Result<Vec<EvidenceItem>, DetectorError> {
    let items: Vec<EvidenceItem> = parse_jsonl(text)
        .map_err(|(line, e)| DetectorError::SchemaViolation(format!("{origin}:{line}: {e}")))?;
    for it in &items {
        it.validate()?;
    }
    Ok(items)
}

/// Reads every `*.jsonl` file in `dir`, in file-name order.
pub fn load_directory(dir: &Path) -> Result<Vec<EvidenceItem>, DetectorError> {
    let io_err = |e: std::io::Error| DetectorError::External(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(io_err)?;
        out.extend(parse_items(&text, &p.display().to_string())?);
    }
    Ok(out)
}

/// Runs `program args..` with `input` on stdin and parses its stdout.
pub fn run_subprocess(program: &str, args: &[String], input: &str) -> Result<Vec<EvidenceItem>, DetectorError> {
    use std::io::Write;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| DetectorError::External(format!("{program}: {e}")))?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin
            .write_all(input.as_bytes())
            .map_err(|e| DetectorError::External(format!("{program}: {e}")))?;
    }
    let out = child
        .wait_with_output()
        .map_err(|e| DetectorError::External(format!("{program}: {e}")))?;
    if !out.status.success() {
        return Err(DetectorError::External(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    parse_items(&String::from_utf8_lossy(&out.stdout), program)
}
