// SPDX-License-Identifier: Apache-2.0

//! Atomic file writes and canonical JSON-lines helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::canonical::to_canonical_string;

/// Writes `bytes` to `path` via a temporary sibling file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Canonical JSON text of `value` followed by a newline.
pub fn canonical_json_bytes<T: Serialize + ?Sized>(value: &T) -> std::io::Result<Vec<u8>> {
    let mut s = to_canonical_string(value).map_err(std::io::Error::other)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// One canonical JSON object per line.
pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        out.extend(canonical_json_bytes(item)?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    atomic_write(path, &canonical_json_bytes(value)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    atomic_write(path, &jsonl_bytes(items)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
    })
}

/// Parses a JSON-lines file, skipping blank lines. Errors carry the 1-based
/// line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text).map_err(|(line, e)| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}:{line}: {e}", path.display()),
        )
    })
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
