// SPDX-License-Identifier: Apache-2.0

//! Content-addressed ingest and the per-session ledger.
//!
//! Store layout under the store root:
//!
//! ```text
//! objects/<hash[0:2]>/<hash>        raw bytes, keyed by SHA-256
//! manifests/<asset_id>.json         AssetManifest
//! sessions/<session_id>/session.json
//! sessions/<session_id>/assets.json sorted asset ids ingested for the session
//! sessions/<session_id>/ledger.json sealed SessionLedger
//! ```
//!
//! Re-ingesting identical bytes is a no-op that returns the stored manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{canonical_digest, is_hex_digest};
use crate::clock::Clock;
use crate::io::{read_json, write_json};

/// Stage names that receive provenance placeholders when a ledger is sealed.
pub const PROVENANCE_MODULES: &[&str] = &[
    "projection",
    "segmenter",
    "detectors",
    "fusion",
    "review",
    "export",
];

pub const PENDING_VERSION: &str = "pending";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("session {0} has no journal with consent_ack = true")]
    ConsentMissing(String),
    #[error("session {0} has no ingested assets")]
    EmptySession(String),
    #[error("invalid journal: {0}")]
    InvalidJournal(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("ledger digest mismatch: stored {stored}, recomputed {recomputed}")]
    DigestMismatch { stored: String, recomputed: String },
    #[error("ledger entries are not sorted by asset_id")]
    Unsorted,
    #[error("provenance entry for {0} was removed")]
    ProvenanceRemoved(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    VideoRasterBundle,
    AudioPcm,
    Journal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetManifest {
    pub asset_id: String,
    pub content_hash: String,
    pub byte_size: u64,
    pub mtime: DateTime<Utc>,
    pub media_kind: MediaKind,
    pub ingest_time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionJournal {
    pub session_id: String,
    #[serde(default)]
    pub free_text_notes: String,
    pub device_id: String,
    pub frame_rate: f64,
    #[serde(default)]
    pub lens_model: Option<String>,
    #[serde(default)]
    pub local_clock_offset: f64,
    pub consent_ack: bool,
    /// Battery, temperature, dropped-frame counters and the like; stored as-is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_logs: Option<serde_json::Value>,
}

impl SessionJournal {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.session_id.is_empty() || self.session_id.contains(['/', '\\']) {
            return Err(IngestError::InvalidJournal(format!(
                "bad session_id {:?}",
                self.session_id
            )));
        }
        if !(self.frame_rate > 0.0) {
            return Err(IngestError::InvalidJournal(format!(
                "frame_rate must be > 0, got {}",
                self.frame_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub asset_id: String,
    pub content_hash: String,
    pub byte_size: u64,
    pub mtime: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceEntry {
    pub version: String,
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLedger {
    pub session_id: String,
    pub entries: Vec<LedgerEntry>,
    pub ledger_digest: String,
    pub pipeline_provenance: BTreeMap<String, ProvenanceEntry>,
}

impl SessionLedger {
    pub fn seal(session_id: &str, mut entries: Vec<LedgerEntry>) -> Self {
        entries.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
        entries.dedup_by(|a, b| a.asset_id == b.asset_id);
        let ledger_digest = digest_entries(&entries);
        let pipeline_provenance = PROVENANCE_MODULES
            .iter()
            .map(|m| {
                (
                    m.to_string(),
                    ProvenanceEntry {
                        version: PENDING_VERSION.into(),
                        thresholds: BTreeMap::new(),
                    },
                )
            })
            .collect();
        Self {
            session_id: session_id.to_string(),
            entries,
            ledger_digest,
            pipeline_provenance,
        }
    }

    pub fn verify(&self) -> Result<(), LedgerError> {
        if self.entries.windows(2).any(|w| w[0].asset_id > w[1].asset_id) {
            return Err(LedgerError::Unsorted);
        }
        let recomputed = digest_entries(&self.entries);
        if recomputed != self.ledger_digest {
            return Err(LedgerError::DigestMismatch {
                stored: self.ledger_digest.clone(),
                recomputed,
            });
        }
        Ok(())
    }

    /// Fills (or refines) the provenance slot for `module`. Entries are never
    /// removed, so the digest over `entries` is unaffected.
    pub fn fill_provenance(
        &mut self,
        module: &str,
        version: impl Into<String>,
        thresholds: BTreeMap<String, f64>,
    ) {
        self.pipeline_provenance.insert(
            module.to_string(),
            ProvenanceEntry {
                version: version.into(),
                thresholds,
            },
        );
    }

    /// Checks that every provenance slot of `earlier` still exists here.
    pub fn check_provenance_superset(&self, earlier: &SessionLedger) -> Result<(), LedgerError> {
        for k in earlier.pipeline_provenance.keys() {
            if !self.pipeline_provenance.contains_key(k) {
                return Err(LedgerError::ProvenanceRemoved(k.clone()));
            }
        }
        Ok(())
    }
}

fn digest_entries(entries: &[LedgerEntry]) -> String {
    canonical_digest(entries).expect("ledger entries always serialize")
}

/// Storage backend for raw asset bytes.
pub trait ObjectStore: Send + Sync {
    /// Stores the file at `staged` under `hash`. Returns `false` if an object
    /// with that hash already existed (the staged file is discarded).
    fn put_staged(&self, hash: &str, staged: tempfile::NamedTempFile) -> std::io::Result<bool>;
    fn get(&self, hash: &str) -> std::io::Result<Vec<u8>>;
    fn contains(&self, hash: &str) -> bool;
    /// Directory used for staging uploads before they are keyed.
    fn staging_dir(&self) -> PathBuf;
}

/// Content-addressed directory tree: `objects/<hash[0:2]>/<hash>`.
#[derive(Debug, Clone)]
pub struct LocalObjectStore {
    root: PathBuf,
}

impl LocalObjectStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn object_path(&self, hash: &str) -> PathBuf {
        self.root.join("objects").join(&hash[..2]).join(hash)
    }
}

impl ObjectStore for LocalObjectStore {
    fn put_staged(&self, hash: &str, staged: tempfile::NamedTempFile) -> std::io::Result<bool> {
        let path = self.object_path(hash);
        if path.exists() {
            return Ok(false);
        }
        fs::create_dir_all(path.parent().expect("object path has a parent"))?;
        match staged.persist_noclobber(&path) {
            Ok(_) => Ok(true),
            // Lost a race with a concurrent writer of the same content.
            Err(e) if path.exists() => {
                drop(e);
                Ok(false)
            }
            Err(e) => Err(e.error),
        }
    }

    fn get(&self, hash: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.object_path(hash))
    }

    fn contains(&self, hash: &str) -> bool {
        self.object_path(hash).exists()
    }

    fn staging_dir(&self) -> PathBuf {
        self.root.join("staging")
    }
}

/// Ingest front end: object store plus manifest and session bookkeeping.
pub struct Ingestor<S: ObjectStore = LocalObjectStore> {
    root: PathBuf,
    store: S,
    clock: Arc<dyn Clock>,
    session_lock: Mutex<()>,
}

impl Ingestor<LocalObjectStore> {
    pub fn local(root: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Self {
        let root = root.into();
        let store = LocalObjectStore::new(root.clone());
        Self::new(root, store, clock)
    }
}

impl<S: ObjectStore> Ingestor<S> {
    pub fn new(root: impl Into<PathBuf>, store: S, clock: Arc<dyn Clock>) -> Self {
        Self {
            root: root.into(),
            store,
            clock,
            session_lock: Mutex::new(()),
        }
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(session_id)
    }

    pub fn manifest_path(&self, asset_id: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{asset_id}.json"))
    }

    pub fn register_session(&self, journal: &SessionJournal) -> Result<(), IngestError> {
        journal.validate()?;
        write_json(
            &self.session_dir(&journal.session_id).join("session.json"),
            journal,
        )?;
        Ok(())
    }

    pub fn journal(&self, session_id: &str) -> Option<SessionJournal> {
        read_json(&self.session_dir(session_id).join("session.json")).ok()
    }

    fn require_consent(&self, session_id: &str) -> Result<(), IngestError> {
        match self.journal(session_id) {
            Some(j) if j.consent_ack => Ok(()),
            _ => Err(IngestError::ConsentMissing(session_id.to_string())),
        }
    }

    /// Streams `reader` into the store. `mtime` defaults to the ingest time.
    pub fn ingest_asset<R: Read>(
        &self,
        mut reader: R,
        media_kind: MediaKind,
        session_id: &str,
        mtime: Option<DateTime<Utc>>,
    ) -> Result<AssetManifest, IngestError> {
        self.require_consent(session_id)?;

        let staging = self.store.staging_dir();
        fs::create_dir_all(&staging)?;
        let mut staged = tempfile::NamedTempFile::new_in(&staging)?;
        let mut hasher = Sha256::new();
        let mut size = 0u64;
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            staged.write_all(&buf[..n])?;
            size += n as u64;
        }
        staged.as_file().sync_all()?;
        let content_hash = hex::encode(hasher.finalize());
        let asset_id = asset_id_for(&content_hash);

        let manifest_path = self.manifest_path(&asset_id);
        self.store.put_staged(&content_hash, staged)?;
        let manifest = match read_json::<AssetManifest>(&manifest_path) {
            Ok(existing) => existing,
            Err(_) => {
                let now = self.clock.now();
                let m = AssetManifest {
                    asset_id: asset_id.clone(),
                    content_hash,
                    byte_size: size,
                    mtime: mtime.unwrap_or(now),
                    media_kind,
                    ingest_time: now,
                };
                write_json(&manifest_path, &m)?;
                m
            }
        };
        self.add_to_session(session_id, &manifest.asset_id)?;
        Ok(manifest)
    }

    /// Ingests a file, taking `mtime` from its filesystem metadata.
    pub fn ingest_file(
        &self,
        path: &Path,
        media_kind: MediaKind,
        session_id: &str,
    ) -> Result<AssetManifest, IngestError> {
        let meta = fs::metadata(path)?;
        let mtime = meta.modified().ok().map(DateTime::<Utc>::from);
        let f = fs::File::open(path)?;
        self.ingest_asset(std::io::BufReader::new(f), media_kind, session_id, mtime)
    }

    fn add_to_session(&self, session_id: &str, asset_id: &str) -> Result<(), IngestError> {
        let _guard = self.session_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.session_dir(session_id).join("assets.json");
        let mut ids: Vec<String> = read_json(&path).unwrap_or_default();
        if let Err(pos) = ids.binary_search_by(|x| x.as_str().cmp(asset_id)) {
            ids.insert(pos, asset_id.to_string());
            write_json(&path, &ids)?;
        }
        Ok(())
    }

    pub fn session_assets(&self, session_id: &str) -> Vec<String> {
        read_json(&self.session_dir(session_id).join("assets.json")).unwrap_or_default()
    }

    pub fn manifest(&self, asset_id: &str) -> Result<AssetManifest, IngestError> {
        Ok(read_json(&self.manifest_path(asset_id))?)
    }

    /// Builds, persists and returns the session ledger.
    pub fn seal_ledger(&self, session_id: &str) -> Result<SessionLedger, IngestError> {
        let ids = self.session_assets(session_id);
        if ids.is_empty() {
            return Err(IngestError::EmptySession(session_id.to_string()));
        }
        let entries = ids
            .iter()
            .map(|id| {
                self.manifest(id).map(|m| LedgerEntry {
                    asset_id: m.asset_id,
                    content_hash: m.content_hash,
                    byte_size: m.byte_size,
                    mtime: m.mtime,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ledger = SessionLedger::seal(session_id, entries);
        write_json(&self.session_dir(session_id).join("ledger.json"), &ledger)?;
        Ok(ledger)
    }
}

/// Asset ids are derived from content so duplicates collapse to one manifest.
pub fn asset_id_for(content_hash: &str) -> String {
    debug_assert!(is_hex_digest(content_hash));
    format!("asset_{}", &content_hash[..16])
}
