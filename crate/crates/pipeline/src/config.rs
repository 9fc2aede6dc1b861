// SPDX-License-Identifier: Apache-2.0

//! Pipeline configuration file (JSON). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use gaze_core::detectors::motion::MotionParams;
use gaze_core::detectors::{ClapParams, PiiPolicy, ReplayParams, TrackerParams};
use gaze_core::export::ExportConfig;
use gaze_core::fusion::FusionPolicy;
use gaze_core::projection::ViewSpec;
use gaze_core::segmenter::SegmenterConfig;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub journal: PathBuf,
    /// Dual-fisheye frame directory (`frames.json` plus PPM frames).
    pub fisheye_dir: PathBuf,
    pub layout: PathBuf,
    #[serde(default)]
    pub audio: Option<PathBuf>,
    /// Pins asset mtimes in the ledger instead of reading the filesystem.
    #[serde(default)]
    pub recorded_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub erp_width: u32,
    pub erp_height: u32,
    pub views: Vec<ViewSpec>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            erp_width: 512,
            erp_height: 256,
            views: ViewSpec::default_four(160, 160),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub replay: ReplayParams,
    pub tracker: TrackerParams,
    pub motion: MotionParams,
    pub clap: ClapParams,
    pub pii: PiiPolicy,
    /// Scripted fixture replayed for captions, tags, NSFW, faces, persons and
    /// the transcript.
    pub scripted_fixture: Option<PathBuf>,
    /// Directory of externally produced `*.jsonl` evidence.
    pub external_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub qa: u64,
    pub bootstrap: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { qa: 7, bootstrap: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub session_id: String,
    pub store_root: PathBuf,
    pub session_dir: PathBuf,
    pub input: InputConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub fusion: FusionPolicy,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_qa_fraction")]
    pub qa_fraction: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub domain: String,
}

fn default_qa_fraction() -> f64 {
    gaze_core::review::qa::DEFAULT_QA_FRACTION
}

fn default_workers() -> usize {
    1
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.store_root);
        resolve(base, &mut self.session_dir);
        resolve(base, &mut self.input.journal);
        resolve(base, &mut self.input.fisheye_dir);
        resolve(base, &mut self.input.layout);
        if let Some(a) = &mut self.input.audio {
            resolve(base, a);
        }
        if let Some(f) = &mut self.detect.scripted_fixture {
            resolve(base, f);
        }
        if let Some(d) = &mut self.detect.external_dir {
            resolve(base, d);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        if self.workers < 1 {
            return bad("workers must be >= 1".into());
        }
        if self.session_id.is_empty() {
            return bad("empty session_id".into());
        }
        let mut required = vec![&self.input.journal, &self.input.fisheye_dir, &self.input.layout];
        required.extend(self.input.audio.iter());
        required.extend(self.detect.scripted_fixture.iter());
        required.extend(self.detect.external_dir.iter());
        for p in required {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.projection.erp_width == 0 || self.projection.erp_height == 0 {
            return bad("empty ERP raster".into());
        }
        for v in &self.projection.views {
            v.validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        }
        self.segmenter.validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        self.detect.tracker.validate().map_err(PipelineError::ConfigInvalid)?;
        self.detect.pii.validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        self.fusion.validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        if !(self.qa_fraction > 0.0 && self.qa_fraction <= 1.0) {
            return bad(format!("qa_fraction {} outside (0, 1]", self.qa_fraction));
        }
        Ok(())
    }
}
